use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

use super::{GazeSample, IngestError, ParticipantRecord, StimulusFrame, Task, TrialRecord};

#[derive(Debug, Serialize, Deserialize)]
struct TrialRow {
    #[serde(default, deserialize_with = "opt_id", skip_serializing_if = "Option::is_none")]
    trial_id: Option<String>,
    #[serde(deserialize_with = "id")]
    participant_id: String,
    #[serde(deserialize_with = "id")]
    text_id: String,
    task: String,
    frame: StimulusFrame,
    #[serde(deserialize_with = "id")]
    question_id: String,
    correct: bool,
    trial_ms: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawId {
    Str(String),
    Int(i64),
}

fn id<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(match RawId::deserialize(d)? {
        RawId::Str(s) => s,
        RawId::Int(n) => n.to_string(),
    })
}

fn opt_id<'de, D: Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    Ok(Option::<RawId>::deserialize(d)?.map(|raw| match raw {
        RawId::Str(s) => s,
        RawId::Int(n) => n.to_string(),
    }))
}

fn json_records<T: DeserializeOwned, R: Read>(source: R) -> Result<Vec<(u64, T)>, IngestError> {
    let mut out = Vec::new();
    for (i, text) in BufReader::new(source).lines().enumerate() {
        let line = i as u64 + 1;
        let text = text.map_err(|e| IngestError::Malformed {
            line,
            message: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&text).map_err(|e| {
            if e.is_data() {
                IngestError::Schema(format!("line {line}: {e}"))
            } else {
                IngestError::Malformed {
                    line,
                    message: e.to_string(),
                }
            }
        })?;
        out.push((line, rec));
    }
    Ok(out)
}

/// Reads participant metadata (JSON lines). Missing measurements stay `None`.
pub fn parse_participants<R: Read>(source: R) -> Result<Vec<ParticipantRecord>, IngestError> {
    let records: Vec<(u64, ParticipantRecord)> = json_records(source)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, rec) in records {
        if rec.participant_id.is_empty() {
            return Err(IngestError::Malformed {
                line,
                message: "empty participant id".into(),
            });
        }
        if !seen.insert(rec.participant_id.clone()) {
            return Err(IngestError::Malformed {
                line,
                message: format!("duplicate participant id {:?}", rec.participant_id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_participants<W: Write>(
    mut sink: W,
    participants: &[ParticipantRecord],
) -> std::io::Result<()> {
    for p in participants {
        serde_json::to_writer(&mut sink, p)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads trial metadata (JSON lines). Every trial must reference one of
/// `participants`; samples are left empty for [`attach_samples`].
pub fn parse_trial_meta<R: Read>(
    source: R,
    participants: &[ParticipantRecord],
) -> Result<Vec<TrialRecord>, IngestError> {
    let known: HashSet<&str> = participants
        .iter()
        .map(|p| p.participant_id.as_str())
        .collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, row) in json_records::<TrialRow, _>(source)? {
        let task: Task = row.task.parse().map_err(|value| IngestError::UnknownTask {
            line,
            value,
        })?;
        if !known.contains(row.participant_id.as_str()) {
            return Err(IngestError::DanglingParticipant {
                line,
                participant_id: row.participant_id,
            });
        }
        if !row.frame.is_valid() {
            return Err(IngestError::Malformed {
                line,
                message: "frame must have finite origin and positive size".into(),
            });
        }
        if !(row.trial_ms.is_finite() && row.trial_ms >= 0.0) {
            return Err(IngestError::Malformed {
                line,
                message: "trial_ms must be a non-negative number".into(),
            });
        }
        let trial_id = row
            .trial_id
            .unwrap_or_else(|| TrialRecord::default_id(&row.participant_id, &row.text_id));
        if !seen.insert(trial_id.clone()) {
            return Err(IngestError::DuplicateTrial { line, trial_id });
        }
        out.push(TrialRecord {
            trial_id,
            participant_id: row.participant_id,
            text_id: row.text_id,
            task,
            frame: row.frame,
            samples: Vec::new(),
            question_id: row.question_id,
            answered_correctly: row.correct,
            trial_duration_ms: row.trial_ms,
        });
    }
    Ok(out)
}

pub fn write_trial_meta<W: Write>(mut sink: W, trials: &[TrialRecord]) -> std::io::Result<()> {
    for t in trials {
        let row = TrialRow {
            trial_id: Some(t.trial_id.clone()),
            participant_id: t.participant_id.clone(),
            text_id: t.text_id.clone(),
            task: t.task.to_string(),
            frame: t.frame,
            question_id: t.question_id.clone(),
            correct: t.answered_correctly,
            trial_ms: t.trial_duration_ms,
        };
        serde_json::to_writer(&mut sink, &row)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttachReport {
    /// Samples whose trial id matched no trial.
    pub orphan_samples: usize,
    pub orphan_trial_ids: Vec<String>,
    /// Trials whose last sample lies after the recorded trial duration.
    pub overlong_trials: Vec<String>,
}

/// Moves each sample into the trial it belongs to. Samples keep their input
/// order, which [`super::parse_gaze_log`] already makes temporal.
pub fn attach_samples(
    mut trials: Vec<TrialRecord>,
    samples: Vec<(String, GazeSample)>,
) -> (Vec<TrialRecord>, AttachReport) {
    let slot: BTreeMap<String, usize> = trials
        .iter()
        .enumerate()
        .map(|(i, t)| (t.trial_id.clone(), i))
        .collect();
    let mut report = AttachReport::default();
    let mut orphan_ids = std::collections::BTreeSet::new();
    for (trial_id, s) in samples {
        match slot.get(&trial_id) {
            Some(&i) => trials[i].samples.push(s),
            None => {
                report.orphan_samples += 1;
                orphan_ids.insert(trial_id);
            }
        }
    }
    report.orphan_trial_ids = orphan_ids.into_iter().collect();
    report.overlong_trials = trials
        .iter()
        .filter(|t| t.samples.last().is_some_and(|s| s.t > t.trial_duration_ms))
        .map(|t| t.trial_id.clone())
        .collect();
    (trials, report)
}
