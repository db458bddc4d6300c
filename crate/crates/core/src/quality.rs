//! Participant- and trial-level quality gates.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::features::TrialFeatures;
use crate::ingest::{ParticipantRecord, TrialRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityThresholds {
    /// Participants need strictly more than this share of correct answers.
    pub min_fraction_correct: f64,
    pub min_sample_rate_hz: f64,
    /// Validation accuracy at or below this value (percent) is rejected.
    pub min_accuracy_pct_exclusive: f64,
    pub min_screen_w: f64,
    pub min_screen_h: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        Self {
            min_fraction_correct: 0.5,
            min_sample_rate_hz: 10.0,
            min_accuracy_pct_exclusive: 0.0,
            min_screen_w: 1280.0,
            min_screen_h: 720.0,
        }
    }
}

impl QualityThresholds {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("min_fraction_correct", self.min_fraction_correct),
            ("min_sample_rate_hz", self.min_sample_rate_hz),
            ("min_accuracy_pct_exclusive", self.min_accuracy_pct_exclusive),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [("min_screen_w", self.min_screen_w), ("min_screen_h", self.min_screen_h)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Gates in evaluation order; a participant reports the first one failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectionReason {
    LowCorrectness,
    RecorderError,
    LowSampleRate,
    ZeroAccuracy,
    LowResolution,
}

impl RejectionReason {
    pub const ALL: [RejectionReason; 5] = [
        RejectionReason::LowCorrectness,
        RejectionReason::RecorderError,
        RejectionReason::LowSampleRate,
        RejectionReason::ZeroAccuracy,
        RejectionReason::LowResolution,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RejectionReason::LowCorrectness => "low_correctness",
            RejectionReason::RecorderError => "recorder_error",
            RejectionReason::LowSampleRate => "low_sample_rate",
            RejectionReason::ZeroAccuracy => "zero_accuracy",
            RejectionReason::LowResolution => "low_resolution",
        }
    }
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RejectionReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown rejection reason {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub participant_id: String,
    pub reason: RejectionReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QualityOutcome {
    pub kept: Vec<ParticipantRecord>,
    pub rejected: Vec<Rejection>,
}

impl QualityOutcome {
    pub fn histogram(&self) -> BTreeMap<RejectionReason, usize> {
        let mut h = BTreeMap::new();
        for r in &self.rejected {
            *h.entry(r.reason).or_insert(0) += 1;
        }
        h
    }

    /// One line with the kept count and each reason's share of the initial
    /// cohort, e.g. `kept 6/10; low_correctness 20.00%; ...`.
    pub fn summary_line(&self) -> String {
        let total = self.kept.len() + self.rejected.len();
        let hist = self.histogram();
        let mut parts = vec![format!("kept {}/{}", self.kept.len(), total)];
        for reason in RejectionReason::ALL {
            let n = hist.get(&reason).copied().unwrap_or(0);
            let pct = if total == 0 { 0.0 } else { 100.0 * n as f64 / total as f64 };
            parts.push(format!("{reason} {pct:.2}%"));
        }
        parts.join("; ")
    }
}

fn recorder_ok(p: &ParticipantRecord, trials: &[&TrialRecord]) -> bool {
    let fields_present = p.fraction_correct.is_some()
        && p.reported_sample_rate_hz.is_some()
        && p.validation_accuracy_pct.is_some()
        && p.screen_resolution().is_some();
    let numbers_finite = [
        p.fraction_correct,
        p.reported_sample_rate_hz,
        p.validation_accuracy_pct,
        p.screen_w,
        p.screen_h,
    ]
    .iter()
    .flatten()
    .all(|v| v.is_finite());
    fields_present
        && numbers_finite
        && trials.iter().any(|t| !t.samples.is_empty())
        && trials.iter().all(|t| t.frame.is_valid())
}

/// First gate `p` fails, or `None` when it passes them all.
pub fn first_failed_gate(
    p: &ParticipantRecord,
    trials: &[&TrialRecord],
    th: &QualityThresholds,
) -> Option<RejectionReason> {
    if p.fraction_correct.is_some_and(|f| f <= th.min_fraction_correct) {
        return Some(RejectionReason::LowCorrectness);
    }
    if !recorder_ok(p, trials) {
        return Some(RejectionReason::RecorderError);
    }
    // Past the recorder gate every field below is present.
    if p.reported_sample_rate_hz? < th.min_sample_rate_hz {
        return Some(RejectionReason::LowSampleRate);
    }
    if p.validation_accuracy_pct? <= th.min_accuracy_pct_exclusive {
        return Some(RejectionReason::ZeroAccuracy);
    }
    let (w, h) = p.screen_resolution()?;
    if w < th.min_screen_w || h < th.min_screen_h {
        return Some(RejectionReason::LowResolution);
    }
    None
}

/// Splits the cohort into kept and rejected participants, preserving input
/// order in both.
pub fn filter_participants(
    participants: &[ParticipantRecord],
    trials: &[TrialRecord],
    thresholds: &QualityThresholds,
) -> QualityOutcome {
    let mut by_participant: HashMap<&str, Vec<&TrialRecord>> = HashMap::new();
    for t in trials {
        by_participant.entry(&t.participant_id).or_default().push(t);
    }
    let mut out = QualityOutcome::default();
    for p in participants {
        let own = by_participant.get(p.participant_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        match first_failed_gate(p, own, thresholds) {
            None => out.kept.push(p.clone()),
            Some(reason) => out.rejected.push(Rejection {
                participant_id: p.participant_id.clone(),
                reason,
            }),
        }
    }
    out
}

/// Removes trials without any fixation on the text; returns the survivors
/// and the number dropped.
pub fn drop_empty_trials(trials: Vec<TrialFeatures>) -> (Vec<TrialFeatures>, usize) {
    let before = trials.len();
    let kept: Vec<TrialFeatures> = trials.into_iter().filter(|t| t.text_fixations > 0).collect();
    let dropped = before - kept.len();
    (kept, dropped)
}
