//! Word-level reading measures and trial-level gaze features.

use std::collections::{BTreeMap, HashMap};

use crate::aoi::{assign_fixation, TextBoundaries, WordBox};
use crate::fixation::Fixation;
use crate::ingest::{Task, TrialRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct WordFeatures {
    pub token_index: usize,
    /// Total reading time: summed durations of fixations on the word.
    pub trt_ms: f64,
    pub nfix: usize,
    /// Share of the reader's total reading time on this text; `None` when
    /// the reader fixated nothing on the text.
    pub relative_fixation: Option<f64>,
}

/// One row of the word-feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct WordRecord {
    pub participant_id: String,
    pub text_id: String,
    pub features: WordFeatures,
}

/// Trial-level features used for significance tests and classification.
/// Ratios are `None` when their denominator is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFeatures {
    pub participant_id: String,
    pub text_id: String,
    pub task: Task,
    pub fix_on_target: usize,
    pub total_fixations: usize,
    pub target_total_ratio: Option<f64>,
    pub trt_text_ms: f64,
    pub trt_target_ms: f64,
    pub trt_target_text_ratio: Option<f64>,
    pub trial_time_ms: f64,
    pub avg_word_trt_in_target_ms: Option<f64>,
    pub avg_word_trt_out_target_ms: Option<f64>,
    pub label: bool,
    /// Fixations that landed on some word of the text.
    pub text_fixations: usize,
}

impl TrialFeatures {
    /// Names and values of the seven trial features, in table order.
    pub fn numbered(&self) -> [(&'static str, Option<f64>); 7] {
        [
            ("fix_on_target", Some(self.fix_on_target as f64)),
            ("total_fixations", Some(self.total_fixations as f64)),
            ("target_total_ratio", self.target_total_ratio),
            ("trt_text", Some(self.trt_text_ms)),
            ("trt_target", Some(self.trt_target_ms)),
            ("trt_target_text_ratio", self.trt_target_text_ratio),
            ("trial_time", Some(self.trial_time_ms)),
        ]
    }
}

/// TRT and fixation count for every token; fixations outside all boxes are
/// ignored.
pub fn word_features(fixations: &[Fixation], boxes: &[WordBox]) -> Vec<WordFeatures> {
    let mut slot: HashMap<usize, usize> = HashMap::with_capacity(boxes.len());
    let mut out: Vec<WordFeatures> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            slot.insert(b.token_index, i);
            WordFeatures {
                token_index: b.token_index,
                trt_ms: 0.0,
                nfix: 0,
                relative_fixation: None,
            }
        })
        .collect();
    for f in fixations {
        if let Some(token) = assign_fixation(f.x, f.y, boxes) {
            let w = &mut out[slot[&token]];
            w.trt_ms += f.duration_ms;
            w.nfix += 1;
        }
    }
    out.sort_by_key(|w| w.token_index);
    out
}

/// Divides every TRT by the total over the given records (one reader, one
/// text). A zero total leaves every value undefined.
pub fn relative_fixation(mut words: Vec<WordFeatures>) -> Vec<WordFeatures> {
    let total: f64 = words.iter().map(|w| w.trt_ms).sum();
    for w in &mut words {
        w.relative_fixation = (total > 0.0).then(|| w.trt_ms / total);
    }
    words
}

/// Mean TRT over fixated words only.
pub fn mean_trt_fixated<'a>(words: impl IntoIterator<Item = &'a WordFeatures>) -> Option<f64> {
    let (sum, n) = words
        .into_iter()
        .filter(|w| w.trt_ms > 0.0)
        .fold((0.0, 0usize), |(s, n), w| (s + w.trt_ms, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean fixation count over all words, unfixated ones included.
pub fn mean_nfix_all<'a>(words: impl IntoIterator<Item = &'a WordFeatures>) -> Option<f64> {
    let (sum, n) = words
        .into_iter()
        .fold((0usize, 0usize), |(s, n), w| (s + w.nfix, n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

/// Features of one trial. `boxes` must be expanded and carry the target
/// flags of the trial's question.
pub fn trial_features(trial: &TrialRecord, fixations: &[Fixation], boxes: &[WordBox]) -> TrialFeatures {
    let target: HashMap<usize, bool> = boxes.iter().map(|b| (b.token_index, b.is_target)).collect();
    let mut fix_on_target = 0;
    let mut text_fixations = 0;
    let mut trt_text = 0.0;
    let mut trt_target = 0.0;
    for f in fixations {
        if let Some(token) = assign_fixation(f.x, f.y, boxes) {
            text_fixations += 1;
            trt_text += f.duration_ms;
            if target[&token] {
                fix_on_target += 1;
                trt_target += f.duration_ms;
            }
        }
    }

    let words = word_features(fixations, boxes);
    let avg = |in_target: bool| {
        mean_trt_fixated(words.iter().filter(|w| target[&w.token_index] == in_target))
    };
    let total = fixations.len();
    TrialFeatures {
        participant_id: trial.participant_id.clone(),
        text_id: trial.text_id.clone(),
        task: trial.task,
        fix_on_target,
        total_fixations: total,
        target_total_ratio: (total > 0).then(|| fix_on_target as f64 / total as f64),
        trt_text_ms: trt_text,
        trt_target_ms: trt_target,
        trt_target_text_ratio: (trt_text > 0.0).then(|| trt_target / trt_text),
        trial_time_ms: trial.trial_duration_ms,
        avg_word_trt_in_target_ms: avg(true),
        avg_word_trt_out_target_ms: avg(false),
        label: trial.answered_correctly,
        text_fixations,
    }
}

/// Character count of a token without leading or trailing punctuation.
pub fn word_length(token: &str) -> usize {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthBucket {
    pub mean_trt_ms: f64,
    /// Sample standard deviation across tokens (0 for a single token).
    pub std_trt_ms: f64,
    pub tokens: usize,
}

/// Mean TRT per word length. Each token's TRT is first averaged over the
/// readers who fixated it; tokens nobody fixated and pure punctuation are
/// left out. The spread is taken across tokens.
pub fn word_length_curve(records: &[WordRecord], texts: &[TextBoundaries]) -> BTreeMap<usize, LengthBucket> {
    let mut per_token: BTreeMap<(&str, usize), (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.features.trt_ms > 0.0) {
        let e = per_token
            .entry((r.text_id.as_str(), r.features.token_index))
            .or_insert((0.0, 0));
        e.0 += r.features.trt_ms;
        e.1 += 1;
    }
    let lookup: HashMap<(&str, usize), &str> = texts
        .iter()
        .flat_map(|t| t.words.iter().map(move |w| ((t.text_id.as_str(), w.token_index), w.text.as_str())))
        .collect();

    let mut by_len: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (key, (sum, n)) in per_token {
        let Some(token) = lookup.get(&key) else { continue };
        let len = word_length(token);
        if len > 0 {
            by_len.entry(len).or_default().push(sum / n as f64);
        }
    }
    by_len
        .into_iter()
        .map(|(len, v)| {
            let m = crate::stats::Moments::of(&v).expect("bucket is nonempty");
            (
                len,
                LengthBucket {
                    mean_trt_ms: m.mean,
                    std_trt_ms: m.std,
                    tokens: v.len(),
                },
            )
        })
        .collect()
}
