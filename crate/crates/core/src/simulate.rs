//! Synthetic gaze recordings with known ground truth.
//!
//! A schedule lists which token is looked at and for how long. Samples are
//! taken on a fixed clock starting at 0; each lands at the centre of the raw
//! box of the token being looked at, plus isotropic Gaussian noise.
//! Saccades are instantaneous.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::aoi::{assign_lines, Rect, TargetSpan, TextBoundaries, WordBox};
use crate::features::word_length;
use crate::ingest::{GazeSample, ParticipantRecord, StimulusFrame, Task, TrialRecord};

#[derive(Debug, Error, PartialEq)]
pub enum SimulateError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("scheduled token {0} has no box")]
    UnknownToken(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DwellSchedule {
    /// `(token_index, dwell_ms)` in viewing order; a token may reappear to
    /// model a regression.
    pub dwells: Vec<(usize, f64)>,
    pub rate_hz: f64,
    pub noise_px: f64,
    /// Probability that a sample is lost.
    pub dropout: f64,
}

impl DwellSchedule {
    pub fn new(dwells: Vec<(usize, f64)>, rate_hz: f64, noise_px: f64, dropout: f64) -> Self {
        Self {
            dwells,
            rate_hz,
            noise_px,
            dropout,
        }
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        let bad = |m: String| Err(SimulateError::InvalidSchedule(m));
        if let Some((t, d)) = self.dwells.iter().find(|(_, d)| !(d.is_finite() && *d > 0.0)) {
            return bad(format!("dwell of token {t} must be positive, got {d}"));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return bad(format!("rate must be positive, got {}", self.rate_hz));
        }
        if !(self.noise_px.is_finite() && self.noise_px >= 0.0) {
            return bad(format!("noise must be non-negative, got {}", self.noise_px));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn period_ms(&self) -> f64 {
        1000.0 / self.rate_hz
    }

    pub fn total_ms(&self) -> f64 {
        self.dwells.iter().map(|(_, d)| d).sum()
    }

    /// Summed dwell per token, by token index.
    pub fn ground_truth(&self) -> Vec<(usize, f64)> {
        let mut m: BTreeMap<usize, f64> = BTreeMap::new();
        for &(t, d) in &self.dwells {
            *m.entry(t).or_insert(0.0) += d;
        }
        m.into_iter().collect()
    }
}

/// Samples in screen coordinates, ready for the fixation pipeline.
pub fn generate(
    schedule: &DwellSchedule,
    boxes: &[WordBox],
    frame: &StimulusFrame,
    seed: u64,
) -> Result<Vec<GazeSample>, SimulateError> {
    schedule.validate()?;
    let centers: BTreeMap<usize, (f64, f64)> = boxes.iter().map(|b| (b.token_index, b.raw.center())).collect();
    let mut targets = Vec::with_capacity(schedule.dwells.len());
    let mut end = 0.0;
    for &(token, dwell) in &schedule.dwells {
        let c = *centers.get(&token).ok_or(SimulateError::UnknownToken(token))?;
        end += dwell;
        targets.push((end, c));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, schedule.noise_px).expect("validated sigma");
    let period = schedule.period_ms();
    let mut out = Vec::new();
    let mut k = 0;
    for m in 0u64.. {
        let t = m as f64 * period;
        while k < targets.len() && t >= targets[k].0 {
            k += 1;
        }
        if k == targets.len() {
            break;
        }
        let (cx, cy) = targets[k].1;
        let dx = noise.sample(&mut rng);
        let dy = noise.sample(&mut rng);
        let lost = rng.random::<f64>() < schedule.dropout;
        if !lost {
            out.push(GazeSample::new(t, frame.origin_x + cx + dx, frame.origin_y + cy + dy));
        }
    }
    Ok(out)
}

/// Adds the same shift of length `offset_px`, in a seeded random direction,
/// to every sample.
pub fn degrade(samples: &[GazeSample], offset_px: f64, seed: u64) -> Vec<GazeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (offset_px * angle.cos(), offset_px * angle.sin());
    samples.iter().map(|s| GazeSample::new(s.t, s.x + dx, s.y + dy)).collect()
}

/// Typesetting used by [`layout_text`]: left-aligned lines with fixed word
/// spacing and a fixed advance per character.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Typesetting {
    pub margin_px: f64,
    pub word_spacing_px: f64,
    pub char_width_px: f64,
    pub line_height_px: f64,
    pub box_height_px: f64,
    pub width_px: f64,
}

impl Default for Typesetting {
    fn default() -> Self {
        Self {
            margin_px: 40.0,
            word_spacing_px: 25.0,
            char_width_px: 13.0,
            line_height_px: 72.0,
            box_height_px: 26.0,
            width_px: StimulusFrame::NATIVE_WIDTH,
        }
    }
}

/// Raw word boxes for `text` split on whitespace.
pub fn layout_text(text_id: &str, text: &str, style: &Typesetting) -> TextBoundaries {
    let mut words = Vec::new();
    let (mut x, mut y) = (style.margin_px, style.margin_px);
    for (i, token) in text.split_whitespace().enumerate() {
        let w = token.chars().count() as f64 * style.char_width_px;
        if x > style.margin_px && x + w > style.width_px - style.margin_px {
            x = style.margin_px;
            y += style.line_height_px;
        }
        words.push(WordBox::new(i, token, Rect::new(x, y, w, style.box_height_px)));
        x += w + style.word_spacing_px;
    }
    assign_lines(&mut words);
    TextBoundaries {
        text_id: text_id.to_string(),
        words,
        spans: Vec::new(),
    }
}

/// One pass over all tokens in order, dwelling `dwell(token)` on each.
pub fn reading_schedule(
    text: &TextBoundaries,
    dwell: impl Fn(&WordBox) -> f64,
    rate_hz: f64,
    noise_px: f64,
    dropout: f64,
) -> DwellSchedule {
    DwellSchedule::new(
        text.words.iter().map(|w| (w.token_index, dwell(w))).collect(),
        rate_hz,
        noise_px,
        dropout,
    )
}

/// Dwell used by the demo data: 120 ms plus 30 ms per character.
pub fn demo_dwell(word: &WordBox) -> f64 {
    120.0 + 30.0 * word_length(&word.text) as f64
}

pub const DEMO_TEXT_ID: &str = "DEMO_1";
pub const DEMO_QUESTION_ID: &str = "DEMO_1_q1";
const DEMO_TEXT: &str = "The harbour town grew quickly after the railway arrived in the spring of 1871. \
Fishing boats still left before dawn, but most families now worked in the new canning factory. \
By 1900 the factory shipped tins of sardines to markets across the whole country.";

/// The fixed demo text with one question whose answer is "the new canning
/// factory".
pub fn demo_text() -> TextBoundaries {
    let mut text = layout_text(DEMO_TEXT_ID, DEMO_TEXT, &Typesetting::default());
    let start = text.words.iter().position(|w| w.text == "canning").expect("demo answer") - 2;
    let span = TargetSpan {
        question_id: DEMO_QUESTION_ID.into(),
        first_token: start,
        last_token: start + 3,
    };
    for w in &mut text.words {
        w.is_target = span.covers(w.token_index);
    }
    text.spans.push(span);
    text
}

/// The demo trial: one noisy 25 Hz reading of [`demo_text`] on a stimulus
/// placed at (320, 180).
pub fn demo_trial(seed: u64) -> (TextBoundaries, StimulusFrame, Vec<GazeSample>) {
    let text = demo_text();
    let frame = StimulusFrame::native_at(320.0, 180.0);
    let schedule = reading_schedule(&text, demo_dwell, 25.0, 5.0, 0.0);
    let samples = generate(&schedule, &text.words, &frame, seed).expect("demo schedule is valid");
    (text, frame, samples)
}

/// A simulated study: participants, their trials with attached samples, and
/// the texts read.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub participants: Vec<ParticipantRecord>,
    pub trials: Vec<TrialRecord>,
    pub texts: Vec<TextBoundaries>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortParams {
    pub participants: usize,
    pub rate_hz: f64,
    pub noise_px: f64,
    pub dropout: f64,
    pub offset_px: f64,
}

impl Default for CohortParams {
    fn default() -> Self {
        Self {
            participants: 4,
            rate_hz: 25.0,
            noise_px: 5.0,
            dropout: 0.0,
            offset_px: 0.0,
        }
    }
}

/// Each participant reads the demo text once in each task. Readers who
/// answer wrongly spend longer overall, and reading speed varies between
/// participants by up to +-20%.
pub fn simulate_cohort(params: &CohortParams, seed: u64) -> Result<Cohort, SimulateError> {
    let text = demo_text();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut participants = Vec::new();
    let mut trials = Vec::new();
    for p in 0..params.participants {
        let id = format!("sim{:03}", p + 1);
        let speed = rng.random_range(0.8..1.2);
        let origin = (rng.random_range(0.0..320.0_f64).round(), rng.random_range(0.0..180.0_f64).round());
        let frame = StimulusFrame::native_at(origin.0, origin.1);
        for task in [Task::NR, Task::IS] {
            let correct = rng.random_bool(0.7);
            let slow = if correct { 1.0 } else { 1.3 };
            let schedule = reading_schedule(
                &text,
                |w| demo_dwell(w) * speed * slow,
                params.rate_hz,
                params.noise_px,
                params.dropout,
            );
            let trial_seed = rng.random();
            let samples = generate(&schedule, &text.words, &frame, trial_seed)?;
            let samples = degrade(&samples, params.offset_px, trial_seed ^ 0x5eed);
            let text_id = format!("{}_{}", DEMO_TEXT_ID, task.as_str());
            trials.push(TrialRecord {
                trial_id: TrialRecord::default_id(&id, &text_id),
                participant_id: id.clone(),
                text_id,
                task,
                frame,
                samples,
                question_id: DEMO_QUESTION_ID.into(),
                answered_correctly: correct,
                trial_duration_ms: schedule.total_ms(),
            });
        }
        participants.push(ParticipantRecord {
            participant_id: id,
            language: Some("en".into()),
            age: Some(rng.random_range(20..60) as f64),
            reported_sample_rate_hz: Some(params.rate_hz),
            validation_accuracy_pct: Some(rng.random_range(30.0..95.0_f64).round()),
            screen_w: Some(1920.0),
            screen_h: Some(1080.0),
            fraction_correct: Some(rng.random_range(0.55..1.0)),
            total_experiment_ms: Some(rng.random_range(6.0e5..1.2e6_f64).round()),
        });
    }
    let texts = [Task::NR, Task::IS]
        .into_iter()
        .map(|task| TextBoundaries {
            text_id: format!("{}_{}", DEMO_TEXT_ID, task.as_str()),
            ..text.clone()
        })
        .collect();
    Ok(Cohort {
        participants,
        trials,
        texts,
    })
}
