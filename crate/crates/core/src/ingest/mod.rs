//! Parsing of raw recordings and metadata into the domain model, plus the
//! writers and readers for every table the pipeline exchanges on disk.
//!
//! Gaze logs are CSV (`trial_id,t_ms,x_px,y_px`) or JSON lines with the same
//! keys. Trial and participant metadata are JSON lines, one record per line.

mod gaze;
mod meta;
pub mod tables;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gaze::{parse_gaze_log, write_gaze_log, GazeLogFormat, ParsedGazeLog};
pub use meta::{
    attach_samples, parse_participants, parse_trial_meta, write_participants, write_trial_meta,
    AttachReport,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("line {line}: unknown task {value:?} (expected NR or IS)")]
    UnknownTask { line: u64, value: String },
    #[error("line {line}: trial references unknown participant {participant_id:?}")]
    DanglingParticipant { line: u64, participant_id: String },
    #[error("line {line}: duplicate trial id {trial_id:?}")]
    DuplicateTrial { line: u64, trial_id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One gaze estimate: milliseconds since trial start and a pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl GazeSample {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Self { t, x, y }
    }
}

/// Placement of the stimulus image on the participant's screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusFrame {
    #[serde(rename = "x")]
    pub origin_x: f64,
    #[serde(rename = "y")]
    pub origin_y: f64,
    #[serde(rename = "w")]
    pub width: f64,
    #[serde(rename = "h")]
    pub height: f64,
}

impl StimulusFrame {
    /// Native stimulus resolution.
    pub const NATIVE_WIDTH: f64 = 1280.0;
    pub const NATIVE_HEIGHT: f64 = 720.0;

    pub fn new(origin_x: f64, origin_y: f64, width: f64, height: f64) -> Self {
        Self {
            origin_x,
            origin_y,
            width,
            height,
        }
    }

    /// A native-resolution frame placed at `(origin_x, origin_y)`.
    pub fn native_at(origin_x: f64, origin_y: f64) -> Self {
        Self::new(origin_x, origin_y, Self::NATIVE_WIDTH, Self::NATIVE_HEIGHT)
    }

    pub fn is_valid(&self) -> bool {
        self.origin_x.is_finite()
            && self.origin_y.is_finite()
            && self.width.is_finite()
            && self.height.is_finite()
            && self.width > 0.0
            && self.height > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    /// Normal reading: the question follows the text.
    NR,
    /// Information seeking: the question is shown before the text.
    IS,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::NR => "NR",
            Task::IS => "IS",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NR" => Ok(Task::NR),
            "IS" => Ok(Task::IS),
            _ => Err(s.to_string()),
        }
    }
}

/// One participant reading one text.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_id: String,
    pub participant_id: String,
    pub text_id: String,
    pub task: Task,
    pub frame: StimulusFrame,
    pub samples: Vec<GazeSample>,
    pub question_id: String,
    pub answered_correctly: bool,
    pub trial_duration_ms: f64,
}

impl TrialRecord {
    /// Trial id used when the metadata record does not carry one.
    pub fn default_id(participant_id: &str, text_id: &str) -> String {
        format!("{participant_id}:{text_id}")
    }
}

/// Per-participant metadata. Every measurement is optional because recorder
/// failures leave holes; the quality gates treat a hole as a recorder error.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParticipantRecord {
    #[serde(rename = "id")]
    pub participant_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<f64>,
    #[serde(rename = "sample_rate_hz", default, skip_serializing_if = "Option::is_none")]
    pub reported_sample_rate_hz: Option<f64>,
    #[serde(rename = "accuracy_pct", default, skip_serializing_if = "Option::is_none")]
    pub validation_accuracy_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screen_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction_correct: Option<f64>,
    #[serde(rename = "total_ms", default, skip_serializing_if = "Option::is_none")]
    pub total_experiment_ms: Option<f64>,
}

impl ParticipantRecord {
    pub fn screen_resolution(&self) -> Option<(f64, f64)> {
        Some((self.screen_w?, self.screen_h?))
    }
}
