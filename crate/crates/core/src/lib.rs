//! Webcam gaze-reading pipeline: ingest raw gaze logs, filter participants,
//! merge samples into fixations, map them onto word boxes, derive reading
//! measures and analyse them.

pub mod aoi;
pub mod classify;
pub mod cli;
pub mod features;
pub mod fixation;
pub mod ingest;
pub mod numfmt;
pub mod quality;
pub mod simulate;
pub mod stats;
