//! Gaze samples to fixations.
//!
//! The pipeline runs in a fixed order: shift screen coordinates into image
//! coordinates, merge samples into fixations with a time window and a radius
//! around an anchor sample, assign durations from consecutive fixation
//! timestamps, drop fixations outside the image (plus a tolerance band), and
//! finally drop fixations shorter than a minimum duration. The very first
//! fixation is exempt from that last step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{GazeSample, StimulusFrame};

#[derive(Debug, Error, PartialEq)]
pub enum FixationError {
    #[error("invalid fixation parameters: {0}")]
    InvalidParams(String),
    #[error("fixation {index} at t={next} precedes its predecessor at t={prev}")]
    NonMonotone { index: usize, prev: f64, next: f64 },
}

/// Which sample's time a merged fixation carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixationTimestamp {
    /// The sample that opened the fixation.
    Anchor,
    /// The last sample absorbed into the fixation.
    #[default]
    LastAbsorbed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixationParams {
    pub window_ms: f64,
    pub radius_px: f64,
    pub bounds_tolerance_px: f64,
    pub min_fix_ms: f64,
    pub timestamp: FixationTimestamp,
}

impl Default for FixationParams {
    fn default() -> Self {
        Self {
            window_ms: 150.0,
            radius_px: 32.0,
            bounds_tolerance_px: 50.0,
            min_fix_ms: 50.0,
            timestamp: FixationTimestamp::LastAbsorbed,
        }
    }
}

impl FixationParams {
    pub fn validate(&self) -> Result<(), FixationError> {
        for (name, v) in [
            ("window_ms", self.window_ms),
            ("radius_px", self.radius_px),
            ("bounds_tolerance_px", self.bounds_tolerance_px),
            ("min_fix_ms", self.min_fix_ms),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(FixationError::InvalidParams(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    /// Centroid in image pixels.
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub duration_ms: f64,
    /// Number of samples merged into this fixation.
    pub merged_count: usize,
    /// Whether this fixation contains the trial's first sample.
    pub is_first: bool,
}

/// Shifts screen coordinates so that the stimulus image's top-left corner
/// becomes the origin.
pub fn normalize(samples: &[GazeSample], frame: &StimulusFrame) -> Vec<GazeSample> {
    samples
        .iter()
        .map(|s| GazeSample::new(s.t, s.x - frame.origin_x, s.y - frame.origin_y))
        .collect()
}

/// Greedy window/radius merge over time-sorted samples.
///
/// Each unconsumed sample opens a fixation and absorbs the following samples
/// while they stay strictly within `radius_px` of it and no more than
/// `window_ms` after it. The first sample that breaks either condition opens
/// the next fixation. Durations are left at zero.
pub fn merge_fixations(samples: &[GazeSample], params: &FixationParams) -> Vec<Fixation> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        let anchor = samples[i];
        let mut end = i + 1;
        while end < samples.len() {
            let s = samples[end];
            let dist = (s.x - anchor.x).hypot(s.y - anchor.y);
            if dist < params.radius_px && s.t - anchor.t <= params.window_ms {
                end += 1;
            } else {
                break;
            }
        }
        let run = &samples[i..end];
        let n = run.len() as f64;
        let x = run.iter().map(|s| s.x).sum::<f64>() / n;
        let y = run.iter().map(|s| s.y).sum::<f64>() / n;
        let t = match params.timestamp {
            FixationTimestamp::Anchor => anchor.t,
            FixationTimestamp::LastAbsorbed => run[run.len() - 1].t,
        };
        out.push(Fixation {
            x,
            y,
            t,
            duration_ms: 0.0,
            merged_count: run.len(),
            is_first: i == 0,
        });
        i = end;
    }
    out
}

/// Sets each duration to the gap since the previous fixation; the first
/// fixation gets zero.
pub fn assign_durations(mut fixations: Vec<Fixation>) -> Result<Vec<Fixation>, FixationError> {
    let mut prev: Option<f64> = None;
    for (index, f) in fixations.iter_mut().enumerate() {
        f.duration_ms = match prev {
            None => 0.0,
            Some(p) if f.t < p => {
                return Err(FixationError::NonMonotone {
                    index,
                    prev: p,
                    next: f.t,
                })
            }
            Some(p) => f.t - p,
        };
        prev = Some(f.t);
    }
    Ok(fixations)
}

/// Keeps fixations inside the image grown by `tolerance` on every side.
pub fn clip_to_frame(
    fixations: Vec<Fixation>,
    frame: &StimulusFrame,
    tolerance: f64,
) -> Vec<Fixation> {
    fixations
        .into_iter()
        .filter(|f| {
            f.x >= -tolerance
                && f.x <= frame.width + tolerance
                && f.y >= -tolerance
                && f.y <= frame.height + tolerance
        })
        .collect()
}

pub fn drop_short(fixations: Vec<Fixation>, min_fix_ms: f64) -> Vec<Fixation> {
    fixations
        .into_iter()
        .filter(|f| f.is_first || f.duration_ms >= min_fix_ms)
        .collect()
}

/// Full per-trial pipeline on raw screen-coordinate samples.
pub fn run_pipeline(
    samples: &[GazeSample],
    frame: &StimulusFrame,
    params: &FixationParams,
) -> Result<Vec<Fixation>, FixationError> {
    params.validate()?;
    let image = normalize(samples, frame);
    let merged = merge_fixations(&image, params);
    let timed = assign_durations(merged)?;
    let clipped = clip_to_frame(timed, frame, params.bounds_tolerance_px);
    Ok(drop_short(clipped, params.min_fix_ms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fix(t: f64, duration_ms: f64, is_first: bool) -> Fixation {
        Fixation {
            x: 0.0,
            y: 0.0,
            t,
            duration_ms,
            merged_count: 1,
            is_first,
        }
    }

    #[test]
    fn defaults() {
        let p = FixationParams::default();
        assert_eq!(p.window_ms, 150.0);
        assert_eq!(p.radius_px, 32.0);
        assert_eq!(p.bounds_tolerance_px, 50.0);
        assert_eq!(p.min_fix_ms, 50.0);
        assert!(p.validate().is_ok());
        let bad = FixationParams {
            radius_px: 0.0,
            ..p
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn normalize_shifts_by_origin() {
        let s = [GazeSample::new(10.0, 500.0, 400.0)];
        let out = normalize(&s, &StimulusFrame::native_at(100.0, 50.0));
        assert_eq!(out, vec![GazeSample::new(10.0, 400.0, 350.0)]);
        assert_eq!(normalize(&s, &StimulusFrame::native_at(0.0, 0.0)), s.to_vec());
    }

    #[test]
    fn merge_single_sample() {
        let out = merge_fixations(&[GazeSample::new(5.0, 3.0, 4.0)], &FixationParams::default());
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].x, out[0].y, out[0].merged_count), (3.0, 4.0, 1));
        assert!(out[0].is_first);
        assert!(merge_fixations(&[], &FixationParams::default()).is_empty());
    }

    #[test]
    fn merge_hand_example() {
        let s = [
            GazeSample::new(0.0, 0.0, 0.0),
            GazeSample::new(40.0, 5.0, 0.0),
            GazeSample::new(80.0, 100.0, 0.0),
        ];
        let out = merge_fixations(&s, &FixationParams::default());
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].x, out[0].y, out[0].merged_count), (2.5, 0.0, 2));
        assert_eq!((out[1].x, out[1].y, out[1].merged_count), (100.0, 0.0, 1));
        assert!(out[0].is_first && !out[1].is_first);
        assert_eq!(out[0].t, 40.0);
        let anchored = FixationParams {
            timestamp: FixationTimestamp::Anchor,
            ..FixationParams::default()
        };
        assert_eq!(merge_fixations(&s, &anchored)[0].t, 0.0);
    }

    #[test]
    fn radius_is_strict_and_window_inclusive() {
        let p = FixationParams::default();
        let on_radius = [GazeSample::new(0.0, 0.0, 0.0), GazeSample::new(10.0, 32.0, 0.0)];
        assert_eq!(merge_fixations(&on_radius, &p).len(), 2);
        let on_window = [GazeSample::new(0.0, 0.0, 0.0), GazeSample::new(150.0, 1.0, 0.0)];
        assert_eq!(merge_fixations(&on_window, &p).len(), 1);
    }

    #[test]
    fn absorption_stops_at_first_violation() {
        // The outlier at index 1 ends the run even though index 2 is close.
        let s = [
            GazeSample::new(0.0, 0.0, 0.0),
            GazeSample::new(40.0, 300.0, 0.0),
            GazeSample::new(80.0, 1.0, 0.0),
        ];
        let out = merge_fixations(&s, &FixationParams::default());
        assert_eq!(out.iter().map(|f| f.merged_count).collect::<Vec<_>>(), [1, 1, 1]);
    }

    #[test]
    fn durations_from_consecutive_times() {
        let out = assign_durations(vec![fix(0.0, 9.0, true), fix(200.0, 9.0, false), fix(450.0, 9.0, false)])
            .unwrap();
        let d: Vec<f64> = out.iter().map(|f| f.duration_ms).collect();
        assert_eq!(d, [0.0, 200.0, 250.0]);
        let single = assign_durations(vec![fix(70.0, 5.0, true)]).unwrap();
        assert_eq!(single[0].duration_ms, 0.0);
        let err = assign_durations(vec![fix(100.0, 0.0, true), fix(50.0, 0.0, false)]).unwrap_err();
        assert_eq!(
            err,
            FixationError::NonMonotone {
                index: 1,
                prev: 100.0,
                next: 50.0
            }
        );
    }

    #[test]
    fn clip_tolerance_band() {
        let frame = StimulusFrame::native_at(0.0, 0.0);
        let mk = |x: f64, y: f64| Fixation { x, y, ..fix(0.0, 0.0, false) };
        let kept = clip_to_frame(vec![mk(-49.0, 10.0), mk(-51.0, 10.0), mk(1330.0, 770.0)], &frame, 50.0);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].x, -49.0);
        assert_eq!(kept[1].x, 1330.0);
    }

    #[test]
    fn drop_short_exempts_first() {
        let out = drop_short(vec![fix(0.0, 0.0, true), fix(40.0, 40.0, false), fix(160.0, 120.0, false)], 50.0);
        let d: Vec<f64> = out.iter().map(|f| f.duration_ms).collect();
        assert_eq!(d, [0.0, 120.0]);
        let long = vec![fix(0.0, 60.0, false), fix(1.0, 50.0, false)];
        assert_eq!(drop_short(long.clone(), 50.0), long);
    }

    #[test]
    fn clip_can_remove_first_fixation() {
        let frame = StimulusFrame::native_at(0.0, 0.0);
        let samples = [
            GazeSample::new(0.0, -500.0, 10.0),
            GazeSample::new(40.0, 100.0, 100.0),
            GazeSample::new(100.0, 300.0, 100.0),
        ];
        let out = run_pipeline(&samples, &frame, &FixationParams::default()).unwrap();
        // The first fixation is off-image; the second (40 ms) is too short and
        // no exemption moves to it. The third lasts 60 ms.
        assert_eq!(out.len(), 1);
        assert!(!out.iter().any(|f| f.is_first));
        assert_eq!(out[0].x, 300.0);
    }

    #[test]
    fn pipeline_empty_and_deterministic() {
        let frame = StimulusFrame::native_at(20.0, 30.0);
        let p = FixationParams::default();
        assert!(run_pipeline(&[], &frame, &p).unwrap().is_empty());
        let samples: Vec<GazeSample> = (0..40)
            .map(|i| GazeSample::new(i as f64 * 40.0, 100.0 + (i / 7) as f64 * 90.0, 200.0))
            .collect();
        assert_eq!(run_pipeline(&samples, &frame, &p), run_pipeline(&samples, &frame, &p));
    }

    #[test]
    fn dwell_is_split_into_window_sized_fixations() {
        // Two 400 ms dwells at 25 Hz, 300 px apart. The 150 ms window caps a
        // fixation at four samples, so each dwell yields several fixations,
        // but the summed durations per dwell stay within one sample period.
        let frame = StimulusFrame::native_at(0.0, 0.0);
        let samples: Vec<GazeSample> = (0..20)
            .map(|i| {
                let x = if i < 10 { 200.0 } else { 500.0 };
                GazeSample::new(i as f64 * 40.0, x, 300.0)
            })
            .collect();
        let out = run_pipeline(&samples, &frame, &FixationParams::default()).unwrap();
        let per_dwell = |x: f64| out.iter().filter(|f| f.x == x).map(|f| f.duration_ms).sum::<f64>();
        assert!(out.len() > 2);
        // The first dwell loses the span of its opening fixation (d_0 = 0).
        assert_eq!(per_dwell(200.0), 360.0 - 120.0);
        assert!((per_dwell(500.0) - 400.0).abs() <= 40.0);

        // A window wide enough to hold a whole dwell gives exactly one
        // fixation per dwell.
        let wide = FixationParams {
            window_ms: 400.0,
            ..FixationParams::default()
        };
        let out = run_pipeline(&samples, &frame, &wide).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].duration_ms, 0.0);
        assert!((out[1].duration_ms - 400.0).abs() <= 40.0);
    }

    #[test]
    fn shrinking_radius_can_reduce_count_on_non_monotone_paths() {
        // Anchor-based greedy runs are not monotone in the radius when the
        // path doubles back: a smaller radius moves the second anchor to a
        // sample that happens to cover the rest of the path.
        let s: Vec<GazeSample> = [0.0, 31.0, 50.0, 10.0]
            .iter()
            .enumerate()
            .map(|(i, &x)| GazeSample::new(i as f64 * 10.0, x, 0.0))
            .collect();
        let with = |radius_px| {
            merge_fixations(
                &s,
                &FixationParams {
                    radius_px,
                    ..FixationParams::default()
                },
            )
            .len()
        };
        assert_eq!(with(32.0), 3);
        assert_eq!(with(30.0), 2);
    }

    fn monotone_path() -> impl Strategy<Value = Vec<GazeSample>> {
        prop::collection::vec((20.0f64..200.0, 0.0f64..60.0), 0..120).prop_map(|steps| {
            let (mut t, mut x) = (0.0, 0.0);
            steps
                .into_iter()
                .map(|(dt, dx)| {
                    t += dt;
                    x += dx;
                    GazeSample::new(t, x, 300.0)
                })
                .collect()
        })
    }

    fn random_path() -> impl Strategy<Value = Vec<GazeSample>> {
        prop::collection::vec((20.0f64..200.0, 0.0f64..1280.0, 0.0f64..720.0, any::<bool>()), 0..150)
            .prop_map(|steps| {
                let mut t = 0.0;
                let mut prev = (640.0, 360.0);
                steps
                    .into_iter()
                    .map(|(dt, x, y, stay)| {
                        t += dt;
                        if stay {
                            prev = (prev.0 + (x - 640.0) / 40.0, prev.1 + (y - 360.0) / 40.0);
                        } else {
                            prev = (x, y);
                        }
                        GazeSample::new(t, prev.0, prev.1)
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn merge_conserves_samples_and_locality(samples in random_path()) {
            let p = FixationParams::default();
            let out = merge_fixations(&samples, &p);
            prop_assert_eq!(out.iter().map(|f| f.merged_count).sum::<usize>(), samples.len());
            let mut start = 0;
            for f in &out {
                let anchor = samples[start];
                prop_assert!((f.x - anchor.x).hypot(f.y - anchor.y) <= p.radius_px);
                prop_assert!(f.merged_count >= 1);
                start += f.merged_count;
            }
            prop_assert_eq!(out.iter().filter(|f| f.is_first).count(), usize::from(!samples.is_empty()));
        }

        #[test]
        fn durations_telescope(samples in random_path()) {
            let merged = merge_fixations(&samples, &FixationParams::default());
            let timed = assign_durations(merged).unwrap();
            if let (Some(first), Some(last)) = (timed.first(), timed.last()) {
                let total: f64 = timed.iter().map(|f| f.duration_ms).sum();
                prop_assert!((total - (last.t - first.t)).abs() < 1e-6);
                prop_assert_eq!(first.duration_ms, 0.0);
            }
            prop_assert!(timed.iter().all(|f| f.duration_ms >= 0.0));
        }

        #[test]
        fn clip_matches_predicate(points in prop::collection::vec((-200.0f64..1480.0, -200.0f64..1480.0), 0..200)) {
            let frame = StimulusFrame::native_at(0.0, 0.0);
            let fixations: Vec<Fixation> = points
                .iter()
                .map(|&(x, y)| Fixation { x, y, ..fix(0.0, 0.0, false) })
                .collect();
            let kept = clip_to_frame(fixations.clone(), &frame, 50.0);
            let want: Vec<Fixation> = fixations
                .into_iter()
                .filter(|f| (-50.0..=1330.0).contains(&f.x) && (-50.0..=770.0).contains(&f.y))
                .collect();
            prop_assert_eq!(kept, want);
        }

        #[test]
        fn drop_short_matches_predicate(durations in prop::collection::vec(0.0f64..200.0, 1..50)) {
            let fixations: Vec<Fixation> = durations
                .iter()
                .enumerate()
                .map(|(i, &d)| fix(i as f64, d, i == 0))
                .collect();
            let kept = drop_short(fixations.clone(), 50.0);
            let want: Vec<Fixation> = fixations
                .into_iter()
                .enumerate()
                .filter(|(i, f)| *i == 0 || f.duration_ms >= 50.0)
                .map(|(_, f)| f)
                .collect();
            prop_assert!(kept[0].is_first);
            prop_assert_eq!(kept, want);
        }

        #[test]
        fn normalize_round_trips(
            samples in prop::collection::vec((0.0f64..1e5, -3000.0f64..3000.0, -3000.0f64..3000.0), 0..1000),
            ox in -500.0f64..500.0,
            oy in -500.0f64..500.0,
        ) {
            let frame = StimulusFrame::native_at(ox, oy);
            let samples: Vec<GazeSample> = samples.into_iter().map(|(t, x, y)| GazeSample::new(t, x, y)).collect();
            let screen: Vec<GazeSample> = samples.iter().map(|s| GazeSample::new(s.t, s.x + ox, s.y + oy)).collect();
            let back = normalize(&screen, &frame);
            for (a, b) in back.iter().zip(&samples) {
                prop_assert_eq!(a.t, b.t);
                prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            }
        }

        #[test]
        fn shrinking_parameters_on_forward_paths_never_merges_more(
            samples in monotone_path(),
            r_small in 5.0f64..32.0,
            w_small in 30.0f64..150.0,
        ) {
            let big = FixationParams::default();
            let small = FixationParams { radius_px: r_small, window_ms: w_small, ..big };
            prop_assert!(merge_fixations(&samples, &small).len() >= merge_fixations(&samples, &big).len());
        }
    }
}
