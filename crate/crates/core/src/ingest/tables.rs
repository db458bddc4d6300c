//! Derived tables exchanged between pipeline stages. Every table is CSV with
//! a fixed header; floats are written with six significant digits and
//! missing values as `NA`.

use std::io::{Read, Write};
use std::str::FromStr;

use super::{IngestError, Task};
use crate::features::{TrialFeatures, WordFeatures, WordRecord};
use crate::fixation::Fixation;
use crate::numfmt::{parse_opt, sig6, sig6_opt};
use crate::quality::{Rejection, RejectionReason};
use crate::stats::{ComparisonRow, TTestResult};

pub const FIXATION_COLUMNS: [&str; 8] =
    ["trial_id", "fix_index", "x_px", "y_px", "t_ms", "duration_ms", "merged_count", "is_first"];
pub const WORD_COLUMNS: [&str; 6] =
    ["participant_id", "text_id", "token_index", "trt_ms", "nfix", "relative_fixation"];
pub const TRIAL_COLUMNS: [&str; 14] = [
    "participant_id", "text_id", "task", "f1", "f2", "f3", "f4", "f5", "f6", "f7", "avg_in", "avg_out",
    "label", "text_fixations",
];
pub const REJECTION_COLUMNS: [&str; 2] = ["participant_id", "reason"];
pub const GROUND_TRUTH_COLUMNS: [&str; 2] = ["token_index", "scheduled_dwell_ms"];
pub const COMPARISON_COLUMNS: [&str; 7] = ["language", "text_id", "trt_a", "trt_b", "nfix_a", "nfix_b", "rho"];
pub const TTEST_COLUMNS: [&str; 10] = ["task", "feature", "mu1", "mu2", "t", "df", "p", "n1", "n2", "degenerate"];
pub const EVAL_COLUMNS: [&str; 10] = [
    "task", "features", "model", "acc_mean", "acc_std", "f1_mean", "f1_std", "runs", "seeds", "warning",
];

/// Fixations of one trial, in temporal order.
pub type TrialFixations = (String, Vec<Fixation>);

#[derive(Debug, Clone, PartialEq)]
pub struct TTestRow {
    pub task: Task,
    pub result: TTestResult,
}

/// Aggregated classifier scores for one (task, feature set, model) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub task: Task,
    pub features: String,
    pub model: String,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub seeds: Vec<u64>,
    /// Some run ended without reaching the convergence tolerance.
    pub warning: bool,
}

fn bool01(v: bool) -> &'static str {
    if v { "1" } else { "0" }
}

fn write_table<W: Write>(sink: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
}

struct Record {
    line: u64,
    fields: csv::StringRecord,
}

impl Record {
    fn err(&self, message: impl Into<String>) -> IngestError {
        IngestError::Malformed {
            line: self.line,
            message: message.into(),
        }
    }

    fn str(&self, i: usize) -> &str {
        self.fields.get(i).unwrap_or("")
    }

    fn parse<T: FromStr>(&self, i: usize, name: &str) -> Result<T, IngestError> {
        self.str(i)
            .trim()
            .parse()
            .map_err(|_| self.err(format!("invalid {name} {:?}", self.str(i))))
    }

    fn opt(&self, i: usize, name: &str) -> Result<Option<f64>, IngestError> {
        parse_opt(self.str(i)).map_err(|_| self.err(format!("invalid {name} {:?}", self.str(i))))
    }

    fn flag(&self, i: usize, name: &str) -> Result<bool, IngestError> {
        match self.str(i).trim() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(self.err(format!("invalid {name} {other:?}"))),
        }
    }
}

fn read_table<R: Read>(source: R, header: &[&str]) -> Result<Vec<Record>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(source);
    let found = rdr.headers().map_err(|e| IngestError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if found.iter().map(str::trim).ne(header.iter().copied()) {
        return Err(IngestError::Schema(format!(
            "expected header {:?}, found {:?}",
            header.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let fields = rec.map_err(|e| IngestError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = fields.position().map_or(0, |p| p.line());
        out.push(Record { line, fields });
    }
    Ok(out)
}

pub fn write_fixations<W: Write>(sink: W, trials: &[TrialFixations]) -> std::io::Result<()> {
    let rows = trials.iter().flat_map(|(id, fixes)| {
        fixes.iter().enumerate().map(move |(i, f)| {
            vec![
                id.clone(),
                i.to_string(),
                sig6(f.x),
                sig6(f.y),
                sig6(f.t),
                sig6(f.duration_ms),
                f.merged_count.to_string(),
                bool01(f.is_first).into(),
            ]
        })
    });
    write_table(sink, &FIXATION_COLUMNS, rows)
}

/// Reads a fixation table; rows of one trial must be contiguous and their
/// indices consecutive from 0.
pub fn read_fixations<R: Read>(source: R) -> Result<Vec<TrialFixations>, IngestError> {
    let mut out: Vec<TrialFixations> = Vec::new();
    for r in read_table(source, &FIXATION_COLUMNS)? {
        let id = r.str(0).to_string();
        let index: usize = r.parse(1, "fix_index")?;
        let fix = Fixation {
            x: r.parse(2, "x_px")?,
            y: r.parse(3, "y_px")?,
            t: r.parse(4, "t_ms")?,
            duration_ms: r.parse(5, "duration_ms")?,
            merged_count: r.parse(6, "merged_count")?,
            is_first: r.flag(7, "is_first")?,
        };
        match out.last_mut() {
            Some((last, fixes)) if *last == id => {
                if index != fixes.len() {
                    return Err(r.err(format!("fix_index {index} out of sequence")));
                }
                fixes.push(fix);
            }
            _ => {
                if out.iter().any(|(t, _)| *t == id) {
                    return Err(r.err(format!("rows of trial {id:?} are not contiguous")));
                }
                if index != 0 {
                    return Err(r.err(format!("trial {id:?} starts at fix_index {index}")));
                }
                out.push((id, vec![fix]));
            }
        }
    }
    Ok(out)
}

pub fn write_word_features<W: Write>(sink: W, records: &[WordRecord]) -> std::io::Result<()> {
    let rows = records.iter().map(|r| {
        vec![
            r.participant_id.clone(),
            r.text_id.clone(),
            r.features.token_index.to_string(),
            sig6(r.features.trt_ms),
            r.features.nfix.to_string(),
            sig6_opt(r.features.relative_fixation),
        ]
    });
    write_table(sink, &WORD_COLUMNS, rows)
}

pub fn read_word_features<R: Read>(source: R) -> Result<Vec<WordRecord>, IngestError> {
    read_table(source, &WORD_COLUMNS)?
        .into_iter()
        .map(|r| {
            Ok(WordRecord {
                participant_id: r.str(0).to_string(),
                text_id: r.str(1).to_string(),
                features: WordFeatures {
                    token_index: r.parse(2, "token_index")?,
                    trt_ms: r.parse(3, "trt_ms")?,
                    nfix: r.parse(4, "nfix")?,
                    relative_fixation: r.opt(5, "relative_fixation")?,
                },
            })
        })
        .collect()
}

pub fn write_trial_features<W: Write>(sink: W, rows: &[TrialFeatures]) -> std::io::Result<()> {
    let rows = rows.iter().map(|f| {
        let mut v = vec![f.participant_id.clone(), f.text_id.clone(), f.task.to_string()];
        v.extend(f.numbered().iter().map(|(_, x)| sig6_opt(*x)));
        v.push(sig6_opt(f.avg_word_trt_in_target_ms));
        v.push(sig6_opt(f.avg_word_trt_out_target_ms));
        v.push(bool01(f.label).into());
        v.push(f.text_fixations.to_string());
        v
    });
    write_table(sink, &TRIAL_COLUMNS, rows)
}

pub fn read_trial_features<R: Read>(source: R) -> Result<Vec<TrialFeatures>, IngestError> {
    read_table(source, &TRIAL_COLUMNS)?
        .into_iter()
        .map(|r| {
            let task: Task = r.str(2).parse().map_err(|_| IngestError::UnknownTask {
                line: r.line,
                value: r.str(2).to_string(),
            })?;
            let count = |i: usize, name: &str| -> Result<usize, IngestError> {
                let v: f64 = r.parse(i, name)?;
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(r.err(format!("{name} must be a count, got {v}")))
                }
            };
            let required = |i: usize, name: &str| -> Result<f64, IngestError> { r.parse(i, name) };
            Ok(TrialFeatures {
                participant_id: r.str(0).to_string(),
                text_id: r.str(1).to_string(),
                task,
                fix_on_target: count(3, "f1")?,
                total_fixations: count(4, "f2")?,
                target_total_ratio: r.opt(5, "f3")?,
                trt_text_ms: required(6, "f4")?,
                trt_target_ms: required(7, "f5")?,
                trt_target_text_ratio: r.opt(8, "f6")?,
                trial_time_ms: required(9, "f7")?,
                avg_word_trt_in_target_ms: r.opt(10, "avg_in")?,
                avg_word_trt_out_target_ms: r.opt(11, "avg_out")?,
                label: r.flag(12, "label")?,
                text_fixations: r.parse(13, "text_fixations")?,
            })
        })
        .collect()
}

pub fn write_rejections<W: Write>(sink: W, rejections: &[Rejection]) -> std::io::Result<()> {
    let rows = rejections
        .iter()
        .map(|r| vec![r.participant_id.clone(), r.reason.to_string()]);
    write_table(sink, &REJECTION_COLUMNS, rows)
}

pub fn read_rejections<R: Read>(source: R) -> Result<Vec<Rejection>, IngestError> {
    read_table(source, &REJECTION_COLUMNS)?
        .into_iter()
        .map(|r| {
            Ok(Rejection {
                participant_id: r.str(0).to_string(),
                reason: r.str(1).parse::<RejectionReason>().map_err(|m| r.err(m))?,
            })
        })
        .collect()
}

pub fn write_ground_truth<W: Write>(sink: W, dwell: &[(usize, f64)]) -> std::io::Result<()> {
    let rows = dwell.iter().map(|(t, d)| vec![t.to_string(), sig6(*d)]);
    write_table(sink, &GROUND_TRUTH_COLUMNS, rows)
}

pub fn read_ground_truth<R: Read>(source: R) -> Result<Vec<(usize, f64)>, IngestError> {
    read_table(source, &GROUND_TRUTH_COLUMNS)?
        .into_iter()
        .map(|r| Ok((r.parse(0, "token_index")?, r.parse(1, "scheduled_dwell_ms")?)))
        .collect()
}

pub fn write_comparison<W: Write>(sink: W, rows: &[ComparisonRow]) -> std::io::Result<()> {
    let rows = rows.iter().map(|c| {
        vec![
            c.language.clone(),
            c.text_id.clone(),
            sig6_opt(c.trt_a),
            sig6_opt(c.trt_b),
            sig6_opt(c.nfix_a),
            sig6_opt(c.nfix_b),
            sig6_opt(c.rho),
        ]
    });
    write_table(sink, &COMPARISON_COLUMNS, rows)
}

pub fn read_comparison<R: Read>(source: R) -> Result<Vec<ComparisonRow>, IngestError> {
    read_table(source, &COMPARISON_COLUMNS)?
        .into_iter()
        .map(|r| {
            Ok(ComparisonRow {
                language: r.str(0).to_string(),
                text_id: r.str(1).to_string(),
                trt_a: r.opt(2, "trt_a")?,
                trt_b: r.opt(3, "trt_b")?,
                nfix_a: r.opt(4, "nfix_a")?,
                nfix_b: r.opt(5, "nfix_b")?,
                rho: r.opt(6, "rho")?,
            })
        })
        .collect()
}

pub fn write_ttests<W: Write>(sink: W, rows: &[TTestRow]) -> std::io::Result<()> {
    let rows = rows.iter().map(|row| {
        let r = &row.result;
        vec![
            row.task.to_string(),
            r.feature.clone(),
            sig6(r.mean1),
            sig6(r.mean2),
            sig6(r.t),
            sig6(r.df),
            sig6(r.p),
            r.n1.to_string(),
            r.n2.to_string(),
            bool01(r.degenerate).into(),
        ]
    });
    write_table(sink, &TTEST_COLUMNS, rows)
}

pub fn read_ttests<R: Read>(source: R) -> Result<Vec<TTestRow>, IngestError> {
    read_table(source, &TTEST_COLUMNS)?
        .into_iter()
        .map(|r| {
            let task = r.str(0).parse().map_err(|_| IngestError::UnknownTask {
                line: r.line,
                value: r.str(0).to_string(),
            })?;
            Ok(TTestRow {
                task,
                result: TTestResult {
                    feature: r.str(1).to_string(),
                    mean1: r.parse(2, "mu1")?,
                    mean2: r.parse(3, "mu2")?,
                    t: r.parse(4, "t")?,
                    df: r.parse(5, "df")?,
                    p: r.parse(6, "p")?,
                    n1: r.parse(7, "n1")?,
                    n2: r.parse(8, "n2")?,
                    degenerate: r.flag(9, "degenerate")?,
                },
            })
        })
        .collect()
}

pub fn write_eval<W: Write>(sink: W, rows: &[EvalRow]) -> std::io::Result<()> {
    let rows = rows.iter().map(|e| {
        vec![
            e.task.to_string(),
            e.features.clone(),
            e.model.clone(),
            sig6(e.acc_mean),
            sig6(e.acc_std),
            sig6(e.f1_mean),
            sig6(e.f1_std),
            e.seeds.len().to_string(),
            e.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "),
            bool01(e.warning).into(),
        ]
    });
    write_table(sink, &EVAL_COLUMNS, rows)
}

pub fn read_eval<R: Read>(source: R) -> Result<Vec<EvalRow>, IngestError> {
    read_table(source, &EVAL_COLUMNS)?
        .into_iter()
        .map(|r| {
            let task = r.str(0).parse().map_err(|_| IngestError::UnknownTask {
                line: r.line,
                value: r.str(0).to_string(),
            })?;
            let seeds = r
                .str(8)
                .split_whitespace()
                .map(|s| s.parse::<u64>().map_err(|_| r.err(format!("invalid seed {s:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let runs: usize = r.parse(7, "runs")?;
            if runs != seeds.len() {
                return Err(r.err(format!("runs is {runs} but {} seeds are listed", seeds.len())));
            }
            Ok(EvalRow {
                task,
                features: r.str(1).to_string(),
                model: r.str(2).to_string(),
                acc_mean: r.parse(3, "acc_mean")?,
                acc_std: r.parse(4, "acc_std")?,
                f1_mean: r.parse(5, "f1_mean")?,
                f1_std: r.parse(6, "f1_std")?,
                seeds,
                warning: r.flag(9, "warning")?,
            })
        })
        .collect()
}
