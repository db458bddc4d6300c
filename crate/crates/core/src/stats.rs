//! Rank correlation, independent t-tests, dataset comparison and cohort
//! summaries.

use std::collections::{BTreeMap, BTreeSet};

use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::features::{mean_nfix_all, mean_trt_fixated, relative_fixation, TrialFeatures, WordFeatures, WordRecord};
use crate::ingest::{ParticipantRecord, Task};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} complete pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ranks of one input are constant; correlation is undefined")]
    ConstantInput,
    #[error("each group needs at least 2 finite values (got {0} and {1})")]
    GroupTooSmall(usize, usize),
    #[error("text {text_id}: token sets differ (only in A: {only_a:?}, only in B: {only_b:?})")]
    Misaligned {
        text_id: String,
        only_a: Vec<usize>,
        only_b: Vec<usize>,
    },
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// `n - 1` denominator; 0 for a single value.
    pub std: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Option<Moments> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Moments { n, mean, std })
    }
}

/// Average (fractional) ranks, 1-based; tied values share the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j (0-based) hold ranks i+1..=j.
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks. Pairs where either
/// value is not finite (missing) are dropped first.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    if xs.len() < 3 {
        return Err(StatsError::TooFewPairs {
            needed: 3,
            got: xs.len(),
        });
    }
    pearson(&average_ranks(&xs), &average_ranks(&ys))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceModel {
    /// Student's test with pooled variance.
    #[default]
    Pooled,
    Welch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TTestResult {
    pub feature: String,
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub df: f64,
    /// Mean of the first group (incorrect answers by convention).
    pub mean1: f64,
    pub mean2: f64,
    pub n1: usize,
    pub n2: usize,
    /// Both groups had zero variance; `t` is 0 or infinite and `p` is 1 or 0.
    pub degenerate: bool,
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom, via the
/// regularized incomplete beta function.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Independent two-sample t-test. Non-finite values are ignored.
pub fn independent_t_test(group1: &[f64], group2: &[f64], model: VarianceModel) -> Result<TTestResult, StatsError> {
    let a: Vec<f64> = group1.iter().copied().filter(|v| v.is_finite()).collect();
    let b: Vec<f64> = group2.iter().copied().filter(|v| v.is_finite()).collect();
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::GroupTooSmall(a.len(), b.len()));
    }
    let ma = Moments::of(&a).expect("nonempty");
    let mb = Moments::of(&b).expect("nonempty");
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (ma.std * ma.std, mb.std * mb.std);

    let (se2, df) = match model {
        VarianceModel::Pooled => {
            let df = n1 + n2 - 2.0;
            let pooled = ((n1 - 1.0) * va + (n2 - 1.0) * vb) / df;
            (pooled * (1.0 / n1 + 1.0 / n2), df)
        }
        VarianceModel::Welch => {
            let (qa, qb) = (va / n1, vb / n2);
            let se2 = qa + qb;
            let denom = qa * qa / (n1 - 1.0) + qb * qb / (n2 - 1.0);
            let df = if denom > 0.0 { se2 * se2 / denom } else { n1 + n2 - 2.0 };
            (se2, df)
        }
    };
    let diff = ma.mean - mb.mean;
    let degenerate = se2 == 0.0;
    let (t, p) = if degenerate {
        if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = diff / se2.sqrt();
        (t, t_two_sided_p(t, df))
    };
    Ok(TTestResult {
        feature: String::new(),
        t,
        p,
        df,
        mean1: ma.mean,
        mean2: mb.mean,
        n1: a.len(),
        n2: b.len(),
        degenerate,
    })
}

/// One t-test per trial feature for the trials of `task`, comparing
/// incorrect (group 1) with correct (group 2) answers. Undefined feature
/// values are left out of their test. Features whose groups are too small
/// are skipped.
pub fn feature_ttests(trials: &[TrialFeatures], task: Task, model: VarianceModel) -> Vec<TTestResult> {
    let of_task: Vec<&TrialFeatures> = trials.iter().filter(|t| t.task == task).collect();
    let names = of_task.first().map(|t| t.numbered().map(|(n, _)| n));
    let Some(names) = names else { return Vec::new() };
    let mut out = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let mut wrong = Vec::new();
        let mut right = Vec::new();
        for t in &of_task {
            if let Some(v) = t.numbered()[k].1 {
                if t.label { right.push(v) } else { wrong.push(v) }
            }
        }
        if let Ok(mut r) = independent_t_test(&wrong, &right, model) {
            r.feature = name.to_string();
            out.push(r);
        }
    }
    out
}

/// One row of the dataset comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub language: String,
    pub text_id: String,
    pub trt_a: Option<f64>,
    pub trt_b: Option<f64>,
    pub nfix_a: Option<f64>,
    pub nfix_b: Option<f64>,
    /// Spearman correlation of mean relative fixation per word.
    pub rho: Option<f64>,
}

/// Mean relative fixation per token for one dataset and text. Each reader's
/// relative fixations are computed from their TRTs; readers who fixated
/// nothing are skipped, and tokens nobody fixated are missing (NaN).
fn mean_relative_fixation(records: &[&WordRecord], tokens: &[usize]) -> Vec<f64> {
    let mut by_reader: BTreeMap<&str, Vec<WordFeatures>> = BTreeMap::new();
    for r in records {
        by_reader.entry(&r.participant_id).or_default().push(r.features.clone());
    }
    let mut sum: BTreeMap<usize, (f64, usize, bool)> = tokens.iter().map(|&t| (t, (0.0, 0, false))).collect();
    for words in by_reader.into_values() {
        for w in relative_fixation(words) {
            if let (Some(rf), Some(e)) = (w.relative_fixation, sum.get_mut(&w.token_index)) {
                e.0 += rf;
                e.1 += 1;
                e.2 |= w.trt_ms > 0.0;
            }
        }
    }
    tokens
        .iter()
        .map(|t| match sum[t] {
            (s, n, true) => s / n as f64,
            _ => f64::NAN,
        })
        .collect()
}

fn group_by_text(records: &[WordRecord]) -> BTreeMap<String, Vec<&WordRecord>> {
    let mut m: BTreeMap<String, Vec<&WordRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.text_id.clone()).or_default().push(r);
    }
    m
}

/// Compares two word-feature tables text by text. Only texts present in both
/// are compared; their token sets must match.
pub fn compare_datasets(a: &[WordRecord], b: &[WordRecord]) -> Result<Vec<ComparisonRow>, StatsError> {
    let (ga, gb) = (group_by_text(a), group_by_text(b));
    let mut rows = Vec::new();
    for (text_id, ra) in &ga {
        let Some(rb) = gb.get(text_id) else { continue };
        let ta: BTreeSet<usize> = ra.iter().map(|r| r.features.token_index).collect();
        let tb: BTreeSet<usize> = rb.iter().map(|r| r.features.token_index).collect();
        if ta != tb {
            return Err(StatsError::Misaligned {
                text_id: text_id.clone(),
                only_a: ta.difference(&tb).copied().collect(),
                only_b: tb.difference(&ta).copied().collect(),
            });
        }
        let tokens: Vec<usize> = ta.into_iter().collect();
        let rf_a = mean_relative_fixation(ra, &tokens);
        let rf_b = mean_relative_fixation(rb, &tokens);
        rows.push(ComparisonRow {
            language: String::new(),
            text_id: text_id.clone(),
            trt_a: mean_trt_fixated(ra.iter().map(|r| &r.features)),
            trt_b: mean_trt_fixated(rb.iter().map(|r| &r.features)),
            nfix_a: mean_nfix_all(ra.iter().map(|r| &r.features)),
            nfix_b: mean_nfix_all(rb.iter().map(|r| &r.features)),
            rho: spearman(&rf_a, &rf_b).ok(),
        });
    }
    Ok(rows)
}

/// Five-number summary with linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Quartiles> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Quartiles {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSummary {
    pub participants: usize,
    pub accuracy_pct: Option<Quartiles>,
    pub total_time_ms: Option<Quartiles>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSummary {
    pub participants: usize,
    pub age: Option<Moments>,
    pub sample_rate_hz: Option<Moments>,
    pub by_language: BTreeMap<String, LanguageSummary>,
}

/// Descriptive statistics of a (filtered) cohort. Missing values are left
/// out of the statistic they belong to.
pub fn cohort_summary(participants: &[ParticipantRecord]) -> CohortSummary {
    let collect = |f: &dyn Fn(&ParticipantRecord) -> Option<f64>, ps: &[&ParticipantRecord]| -> Vec<f64> {
        ps.iter().filter_map(|p| f(p)).filter(|v| v.is_finite()).collect()
    };
    let all: Vec<&ParticipantRecord> = participants.iter().collect();
    let mut langs: BTreeMap<String, Vec<&ParticipantRecord>> = BTreeMap::new();
    for p in participants {
        langs
            .entry(p.language.clone().unwrap_or_else(|| "unknown".into()))
            .or_default()
            .push(p);
    }
    CohortSummary {
        participants: participants.len(),
        age: Moments::of(&collect(&|p| p.age, &all)),
        sample_rate_hz: Moments::of(&collect(&|p| p.reported_sample_rate_hz, &all)),
        by_language: langs
            .into_iter()
            .map(|(lang, ps)| {
                let summary = LanguageSummary {
                    participants: ps.len(),
                    accuracy_pct: Quartiles::of(&collect(&|p| p.validation_accuracy_pct, &ps)),
                    total_time_ms: Quartiles::of(&collect(&|p| p.total_experiment_ms, &ps)),
                };
                (lang, summary)
            })
            .collect(),
    }
}
