//! Answer-correctness classification from trial features: seeded split with
//! minority up-sampling, train-only preprocessing, three models, and metrics
//! aggregated over runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::aoi::TextBoundaries;
use crate::features::{word_length, TrialFeatures};
use crate::stats::Moments;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("invalid feature matrix: {0}")]
    BadMatrix(String),
    #[error("a class is missing from the training split (seeds {0} and {1})")]
    MissingClass(u64, u64),
    #[error("number of runs must be at least 1")]
    NoRuns,
    #[error("no boundaries for text {0:?}, needed for text features")]
    MissingText(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureSet {
    /// Gaze features only.
    #[default]
    Et,
    /// Gaze features plus token count and mean token length of the text.
    EtText,
}

impl FeatureSet {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureSet::Et => "et",
            FeatureSet::EtText => "et+text",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "et" => Ok(FeatureSet::Et),
            "et+text" => Ok(FeatureSet::EtText),
            _ => Err(format!("unknown feature set {s:?} (expected et or et+text)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Random,
    Logistic,
    Forest,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Random, ModelKind::Logistic, ModelKind::Forest];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Random => "random",
            ModelKind::Logistic => "logistic",
            ModelKind::Forest => "forest",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rows are trials, `labels[i]` is true for a correct answer. Cells may be
/// missing until imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub labels: Vec<bool>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, rows: Vec<Vec<Option<f64>>>, labels: Vec<bool>) -> Result<Self, ClassifyError> {
        if rows.len() != labels.len() {
            return Err(ClassifyError::BadMatrix(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != names.len()) {
            return Err(ClassifyError::BadMatrix(format!(
                "row {i} has {} cells, expected {}",
                r.len(),
                names.len()
            )));
        }
        if rows.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(ClassifyError::BadMatrix("non-finite cell".into()));
        }
        Ok(Self { names, rows, labels })
    }

    /// Features one to six, average word TRT in and out of the target span,
    /// and for [`FeatureSet::EtText`] the text's token count and mean token
    /// length.
    pub fn from_trials(
        trials: &[TrialFeatures],
        set: FeatureSet,
        texts: &BTreeMap<String, TextBoundaries>,
    ) -> Result<Self, ClassifyError> {
        let mut names: Vec<String> = ["f1", "f2", "f3", "f4", "f5", "f6", "avg_in", "avg_out"]
            .into_iter()
            .map(String::from)
            .collect();
        if set == FeatureSet::EtText {
            names.push("token_count".into());
            names.push("avg_token_length".into());
        }
        let mut rows = Vec::with_capacity(trials.len());
        for t in trials {
            let mut row: Vec<Option<f64>> = t.numbered()[..6].iter().map(|(_, v)| *v).collect();
            row.push(t.avg_word_trt_in_target_ms);
            row.push(t.avg_word_trt_out_target_ms);
            if set == FeatureSet::EtText {
                let text = texts
                    .get(&t.text_id)
                    .ok_or_else(|| ClassifyError::MissingText(t.text_id.clone()))?;
                let n = text.words.len();
                let total: usize = text.words.iter().map(|w| word_length(&w.text)).sum();
                row.push(Some(n as f64));
                row.push((n > 0).then(|| total as f64 / n as f64));
            }
            rows.push(row);
        }
        Self::new(names, rows, trials.iter().map(|t| t.label).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Row indices of one split. `train` is balanced by repeating rows of the
/// smaller class; `test` holds distinct rows never seen in training.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Distinct training rows before up-sampling.
    pub train_distinct: usize,
    pub seed: u64,
}

fn try_split(labels: &[bool], seed: u64) -> Option<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let n_test = (labels.len() as f64 * 0.2).ceil() as usize;
    let test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    let (pos, neg): (Vec<usize>, Vec<usize>) = train.iter().partition(|&&i| labels[i]);
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let train_distinct = train.len();
    let minority = if pos.len() < neg.len() { &pos } else { &neg };
    for _ in 0..pos.len().abs_diff(neg.len()) {
        train.push(minority[rng.random_range(0..minority.len())]);
    }
    Some(Split {
        train,
        test,
        train_distinct,
        seed,
    })
}

/// Seeded 80/20 shuffle split; the training part is up-sampled to equal
/// class counts. A split whose training part lacks a class is retried once
/// with the next seed.
pub fn split_and_balance(labels: &[bool], seed: u64) -> Result<Split, ClassifyError> {
    try_split(labels, seed)
        .or_else(|| try_split(labels, seed.wrapping_add(1)))
        .ok_or(ClassifyError::MissingClass(seed, seed.wrapping_add(1)))
}

/// Median imputation and standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub medians: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

impl Preprocessor {
    /// Medians come from the distinct training rows, means and scales from
    /// the imputed, up-sampled training set. Columns without any observed
    /// value impute 0; constant columns keep scale 1.
    pub fn fit(matrix: &FeatureMatrix, split: &Split) -> Self {
        let d = matrix.names.len();
        let distinct = &split.train[..split.train_distinct];
        let medians: Vec<f64> = (0..d)
            .map(|j| median(distinct.iter().filter_map(|&i| matrix.rows[i][j]).collect()).unwrap_or(0.0))
            .collect();
        let mut means = vec![0.0; d];
        let mut scales = vec![1.0; d];
        for j in 0..d {
            let col: Vec<f64> = split.train.iter().map(|&i| matrix.rows[i][j].unwrap_or(medians[j])).collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            means[j] = mean;
            if var > 0.0 {
                scales[j] = var.sqrt();
            }
        }
        Self { medians, means, scales }
    }

    pub fn transform(&self, row: &[Option<f64>]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, v)| (v.unwrap_or(self.medians[j]) - self.means[j]) / self.scales[j])
            .collect()
    }
}

/// L2-regularized logistic regression. The objective is the mean log loss
/// plus `0.5 * |w|^2 / (c * n)`; the intercept is not penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub const LOGISTIC_TOLERANCE: f64 = 1e-6;
const LOGISTIC_MAX_ITER: usize = 50_000;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Logistic {
    /// Nesterov-accelerated gradient descent with adaptive restart; stops
    /// when the largest gradient component falls below the tolerance.
    pub fn fit(x: &[Vec<f64>], y: &[bool], c: f64) -> Self {
        let n = x.len() as f64;
        let d = x.first().map_or(0, Vec::len);
        let lambda = 1.0 / (c * n);
        // Lipschitz bound of the gradient: 0.25 * ||[X 1]||_F^2 / n + lambda.
        let frob: f64 = x.iter().map(|r| 1.0 + r.iter().map(|v| v * v).sum::<f64>()).sum();
        let step = 1.0 / (0.25 * frob / n + lambda);

        let grad = |theta: &[f64]| -> (Vec<f64>, f64) {
            let mut g = vec![0.0; d + 1];
            let mut loss = 0.0;
            for (row, &label) in x.iter().zip(y) {
                let z = theta[d] + row.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
                let target = if label { 1.0 } else { 0.0 };
                let r = sigmoid(z) - target;
                for (gj, v) in g.iter_mut().zip(row) {
                    *gj += r * v;
                }
                g[d] += r;
                // log(1 + e^z) - target * z, computed stably.
                loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - target * z;
            }
            for gj in g.iter_mut() {
                *gj /= n;
            }
            let mut penalty = 0.0;
            for j in 0..d {
                g[j] += lambda * theta[j];
                penalty += theta[j] * theta[j];
            }
            (g, loss / n + 0.5 * lambda * penalty)
        };

        let mut theta = vec![0.0; d + 1];
        let mut prev = theta.clone();
        let mut momentum = 1.0f64;
        let mut last_loss = f64::INFINITY;
        let mut converged = false;
        let mut iterations = 0;
        for it in 0..LOGISTIC_MAX_ITER {
            iterations = it + 1;
            let (g_here, _) = grad(&theta);
            if g_here.iter().all(|v| v.abs() < LOGISTIC_TOLERANCE) {
                converged = true;
                iterations = it;
                break;
            }
            let next_m = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
            let beta = (momentum - 1.0) / next_m;
            let look: Vec<f64> = theta.iter().zip(&prev).map(|(t, p)| t + beta * (t - p)).collect();
            let (g, _) = grad(&look);
            let candidate: Vec<f64> = look.iter().zip(&g).map(|(t, gj)| t - step * gj).collect();
            let (_, loss) = grad(&candidate);
            if loss > last_loss {
                // Restart momentum from a plain gradient step.
                momentum = 1.0;
                prev = theta.clone();
                theta = theta.iter().zip(&g_here).map(|(t, gj)| t - step * gj).collect();
                last_loss = grad(&theta).1;
                continue;
            }
            prev = std::mem::replace(&mut theta, candidate);
            momentum = next_m;
            last_loss = loss;
        }
        Self {
            weights: theta[..d].to_vec(),
            intercept: theta[d],
            converged,
            iterations,
        }
    }

    pub fn predict(&self, row: &[f64]) -> bool {
        let z = self.intercept + row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
        z > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(bool),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// CART tree with Gini impurity, grown until leaves are pure or no split
/// separates the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    root: Node,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

impl Tree {
    pub fn fit(x: &[Vec<f64>], y: &[bool], rows: &[usize], max_features: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            root: Self::grow(x, y, rows.to_vec(), max_features, rng),
        }
    }

    fn grow(x: &[Vec<f64>], y: &[bool], rows: Vec<usize>, max_features: usize, rng: &mut ChaCha8Rng) -> Node {
        let n = rows.len();
        let pos = rows.iter().filter(|&&i| y[i]).count();
        if pos == 0 || pos == n {
            return Node::Leaf(pos == n);
        }
        let d = x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let parent = gini(pos, n);

        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.clone();
        for &f in features.iter().take(max_features.max(1)) {
            sorted.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
            let mut left_pos = 0;
            for k in 1..n {
                if y[sorted[k - 1]] {
                    left_pos += 1;
                }
                let (lo, hi) = (x[sorted[k - 1]][f], x[sorted[k]][f]);
                if lo == hi {
                    continue;
                }
                let impurity = (k as f64 * gini(left_pos, k) + (n - k) as f64 * gini(pos - left_pos, n - k)) / n as f64;
                if impurity < parent && best.is_none_or(|(b, _, _)| impurity < b) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((impurity, f, threshold));
                }
            }
        }
        match best {
            None => Node::Leaf(2 * pos > n || (2 * pos == n && rng.random())),
            Some((_, feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][feature] <= threshold);
                Node::Split {
                    feature,
                    threshold,
                    left: Box::new(Self::grow(x, y, l, max_features, rng)),
                    right: Box::new(Self::grow(x, y, r, max_features, rng)),
                }
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> bool {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row[*feature] <= *threshold { left } else { right },
            }
        }
    }
}

pub const FOREST_TREES: usize = 100;

/// Bagged CART trees with majority vote; ties go to the negative class.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Each tree draws its bootstrap sample and feature subsets from its own
    /// seed, derived from `seed`, so results do not depend on scheduling.
    pub fn fit(x: &[Vec<f64>], y: &[bool], n_trees: usize, seed: u64) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let max_features = (d as f64).sqrt().ceil() as usize;
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let seeds: Vec<u64> = (0..n_trees).map(|_| master.random()).collect();
        let trees = seeds
            .par_iter()
            .map(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let sample: Vec<usize> = (0..x.len()).map(|_| rng.random_range(0..x.len())).collect();
                Tree::fit(x, y, &sample, max_features, &mut rng)
            })
            .collect();
        Self { trees }
    }

    pub fn predict(&self, row: &[f64]) -> bool {
        let votes = self.trees.iter().filter(|t| t.predict(row)).count();
        2 * votes > self.trees.len()
    }
}

/// Share of correct predictions, in percent.
pub fn accuracy(predictions: &[bool], labels: &[bool]) -> f64 {
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * hits as f64 / labels.len() as f64
}

/// Per-class F1 weighted by class support in `labels`, in percent. A class
/// with no support contributes nothing.
pub fn weighted_f1(predictions: &[bool], labels: &[bool]) -> f64 {
    let n = labels.len() as f64;
    let mut total = 0.0;
    for class in [false, true] {
        let tp = predictions.iter().zip(labels).filter(|(p, l)| **p == class && **l == class).count() as f64;
        let predicted = predictions.iter().filter(|p| **p == class).count() as f64;
        let support = labels.iter().filter(|l| **l == class).count() as f64;
        if support == 0.0 {
            continue;
        }
        let f1 = if predicted + support > 0.0 { 2.0 * tp / (predicted + support) } else { 0.0 };
        total += f1 * support / n;
    }
    100.0 * total
}

/// Scores of one model in one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunScore {
    pub seed: u64,
    pub accuracy: f64,
    pub f1: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: ModelKind,
    pub runs: Vec<RunScore>,
    pub accuracy: Moments,
    pub f1: Moments,
}

impl EvalReport {
    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }

    /// Some run stopped at the iteration limit.
    pub fn warning(&self) -> bool {
        self.runs.iter().any(|r| !r.converged)
    }
}

/// Trains `model` on the training rows of `split` and scores it on the test
/// rows.
pub fn train_eval(matrix: &FeatureMatrix, split: &Split, model: ModelKind, seed: u64) -> RunScore {
    let pre = Preprocessor::fit(matrix, split);
    let x_train: Vec<Vec<f64>> = split.train.iter().map(|&i| pre.transform(&matrix.rows[i])).collect();
    let y_train: Vec<bool> = split.train.iter().map(|&i| matrix.labels[i]).collect();
    let x_test: Vec<Vec<f64>> = split.test.iter().map(|&i| pre.transform(&matrix.rows[i])).collect();
    let y_test: Vec<bool> = split.test.iter().map(|&i| matrix.labels[i]).collect();

    let mut converged = true;
    let predictions: Vec<bool> = match model {
        ModelKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            x_test.iter().map(|_| rng.random()).collect()
        }
        ModelKind::Logistic => {
            let m = Logistic::fit(&x_train, &y_train, 1.0);
            converged = m.converged;
            x_test.iter().map(|r| m.predict(r)).collect()
        }
        ModelKind::Forest => {
            let f = Forest::fit(&x_train, &y_train, FOREST_TREES, seed);
            x_test.iter().map(|r| f.predict(r)).collect()
        }
    };
    RunScore {
        seed: split.seed,
        accuracy: accuracy(&predictions, &y_test),
        f1: weighted_f1(&predictions, &y_test),
        converged,
    }
}

/// Runs `n_runs` seeded splits (`seed`, `seed + 1`, ...) and reports the
/// mean and sample standard deviation of each model's scores.
pub fn run_experiment(
    matrix: &FeatureMatrix,
    models: &[ModelKind],
    n_runs: usize,
    seed: u64,
) -> Result<Vec<EvalReport>, ClassifyError> {
    if n_runs == 0 {
        return Err(ClassifyError::NoRuns);
    }
    let per_run: Vec<Vec<RunScore>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let run_seed = seed.wrapping_add(r);
            let split = split_and_balance(&matrix.labels, run_seed)?;
            Ok(models
                .iter()
                .map(|&m| {
                    let mut score = train_eval(matrix, &split, m, run_seed);
                    score.seed = run_seed;
                    score
                })
                .collect())
        })
        .collect::<Result<_, ClassifyError>>()?;

    Ok(models
        .iter()
        .enumerate()
        .map(|(k, &model)| {
            let runs: Vec<RunScore> = per_run.iter().map(|r| r[k]).collect();
            let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
            let f1: Vec<f64> = runs.iter().map(|r| r.f1).collect();
            EvalReport {
                model,
                accuracy: Moments::of(&acc).expect("at least one run"),
                f1: Moments::of(&f1).expect("at least one run"),
                runs,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn matrix(rows: Vec<Vec<f64>>, labels: Vec<bool>) -> FeatureMatrix {
        let d = rows.first().map_or(0, Vec::len);
        FeatureMatrix::new(
            (0..d).map(|j| format!("c{j}")).collect(),
            rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect(),
            labels,
        )
        .unwrap()
    }

    /// Confusion-matrix oracle written independently of `weighted_f1`.
    fn oracle_f1(pred: &[bool], labels: &[bool]) -> f64 {
        let mut cm = [[0usize; 2]; 2];
        for (p, l) in pred.iter().zip(labels) {
            cm[*l as usize][*p as usize] += 1;
        }
        let n = labels.len() as f64;
        let mut out = 0.0;
        for c in 0..2 {
            let tp = cm[c][c] as f64;
            let fp = cm[1 - c][c] as f64;
            let fne = cm[c][1 - c] as f64;
            let support = tp + fne;
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if support > 0.0 { tp / support } else { 0.0 };
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            out += f1 * support / n;
        }
        100.0 * out
    }

    #[test]
    fn f1_examples() {
        assert_eq!(weighted_f1(&[true, true, true], &[true, true, true]), 100.0);
        assert_eq!(accuracy(&[true, true, true], &[true, true, true]), 100.0);
        let f = weighted_f1(&[true; 4], &[true, true, false, false]);
        assert!((f - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(weighted_f1(&[false, true], &[false, true]), 100.0);
    }

    #[test]
    fn f1_matches_confusion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let n = rng.random_range(1..40);
            let p: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            let l: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            assert!((weighted_f1(&p, &l) - oracle_f1(&p, &l)).abs() < 1e-9);
        }
    }

    #[test]
    fn split_counts() {
        let labels: Vec<bool> = (0..100).map(|i| i < 80).collect();
        let s = split_and_balance(&labels, 42).unwrap();
        assert_eq!(s.test.len(), 20);
        let pos = s.train.iter().filter(|&&i| labels[i]).count();
        assert_eq!(pos * 2, s.train.len());
        for t in &s.test {
            assert!(!s.train.contains(t));
        }
        assert_eq!(split_and_balance(&labels, 42).unwrap(), s);
    }

    #[test]
    fn balanced_input_adds_nothing() {
        let labels: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        // Find a seed whose training part stays balanced (4 + 4).
        let s = (0..100)
            .map(|seed| split_and_balance(&labels, seed).unwrap())
            .find(|s| s.train_distinct == 8 && s.train[..8].iter().filter(|&&i| labels[i]).count() == 4)
            .unwrap();
        assert_eq!(s.train.len(), 8);
    }

    #[test]
    fn missing_class_errors() {
        let labels = vec![true; 10];
        assert_eq!(split_and_balance(&labels, 7), Err(ClassifyError::MissingClass(7, 8)));
        // A single negative lands in test for some seeds; the retry covers it
        // or the error names both seeds.
        let mut labels = vec![true; 10];
        labels[0] = false;
        for seed in 0..50 {
            match split_and_balance(&labels, seed) {
                Ok(s) => assert!(s.train.iter().any(|&i| !labels[i])),
                Err(e) => assert_eq!(e, ClassifyError::MissingClass(seed, seed + 1)),
            }
        }
    }

    #[test]
    fn preprocessing_uses_train_only() {
        let rows = vec![
            vec![Some(1.0), None],
            vec![Some(3.0), Some(10.0)],
            vec![Some(5.0), Some(20.0)],
            vec![Some(1000.0), Some(-5.0)],
        ];
        let m = FeatureMatrix::new(vec!["a".into(), "b".into()], rows, vec![true, false, true, false]).unwrap();
        let split = Split {
            train: vec![0, 1, 2, 1],
            test: vec![3],
            train_distinct: 3,
            seed: 0,
        };
        let pre = Preprocessor::fit(&m, &split);
        assert_eq!(pre.medians, vec![3.0, 15.0]);
        let xs: Vec<Vec<f64>> = split.train.iter().map(|&i| pre.transform(&m.rows[i])).collect();
        for j in 0..2 {
            let mean: f64 = xs.iter().map(|r| r[j]).sum::<f64>() / xs.len() as f64;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn logistic_separates_a_line() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 - 19.5) / 10.0]).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let m = Logistic::fit(&x, &y, 1.0);
        assert!(m.converged, "{} iterations", m.iterations);
        assert!(m.weights[0] > 0.0);
        let acc = accuracy(&x.iter().map(|r| m.predict(r)).collect::<Vec<_>>(), &y);
        assert_eq!(acc, 100.0);
    }

    #[test]
    fn logistic_gradient_vanishes_at_solution() {
        // Overlapping classes: the optimum is finite and the stationarity
        // condition can be checked by finite differences of the objective.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<Vec<f64>> = (0..200).map(|_| vec![normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] + 0.5 * normal.sample(&mut rng) > 0.0).collect();
        let m = Logistic::fit(&x, &y, 1.0);
        assert!(m.converged);
        let n = x.len() as f64;
        let objective = |w: &[f64], b: f64| -> f64 {
            let mut loss = 0.0;
            for (r, &l) in x.iter().zip(&y) {
                let p = 1.0 / (1.0 + (-(b + r[0] * w[0] + r[1] * w[1])).exp());
                loss -= if l { p.ln() } else { (1.0 - p).ln() };
            }
            loss / n + 0.5 * (w[0] * w[0] + w[1] * w[1]) / n
        };
        let h = 1e-5;
        let w = &m.weights;
        let base = objective(w, m.intercept);
        for j in 0..2 {
            let mut up = w.clone();
            up[j] += h;
            let mut down = w.clone();
            down[j] -= h;
            let g = (objective(&up, m.intercept) - objective(&down, m.intercept)) / (2.0 * h);
            assert!(g.abs() < 1e-5, "d/dw{j} = {g}");
        }
        let g = (objective(w, m.intercept + h) - objective(w, m.intercept - h)) / (2.0 * h);
        assert!(g.abs() < 1e-5);
        assert!(base.is_finite());
    }

    #[test]
    fn forest_learns_xor_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<bool> = x.iter().map(|r| (r[0] > 0.0) != (r[1] > 0.0)).collect();
        let f = Forest::fit(&x, &y, 30, 1);
        let acc = accuracy(&x.iter().map(|r| f.predict(r)).collect::<Vec<_>>(), &y);
        assert!(acc > 95.0, "{acc}");
        assert_eq!(Forest::fit(&x, &y, 30, 1), f);
    }

    #[test]
    fn tree_fits_training_data_exactly() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * 7 % 11) as f64]).collect();
        let y: Vec<bool> = (0..30).map(|i| (i * 13) % 5 < 2).collect();
        let rows: Vec<usize> = (0..30).collect();
        let t = Tree::fit(&x, &y, &rows, 2, &mut ChaCha8Rng::seed_from_u64(0));
        for (r, l) in x.iter().zip(&y) {
            assert_eq!(t.predict(r), *l);
        }
    }

    fn separable(n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wrong = Normal::new(29094.0, 2000.0).unwrap();
        let right = Normal::new(22964.0, 2000.0).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n {
            let correct = i % 2 == 0;
            let v = if correct { right.sample(&mut rng) } else { wrong.sample(&mut rng) };
            rows.push(vec![v]);
            labels.push(correct);
        }
        matrix(rows, labels)
    }

    #[test]
    fn experiment_reports() {
        let m = separable(100, 1);
        let reports = run_experiment(&m, &ModelKind::ALL, 1, 42).unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            assert_eq!(r.accuracy.std, 0.0);
            assert_eq!(r.seeds(), vec![42]);
        }
        let again = run_experiment(&m, &ModelKind::ALL, 1, 42).unwrap();
        assert_eq!(reports, again);
        let three = run_experiment(&m, &[ModelKind::Logistic], 3, 42).unwrap();
        assert_eq!(three[0].seeds(), vec![42, 43, 44]);
        assert!(three[0].accuracy.mean > 90.0);
        assert_eq!(run_experiment(&m, &ModelKind::ALL, 0, 42), Err(ClassifyError::NoRuns));
    }

    #[test]
    fn feature_set_names() {
        assert_eq!("et+text".parse::<FeatureSet>().unwrap(), FeatureSet::EtText);
        assert_eq!("ET".parse::<FeatureSet>().unwrap(), FeatureSet::Et);
        assert!("text".parse::<FeatureSet>().is_err());
    }

    proptest! {
        #[test]
        fn split_invariants(labels in prop::collection::vec(any::<bool>(), 2..200), seed in any::<u64>()) {
            if let Ok(s) = split_and_balance(&labels, seed) {
                let n_test = (labels.len() as f64 * 0.2).ceil() as usize;
                prop_assert_eq!(s.test.len(), n_test);
                let pos = s.train.iter().filter(|&&i| labels[i]).count();
                prop_assert_eq!(2 * pos, s.train.len());
                for i in &s.train {
                    prop_assert!(!s.test.contains(i));
                }
                let mut distinct: Vec<usize> = s.train[..s.train_distinct].to_vec();
                distinct.extend(&s.test);
                distinct.sort();
                prop_assert_eq!(distinct, (0..labels.len()).collect::<Vec<_>>());
            }
        }

        #[test]
        fn metrics_in_range(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..100)) {
            let (p, l): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let f = weighted_f1(&p, &l);
            let a = accuracy(&p, &l);
            prop_assert!((0.0..=100.0).contains(&f));
            prop_assert!((0.0..=100.0).contains(&a));
            prop_assert!((f - oracle_f1(&p, &l)).abs() < 1e-9);
        }
    }
}
