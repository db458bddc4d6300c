//! Command-line front end. Every subcommand reads all of its inputs first
//! and writes its outputs only after all work has succeeded.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;

use crate::aoi::{by_text_id, load_boundaries, write_boundaries, ExpansionParams, TextBoundaries};
use crate::classify::{run_experiment, FeatureMatrix, FeatureSet, ModelKind};
use crate::features::{relative_fixation, trial_features, word_features, TrialFeatures, WordRecord};
use crate::fixation::{run_pipeline, Fixation, FixationError, FixationParams, FixationTimestamp};
use crate::ingest::tables::{
    read_comparison, read_eval, read_fixations, read_trial_features, read_ttests, read_word_features,
    write_comparison, write_eval, write_fixations, write_ground_truth, write_rejections, write_trial_features,
    write_ttests, write_word_features, EvalRow, TTestRow, TrialFixations,
};
use crate::ingest::{
    attach_samples, parse_gaze_log, parse_participants, parse_trial_meta, write_gaze_log, write_participants,
    write_trial_meta, GazeLogFormat, ParticipantRecord, Task, TrialRecord,
};
use crate::numfmt::{sig6, sig6_opt};
use crate::quality::{drop_empty_trials, filter_participants, QualityThresholds};
use crate::simulate::{demo_dwell, demo_trial, reading_schedule, simulate_cohort, CohortParams, DEMO_QUESTION_ID};
use crate::stats::{compare_datasets, feature_ttests, VarianceModel};

/// Environment variable consulted for the seed when neither a flag nor the
/// config file sets one.
pub const SEED_ENV: &str = "GAZEFLOW_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug)]
pub enum CliError {
    /// Bad input or parameters; exit code 1.
    Input(anyhow::Error),
    /// A broken internal invariant; exit code 2.
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(e) => write!(f, "error: {e:#}"),
            CliError::Internal(e) => write!(f, "internal error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Input(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "gazeflow", version, about = "Webcam gaze-reading pipeline")]
pub struct Cli {
    /// TOML run file; command-line flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-trial work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply participant quality gates and keep only accepted data.
    Filter(FilterArgs),
    /// Merge gaze samples into fixations.
    Fixations(FixationArgs),
    /// Word-level and trial-level reading measures.
    Features(FeatureArgs),
    /// Compare two word-feature tables text by text.
    Compare(CompareArgs),
    /// Independent t-tests of trial features, incorrect vs correct answers.
    Ttest(TtestArgs),
    /// Predict answer correctness from trial features.
    Classify(ClassifyArgs),
    /// Generate synthetic recordings.
    Simulate(SimulateArgs),
    /// Render summary tables from earlier outputs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RecordingArgs {
    #[arg(long)]
    pub participants: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long)]
    pub gaze: PathBuf,
    /// Gaze log format; inferred from the file extension when omitted.
    #[arg(long, value_enum)]
    pub gaze_format: Option<GazeFormatArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GazeFormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub input: RecordingArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub min_fraction_correct: Option<f64>,
    #[arg(long)]
    pub min_sample_rate_hz: Option<f64>,
    /// Validation accuracy at or below this percentage is rejected.
    #[arg(long)]
    pub min_accuracy_pct: Option<f64>,
    #[arg(long)]
    pub min_screen_w: Option<f64>,
    #[arg(long)]
    pub min_screen_h: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TimestampArg {
    Anchor,
    Last,
}

#[derive(Debug, Args)]
pub struct FixationArgs {
    #[command(flatten)]
    pub input: RecordingArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub window_ms: Option<f64>,
    #[arg(long)]
    pub radius_px: Option<f64>,
    #[arg(long)]
    pub bounds_tolerance_px: Option<f64>,
    #[arg(long)]
    pub min_fix_ms: Option<f64>,
    /// Time a fixation by its opening sample or its last absorbed sample.
    #[arg(long, value_enum)]
    pub timestamp: Option<TimestampArg>,
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    #[arg(long)]
    pub participants: PathBuf,
    #[arg(long)]
    pub trials: PathBuf,
    #[arg(long)]
    pub fixations: PathBuf,
    #[arg(long)]
    pub boundaries: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub horizontal_margin_px: Option<f64>,
    #[arg(long)]
    pub vertical_margin_px: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Word features of the first dataset.
    #[arg(long)]
    pub a: PathBuf,
    /// Word features of the second dataset.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub language: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TtestArgs {
    #[arg(long)]
    pub trial_features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Use Welch's unequal-variance test instead of the pooled one.
    #[arg(long)]
    pub welch: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskArg {
    Is,
    Nr,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Is => Task::IS,
            TaskArg::Nr => Task::NR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
pub enum FeatureSetArg {
    #[value(name = "et")]
    #[serde(rename = "et")]
    Et,
    #[value(name = "et+text")]
    #[serde(rename = "et+text")]
    EtText,
}

impl From<FeatureSetArg> for FeatureSet {
    fn from(f: FeatureSetArg) -> Self {
        match f {
            FeatureSetArg::Et => FeatureSet::Et,
            FeatureSetArg::EtText => FeatureSet::EtText,
        }
    }
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub trial_features: PathBuf,
    /// Needed for the text features.
    #[arg(long)]
    pub boundaries: Option<PathBuf>,
    /// One or more tasks, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub task: Vec<TaskArg>,
    /// One or more feature sets, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub features: Vec<FeatureSetArg>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Write the single demo trial and its ground truth instead of a cohort.
    #[arg(long)]
    pub demo: bool,
    #[arg(long, default_value_t = 4)]
    pub participants: usize,
    #[arg(long, default_value_t = 25.0)]
    pub rate_hz: f64,
    #[arg(long, default_value_t = 5.0)]
    pub noise_px: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Constant accuracy error added to every sample, in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub offset_px: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub comparison: Option<PathBuf>,
    #[arg(long)]
    pub ttests: Option<PathBuf>,
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Declarative run file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub language: Option<String>,
    pub fixation: FixationParams,
    pub quality: QualityThresholds,
    pub expansion: ExpansionParams,
    pub classify: ClassifyConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub runs: Option<usize>,
    pub task: Option<Vec<TaskArg>>,
    pub features: Option<Vec<FeatureSetArg>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(CliError::Input)
    }
}

/// Flag, then config, then `GAZEFLOW_SEED`, then 42.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Input(anyhow!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

/// Files to write once all work has succeeded.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, path: PathBuf, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf).map_err(|e| CliError::Internal(e.into()))?;
        self.files.push((path, buf));
        Ok(())
    }

    fn commit(self) -> Result<()> {
        for (path, bytes) in self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Input)
}

fn input<T, E: Into<anyhow::Error>>(r: std::result::Result<T, E>, what: &Path) -> Result<T> {
    r.map_err(|e| CliError::Input(e.into().context(format!("in {}", what.display()))))
}

fn validated(msg: std::result::Result<(), String>) -> Result<()> {
    msg.map_err(|m| CliError::Input(anyhow!(m)))
}

/// Parses participants, trial metadata and the gaze log, and attaches the
/// samples to their trials.
fn load_recording(args: &RecordingArgs) -> Result<(Vec<ParticipantRecord>, Vec<TrialRecord>)> {
    let participants = input(parse_participants(read(&args.participants)?.as_slice()), &args.participants)?;
    let trials = input(parse_trial_meta(read(&args.trials)?.as_slice(), &participants), &args.trials)?;
    let format = match args.gaze_format {
        Some(GazeFormatArg::Csv) => GazeLogFormat::Csv,
        Some(GazeFormatArg::Jsonl) => GazeLogFormat::JsonLines,
        None => match args.gaze.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json" | "ndjson") => GazeLogFormat::JsonLines,
            _ => GazeLogFormat::Csv,
        },
    };
    let log = input(parse_gaze_log(read(&args.gaze)?.as_slice(), format), &args.gaze)?;
    if log.duplicates_removed > 0 || log.reordered_trials > 0 {
        eprintln!(
            "note: {} duplicate timestamps removed, {} trials reordered in time",
            log.duplicates_removed, log.reordered_trials
        );
    }
    let (trials, report) = attach_samples(trials, log.samples);
    if report.orphan_samples > 0 {
        eprintln!(
            "warning: {} samples reference unknown trials: {}",
            report.orphan_samples,
            report.orphan_trial_ids.join(", ")
        );
    }
    if !report.overlong_trials.is_empty() {
        eprintln!(
            "warning: samples past the recorded trial duration in {}",
            report.overlong_trials.join(", ")
        );
    }
    Ok((participants, trials))
}

fn canonical_order(trials: &mut [TrialRecord]) {
    trials.sort_by(|a, b| {
        (&a.participant_id, &a.text_id, &a.trial_id).cmp(&(&b.participant_id, &b.text_id, &b.trial_id))
    });
}

pub fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let jobs = cli.jobs.or(config.jobs);
    if jobs == Some(0) {
        return Err(CliError::Input(anyhow!("--jobs must be at least 1")));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Internal(e.into()))?;
    pool.install(|| dispatch(cli.command, &config))
}

fn dispatch(command: Command, config: &RunConfig) -> Result<()> {
    match command {
        Command::Filter(a) => filter(a, config),
        Command::Fixations(a) => fixations(a, config),
        Command::Features(a) => features(a, config),
        Command::Compare(a) => compare(a, config),
        Command::Ttest(a) => ttest(a),
        Command::Classify(a) => classify(a, config),
        Command::Simulate(a) => simulate(a, config),
        Command::Report(a) => report(a),
    }
}

fn filter(args: FilterArgs, config: &RunConfig) -> Result<()> {
    let mut th = config.quality;
    let overrides = [
        (args.min_fraction_correct, &mut th.min_fraction_correct),
        (args.min_sample_rate_hz, &mut th.min_sample_rate_hz),
        (args.min_accuracy_pct, &mut th.min_accuracy_pct_exclusive),
        (args.min_screen_w, &mut th.min_screen_w),
        (args.min_screen_h, &mut th.min_screen_h),
    ];
    for (flag, slot) in overrides {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    validated(th.validate())?;
    let (participants, trials) = load_recording(&args.input)?;
    let outcome = filter_participants(&participants, &trials, &th);

    let kept_ids: std::collections::HashSet<&str> =
        outcome.kept.iter().map(|p| p.participant_id.as_str()).collect();
    let mut kept_trials: Vec<TrialRecord> = trials
        .into_iter()
        .filter(|t| kept_ids.contains(t.participant_id.as_str()))
        .collect();
    canonical_order(&mut kept_trials);
    let samples: Vec<(String, crate::ingest::GazeSample)> = kept_trials
        .iter()
        .flat_map(|t| t.samples.iter().map(|s| (t.trial_id.clone(), *s)))
        .collect();

    let dir = &args.out_dir;
    let mut out = Outputs::default();
    out.add(dir.join("rejections.csv"), |w| write_rejections(w, &outcome.rejected))?;
    out.add(dir.join("participants.jsonl"), |w| write_participants(w, &outcome.kept))?;
    out.add(dir.join("trials.jsonl"), |w| write_trial_meta(w, &kept_trials))?;
    out.add(dir.join("gaze.csv"), |w| write_gaze_log(w, &samples))?;
    out.commit()?;
    println!("{}", outcome.summary_line());
    Ok(())
}

fn fixation_params(args: &FixationArgs, config: &RunConfig) -> Result<FixationParams> {
    let mut p = config.fixation;
    if let Some(v) = args.window_ms {
        p.window_ms = v;
    }
    if let Some(v) = args.radius_px {
        p.radius_px = v;
    }
    if let Some(v) = args.bounds_tolerance_px {
        p.bounds_tolerance_px = v;
    }
    if let Some(v) = args.min_fix_ms {
        p.min_fix_ms = v;
    }
    if let Some(t) = args.timestamp {
        p.timestamp = match t {
            TimestampArg::Anchor => FixationTimestamp::Anchor,
            TimestampArg::Last => FixationTimestamp::LastAbsorbed,
        };
    }
    p.validate().map_err(|e| CliError::Input(e.into()))?;
    Ok(p)
}

fn fixations(args: FixationArgs, config: &RunConfig) -> Result<()> {
    let params = fixation_params(&args, config)?;
    let (_, mut trials) = load_recording(&args.input)?;
    canonical_order(&mut trials);
    let table: Vec<TrialFixations> = trials
        .par_iter()
        .map(|t| {
            run_pipeline(&t.samples, &t.frame, &params)
                .map(|f| (t.trial_id.clone(), f))
                .map_err(|e| match e {
                    FixationError::InvalidParams(_) => CliError::Input(e.into()),
                    FixationError::NonMonotone { .. } => {
                        CliError::Internal(anyhow::Error::from(e).context(format!("trial {}", t.trial_id)))
                    }
                })
        })
        .collect::<Result<_>>()?;
    let mut out = Outputs::default();
    out.add(args.out.clone(), |w| write_fixations(w, &table))?;
    out.commit()?;
    let n: usize = table.iter().map(|(_, f)| f.len()).sum();
    println!("{} fixations in {} trials", n, table.len());
    Ok(())
}

fn features(args: FeatureArgs, config: &RunConfig) -> Result<()> {
    let mut expansion = config.expansion;
    if let Some(v) = args.horizontal_margin_px {
        expansion.horizontal_margin_px = v;
    }
    if let Some(v) = args.vertical_margin_px {
        expansion.vertical_margin_px = v;
    }
    validated(expansion.validate())?;

    let participants = input(parse_participants(read(&args.participants)?.as_slice()), &args.participants)?;
    let mut trials = input(parse_trial_meta(read(&args.trials)?.as_slice(), &participants), &args.trials)?;
    let fixation_table = input(read_fixations(read(&args.fixations)?.as_slice()), &args.fixations)?;
    let texts = input(load_boundaries(read(&args.boundaries)?.as_slice()), &args.boundaries)?;
    let texts: Vec<TextBoundaries> = texts
        .into_iter()
        .map(|t| t.expanded(&expansion))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::Input(anyhow::Error::from(e).context(format!("in {}", args.boundaries.display()))))?;
    let texts = by_text_id(texts);

    canonical_order(&mut trials);
    let mut by_trial: BTreeMap<String, Vec<Fixation>> = fixation_table.into_iter().collect();
    let known: std::collections::HashSet<&str> = trials.iter().map(|t| t.trial_id.as_str()).collect();
    let unknown: Vec<&String> = by_trial.keys().filter(|k| !known.contains(k.as_str())).collect();
    if !unknown.is_empty() {
        eprintln!("warning: fixations of {} unknown trials ignored", unknown.len());
    }
    for t in &trials {
        if !texts.contains_key(&t.text_id) {
            return Err(CliError::Input(anyhow!(
                "trial {} reads text {:?}, which has no boundaries",
                t.trial_id,
                t.text_id
            )));
        }
    }

    let per_trial: Vec<(Vec<WordRecord>, TrialFeatures)> = trials
        .iter()
        .map(|t| (t, by_trial.remove(&t.trial_id).unwrap_or_default()))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(t, fixes)| {
            let boxes = texts[&t.text_id].boxes_for_question(&t.question_id);
            let words = relative_fixation(word_features(&fixes, &boxes))
                .into_iter()
                .map(|f| WordRecord {
                    participant_id: t.participant_id.clone(),
                    text_id: t.text_id.clone(),
                    features: f,
                })
                .collect();
            (words, trial_features(t, &fixes, &boxes))
        })
        .collect();
    let words: Vec<WordRecord> = per_trial.iter().flat_map(|(w, _)| w.iter().cloned()).collect();
    let trial_rows: Vec<TrialFeatures> = per_trial.into_iter().map(|(_, t)| t).collect();

    let mut out = Outputs::default();
    out.add(args.out_dir.join("word_features.csv"), |w| write_word_features(w, &words))?;
    out.add(args.out_dir.join("trial_features.csv"), |w| write_trial_features(w, &trial_rows))?;
    out.commit()?;
    println!("{} word rows, {} trial rows", words.len(), trial_rows.len());
    Ok(())
}

/// Left-aligned first column, right-aligned others, two spaces apart.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "{c:>w$}");
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn comparison_text(rows: &[crate::stats::ComparisonRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.language.clone(),
                r.text_id.clone(),
                sig6_opt(r.trt_a),
                sig6_opt(r.trt_b),
                sig6_opt(r.nfix_a),
                sig6_opt(r.nfix_b),
                sig6_opt(r.rho),
            ]
        })
        .collect();
    render_table(&["language", "text", "TRT A", "TRT B", "nfix A", "nfix B", "rho"], &body)
}

fn compare(args: CompareArgs, config: &RunConfig) -> Result<()> {
    let a = input(read_word_features(read(&args.a)?.as_slice()), &args.a)?;
    let b = input(read_word_features(read(&args.b)?.as_slice()), &args.b)?;
    let mut rows = compare_datasets(&a, &b).map_err(|e| CliError::Input(e.into()))?;
    let language = args.language.or_else(|| config.language.clone()).unwrap_or_default();
    for r in &mut rows {
        r.language = language.clone();
    }
    let mut out = Outputs::default();
    out.add(args.out.clone(), |w| write_comparison(w, &rows))?;
    out.commit()?;
    print!("{}", comparison_text(&rows));
    Ok(())
}

fn ttest_text(rows: &[TTestRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.task.to_string(),
                r.result.feature.clone(),
                sig6(r.result.mean1),
                sig6(r.result.mean2),
                sig6(r.result.p),
                format!("{}/{}", r.result.n1, r.result.n2),
            ]
        })
        .collect();
    render_table(&["task", "feature", "mu1 (wrong)", "mu2 (correct)", "p", "n"], &body)
}

fn ttest(args: TtestArgs) -> Result<()> {
    let trials = input(read_trial_features(read(&args.trial_features)?.as_slice()), &args.trial_features)?;
    let model = if args.welch { VarianceModel::Welch } else { VarianceModel::Pooled };
    let rows: Vec<TTestRow> = [Task::IS, Task::NR]
        .into_iter()
        .flat_map(|task| {
            feature_ttests(&trials, task, model)
                .into_iter()
                .map(move |result| TTestRow { task, result })
        })
        .collect();
    let mut out = Outputs::default();
    out.add(args.out.clone(), |w| write_ttests(w, &rows))?;
    out.commit()?;
    print!("{}", ttest_text(&rows));
    Ok(())
}

fn classify(args: ClassifyArgs, config: &RunConfig) -> Result<()> {
    let seed = resolve_seed(args.seed, config.seed)?;
    let runs = args.runs.or(config.classify.runs).unwrap_or(10);
    let tasks: Vec<TaskArg> = if !args.task.is_empty() {
        args.task.clone()
    } else {
        config.classify.task.clone().unwrap_or(vec![TaskArg::Is, TaskArg::Nr])
    };
    let sets: Vec<FeatureSetArg> = if !args.features.is_empty() {
        args.features.clone()
    } else {
        config.classify.features.clone().unwrap_or(vec![FeatureSetArg::Et])
    };
    let trials = input(read_trial_features(read(&args.trial_features)?.as_slice()), &args.trial_features)?;
    let texts = match &args.boundaries {
        Some(p) => by_text_id(input(load_boundaries(read(p)?.as_slice()), p)?),
        None => BTreeMap::new(),
    };
    if sets.contains(&FeatureSetArg::EtText) && args.boundaries.is_none() {
        return Err(CliError::Input(anyhow!("--features et+text needs --boundaries")));
    }

    let mut rows = Vec::new();
    for &task in &tasks {
        let task: Task = task.into();
        let of_task: Vec<TrialFeatures> = trials.iter().filter(|t| t.task == task).cloned().collect();
        let (kept, dropped) = drop_empty_trials(of_task);
        if dropped > 0 {
            eprintln!("{task}: dropped {dropped} trials without fixations on the text");
        }
        for &set in &sets {
            let set: FeatureSet = set.into();
            let matrix = FeatureMatrix::from_trials(&kept, set, &texts).map_err(|e| CliError::Input(e.into()))?;
            let reports = run_experiment(&matrix, &ModelKind::ALL, runs, seed)
                .map_err(|e| CliError::Input(anyhow::Error::from(e).context(format!("task {task}, features {set}"))))?;
            for r in reports {
                if r.warning() {
                    eprintln!("warning: {task}/{set}/{}: logistic regression did not converge", r.model);
                }
                rows.push(EvalRow {
                    task,
                    features: set.to_string(),
                    model: r.model.to_string(),
                    acc_mean: r.accuracy.mean,
                    acc_std: r.accuracy.std,
                    f1_mean: r.f1.mean,
                    f1_std: r.f1.std,
                    seeds: r.seeds(),
                    warning: r.warning(),
                });
            }
        }
    }
    let mut out = Outputs::default();
    out.add(args.out.clone(), |w| write_eval(w, &rows))?;
    out.commit()?;
    print!("{}", eval_text(&rows));
    Ok(())
}

/// Rows are models; columns are (task, feature set) cells holding accuracy
/// and weighted F1 as `mean (std)`.
fn eval_text(rows: &[EvalRow]) -> String {
    let mut cells: Vec<(Task, String)> = Vec::new();
    let mut models: Vec<String> = Vec::new();
    for r in rows {
        if !cells.contains(&(r.task, r.features.clone())) {
            cells.push((r.task, r.features.clone()));
        }
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
    }
    let mut header = vec!["model".to_string()];
    for (task, set) in &cells {
        header.push(format!("{task}/{set} acc"));
        header.push(format!("{task}/{set} F1"));
    }
    let fmt = |m: f64, s: f64| format!("{m:.2} ({s:.2})");
    let body: Vec<Vec<String>> = models
        .iter()
        .map(|model| {
            let mut line = vec![model.clone()];
            for (task, set) in &cells {
                match rows.iter().find(|r| &r.model == model && r.task == *task && &r.features == set) {
                    Some(r) => {
                        line.push(fmt(r.acc_mean, r.acc_std));
                        line.push(fmt(r.f1_mean, r.f1_std));
                    }
                    None => line.extend(["-".to_string(), "-".to_string()]),
                }
            }
            line
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    render_table(&header, &body)
}

fn simulate(args: SimulateArgs, config: &RunConfig) -> Result<()> {
    let seed = resolve_seed(args.seed, config.seed)?;
    let dir = &args.out_dir;
    let mut out = Outputs::default();
    if args.demo {
        let (text, frame, samples) = demo_trial(seed);
        let truth = reading_schedule(&text, demo_dwell, 25.0, 5.0, 0.0).ground_truth();
        let participant = ParticipantRecord {
            participant_id: "demo".into(),
            language: Some("en".into()),
            age: Some(30.0),
            reported_sample_rate_hz: Some(25.0),
            validation_accuracy_pct: Some(80.0),
            screen_w: Some(1920.0),
            screen_h: Some(1080.0),
            fraction_correct: Some(1.0),
            total_experiment_ms: Some(600_000.0),
        };
        let trial = TrialRecord {
            trial_id: TrialRecord::default_id("demo", &text.text_id),
            participant_id: "demo".into(),
            text_id: text.text_id.clone(),
            task: Task::IS,
            frame,
            samples: Vec::new(),
            question_id: DEMO_QUESTION_ID.into(),
            answered_correctly: true,
            trial_duration_ms: samples.last().map_or(0.0, |s| s.t + 40.0),
        };
        let tagged: Vec<_> = samples.iter().map(|s| (trial.trial_id.clone(), *s)).collect();
        out.add(dir.join("participants.jsonl"), |w| write_participants(w, &[participant]))?;
        out.add(dir.join("trials.jsonl"), |w| write_trial_meta(w, &[trial]))?;
        out.add(dir.join("gaze.csv"), |w| write_gaze_log(w, &tagged))?;
        out.add(dir.join("boundaries.jsonl"), |w| write_boundaries(w, &[text]))?;
        out.add(dir.join("ground_truth.csv"), |w| write_ground_truth(w, &truth))?;
        out.commit()?;
        println!("demo trial: {} samples", tagged.len());
        return Ok(());
    }
    let params = CohortParams {
        participants: args.participants,
        rate_hz: args.rate_hz,
        noise_px: args.noise_px,
        dropout: args.dropout,
        offset_px: args.offset_px,
    };
    if !(params.offset_px.is_finite() && params.offset_px >= 0.0) {
        return Err(CliError::Input(anyhow!("--offset-px must be non-negative")));
    }
    let cohort = simulate_cohort(&params, seed).map_err(|e| CliError::Input(e.into()))?;
    let tagged: Vec<_> = cohort
        .trials
        .iter()
        .flat_map(|t| t.samples.iter().map(|s| (t.trial_id.clone(), *s)))
        .collect();
    out.add(dir.join("participants.jsonl"), |w| write_participants(w, &cohort.participants))?;
    out.add(dir.join("trials.jsonl"), |w| write_trial_meta(w, &cohort.trials))?;
    out.add(dir.join("gaze.csv"), |w| write_gaze_log(w, &tagged))?;
    out.add(dir.join("boundaries.jsonl"), |w| write_boundaries(w, &cohort.texts))?;
    out.commit()?;
    println!(
        "{} participants, {} trials, {} samples",
        cohort.participants.len(),
        cohort.trials.len(),
        tagged.len()
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let comparison = match &args.comparison {
        Some(p) => Some(input(read_comparison(read(p)?.as_slice()), p)?),
        None => None,
    };
    let ttests = match &args.ttests {
        Some(p) => Some(input(read_ttests(read(p)?.as_slice()), p)?),
        None => None,
    };
    let eval = match &args.eval {
        Some(p) => Some(input(read_eval(read(p)?.as_slice()), p)?),
        None => None,
    };
    if comparison.is_none() && ttests.is_none() && eval.is_none() {
        return Err(CliError::Input(anyhow!(
            "nothing to report; pass --comparison, --ttests or --eval"
        )));
    }
    let mut text = String::new();
    if let Some(rows) = comparison {
        text.push_str("Dataset comparison\n");
        text.push_str(&comparison_text(&rows));
        text.push('\n');
    }
    if let Some(rows) = ttests {
        text.push_str("Trial features, incorrect vs correct answers\n");
        text.push_str(&ttest_text(&rows));
        text.push('\n');
    }
    if let Some(rows) = eval {
        text.push_str("Correctness classification, accuracy and weighted F1 in percent\n");
        text.push_str(&eval_text(&rows));
        text.push('\n');
    }
    if let Some(p) = &args.out {
        let mut out = Outputs::default();
        out.add(p.clone(), |w| {
            w.extend_from_slice(text.as_bytes());
            Ok(())
        })?;
        out.commit()?;
    }
    print!("{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let c: RunConfig = toml::from_str("seed = 7\n[fixation]\nwindow_ms = 200\n[classify]\ntask = [\"is\"]\nfeatures = [\"et+text\"]\n").unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.fixation.window_ms, 200.0);
        assert_eq!(c.fixation.radius_px, 32.0);
        assert_eq!(c.quality, QualityThresholds::default());
        assert_eq!(c.classify.task, Some(vec![TaskArg::Is]));
        assert_eq!(c.classify.features, Some(vec![FeatureSetArg::EtText]));
        assert!(toml::from_str::<RunConfig>("unknown = 1").is_err());

        let cli = Cli::try_parse_from(["gazeflow", "fixations", "--participants", "p", "--trials", "t", "--gaze", "g", "--out", "o", "--radius-px", "30"]).unwrap();
        let Command::Fixations(args) = cli.command else { panic!() };
        let p = fixation_params(&args, &c).unwrap();
        assert_eq!((p.window_ms, p.radius_px), (200.0, 30.0));
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some(2)).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some(2)).unwrap(), 2);
    }

    #[test]
    fn default_fixation_flags() {
        let cli = Cli::try_parse_from(["gazeflow", "fixations", "--participants", "p", "--trials", "t", "--gaze", "g", "--out", "o"]).unwrap();
        let Command::Fixations(args) = cli.command else { panic!() };
        let p = fixation_params(&args, &RunConfig::default()).unwrap();
        assert_eq!(p, FixationParams::default());
        assert_eq!((p.window_ms, p.radius_px, p.bounds_tolerance_px, p.min_fix_ms), (150.0, 32.0, 50.0, 50.0));
    }

    #[test]
    fn table_alignment() {
        let t = render_table(&["a", "bb"], &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "a    bb\nxyz   1\n");
    }
}
