//! Command-line surface. `run` returns the process exit code: 0 on success,
//! 1 for user or data errors, 2 for internal failures.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::classifier::{train, ForestModel, ParamGrid, DEFAULT_FOLDS};
use crate::error::Error;
use crate::evaluation::{drift_report, sweep_csv, sweep_probabilities, threshold_grid};
use crate::matcher::MatchParams;
use crate::pipeline::{
    labeled_dataset, parse_timestamp_date, read_jsonl, to_jsonl, CorpusRecord, DetectionRecord,
    Detector, FeatureExtractor, PromptSet,
};
use crate::registry::{load_registry, DEFAULT_MIN_SUBTEMPLATE_TOKENS};

#[derive(Debug, Parser)]
#[command(name = "tmpl-detect", version, about = "Detect responses written from memorized templates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a corpus and write detection records as JSONL.
    Detect(Opts),
    /// Extract features from a labeled corpus, grid-search a forest and write the model.
    Train(Opts),
    /// Write detection rates over a sweep of thresholds as CSV.
    Calibrate(Opts),
    /// Bucket timestamped detections into a detection-rate series (CSV, optional SVG).
    Drift(Opts),
    /// Print the sub-templates derived from a registry.
    Segment(Opts),
}

/// Every flag is optional here; precedence is flag, then `--config`, then default.
#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Opts {
    /// JSON file holding any of these options (kebab-case keys).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Operating threshold override for detect.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub max_distance: Option<f64>,
    #[arg(long)]
    pub min_prompt_match: Option<usize>,
    #[arg(long)]
    pub min_subtemplate_tokens: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub bucket_days: Option<u32>,
    /// File with one ISO-8601 release date per line.
    #[arg(long)]
    pub releases: Option<PathBuf>,
    /// SVG output path for drift.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Step between calibration thresholds.
    #[arg(long)]
    pub threshold_step: Option<f64>,
    /// Include match spans in detection output.
    #[arg(long)]
    #[serde(default)]
    pub explain: bool,
    /// Log more (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
}

macro_rules! prefer {
    ($flag:expr, $file:expr, $($field:ident),+) => {
        $( if $flag.$field.is_none() { $flag.$field = $file.$field.take(); } )+
    };
}

impl Opts {
    fn resolve(mut self) -> Result<Self, Failure> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let raw = fs::read_to_string(&path).map_err(|e| Failure::user(Error::io(&path, e)))?;
        let mut file: Opts = serde_json::from_str(&raw)
            .map_err(|e| Failure::User(format!("{}: {e}", path.display())))?;
        prefer!(
            self, file, registry, prompts, model, input, output, threshold, window, stride,
            max_distance, min_prompt_match, min_subtemplate_tokens, seed, jobs, folds,
            bucket_days, releases, plot, threshold_step
        );
        self.explain |= file.explain;
        Ok(self)
    }

    fn match_params(&self) -> MatchParams {
        let d = MatchParams::default();
        MatchParams {
            window_tokens: self.window.unwrap_or(d.window_tokens),
            stride_tokens: self.stride.unwrap_or(d.stride_tokens),
            max_norm_distance: self.max_distance.unwrap_or(d.max_norm_distance),
            min_prompt_match_tokens: self.min_prompt_match.unwrap_or(d.min_prompt_match_tokens),
        }
    }

    fn need<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
        value
            .as_deref()
            .ok_or_else(|| Failure::User(format!("missing required --{flag}")))
    }
}

#[derive(Debug)]
pub enum Failure {
    User(String),
    Internal(String),
}

impl Failure {
    fn user(e: Error) -> Self {
        match e {
            Error::Serialize(_) => Failure::Internal(e.to_string()),
            other => Failure::User(other.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::User(_) => 1,
            Failure::Internal(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::User(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::user(e)
    }
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| Failure::user(Error::io(p, e))),
        None => std::io::stdout()
            .write_all(content.as_bytes())
            .map_err(|e| Failure::Internal(format!("stdout: {e}"))),
    }
}

fn load_inputs(opts: &Opts) -> Result<(crate::registry::Registry, PromptSet, Vec<CorpusRecord>), Failure> {
    let registry = load_registry(
        opts.need(&opts.registry, "registry")?,
        opts.min_subtemplate_tokens
            .unwrap_or(DEFAULT_MIN_SUBTEMPLATE_TOKENS),
    )?;
    let prompts = PromptSet::load(opts.need(&opts.prompts, "prompts")?)?;
    let records: Vec<CorpusRecord> = read_jsonl(opts.need(&opts.input, "input")?)?;
    Ok((registry, prompts, records))
}

pub fn cmd_detect(opts: &Opts) -> Result<(), Failure> {
    let model = ForestModel::load(opts.need(&opts.model, "model")?)?;
    let (registry, prompts, records) = load_inputs(opts)?;
    let mut detector = Detector::new(&registry, model, &opts.match_params())?.with_explanations(opts.explain);
    if let Some(t) = opts.threshold {
        detector = detector.with_threshold(t)?;
    }
    let detections = detector.detect_batch(&records, &prompts)?;
    write_output(opts.output.as_deref(), &to_jsonl(&detections)?)?;
    let detected = detections.iter().filter(|d| d.label.is_positive()).count();
    let rate = if detections.is_empty() {
        0.0
    } else {
        detected as f64 / detections.len() as f64
    };
    eprintln!(
        "processed {} responses, detected {}, rate {:.4}",
        detections.len(),
        detected,
        rate
    );
    Ok(())
}

pub fn cmd_train(opts: &Opts) -> Result<(), Failure> {
    let (registry, prompts, records) = load_inputs(opts)?;
    let output = opts.need(&opts.output, "output")?;
    let extractor = FeatureExtractor::new(&registry, &opts.match_params())?;
    let features = extractor.corpus_features(&records, &prompts)?;
    let dataset = labeled_dataset(&records, &features)?;
    let seed = opts.seed.unwrap_or(0);
    let grid = ParamGrid::default().points(seed);
    let outcome = train(&dataset, &grid, opts.folds.unwrap_or(DEFAULT_FOLDS), seed)?;
    let mut model = outcome.model;
    model.registry_version = registry.version().to_string();
    model.save(output)?;
    let hp = model.hyperparams;
    let depth = hp.max_depth.map_or("unlimited".to_string(), |d| d.to_string());
    println!(
        "selected n_trees={} max_depth={} max_features={} cv_f1={:.4}",
        hp.n_trees, depth, hp.max_features, outcome.cv_f1
    );
    Ok(())
}

pub fn cmd_calibrate(opts: &Opts) -> Result<(), Failure> {
    let model = ForestModel::load(opts.need(&opts.model, "model")?)?;
    let (registry, prompts, records) = load_inputs(opts)?;
    if records.is_empty() {
        return Err(Failure::User("calibration corpus is empty".into()));
    }
    let detector = Detector::new(&registry, model, &opts.match_params())?;
    let probs: Vec<f64> = detector
        .detect_batch(&records, &prompts)?
        .iter()
        .map(|d| d.probability)
        .collect();
    let thresholds = threshold_grid(opts.threshold_step.unwrap_or(0.05))?;
    let rows = sweep_probabilities(&probs, &thresholds)?;
    write_output(opts.output.as_deref(), &sweep_csv(&rows))
}

fn read_releases(path: &Path) -> Result<Vec<chrono::NaiveDate>, Failure> {
    let raw = fs::read_to_string(path).map_err(|e| Failure::user(Error::io(path, e)))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_timestamp_date(l).ok_or_else(|| {
                Failure::User(format!("{}: line {}: bad date {:?}", path.display(), i + 1, l))
            })
        })
        .collect()
}

pub fn cmd_drift(opts: &Opts) -> Result<(), Failure> {
    let input = opts.need(&opts.input, "input")?;
    let detections: Vec<DetectionRecord> = read_jsonl(input)?;
    let mut dated = Vec::new();
    for (i, d) in detections.iter().enumerate() {
        let Some(ts) = &d.timestamp else { continue };
        let date = parse_timestamp_date(ts).ok_or_else(|| {
            Failure::User(format!("{}: record {}: bad timestamp {:?}", input.display(), i + 1, ts))
        })?;
        dated.push((date, d.label));
    }
    if dated.is_empty() {
        return Err(Failure::User(format!("{}: no timestamped detections", input.display())));
    }
    let releases = match &opts.releases {
        Some(p) => read_releases(p)?,
        None => Vec::new(),
    };
    let series = drift_report(&dated, &releases, opts.bucket_days.unwrap_or(7))?;
    write_output(opts.output.as_deref(), &series.to_csv())?;
    if let Some(plot) = &opts.plot {
        fs::write(plot, series.to_svg()).map_err(|e| Failure::user(Error::io(plot, e)))?;
    }
    Ok(())
}

pub fn cmd_segment(opts: &Opts) -> Result<(), Failure> {
    let registry = load_registry(
        opts.need(&opts.registry, "registry")?,
        opts.min_subtemplate_tokens
            .unwrap_or(DEFAULT_MIN_SUBTEMPLATE_TOKENS),
    )?;
    let mut out = String::from("template_id\tindex\ttext\n");
    for s in registry.subtemplates() {
        out.push_str(&format!("{}\t{}\t{}\n", s.template_id, s.index, s.text));
    }
    write_output(opts.output.as_deref(), &out)
}

type Handler = fn(&Opts) -> Result<(), Failure>;

fn dispatch(command: Command) -> Result<(), Failure> {
    let (opts, f): (Opts, Handler) = match command {
        Command::Detect(o) => (o, cmd_detect),
        Command::Train(o) => (o, cmd_train),
        Command::Calibrate(o) => (o, cmd_calibrate),
        Command::Drift(o) => (o, cmd_drift),
        Command::Segment(o) => (o, cmd_segment),
    };
    let opts = opts.resolve()?;
    match opts.jobs {
        Some(0) => Err(Failure::User("--jobs must be positive".into())),
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Failure::Internal(e.to_string()))?
            .install(|| f(&opts)),
        None => f(&opts),
    }
}

fn verbosity(command: &Command) -> u8 {
    match command {
        Command::Detect(o)
        | Command::Train(o)
        | Command::Calibrate(o)
        | Command::Drift(o)
        | Command::Segment(o) => o.verbose,
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match verbosity(&cli.command) {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}
