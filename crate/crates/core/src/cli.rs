//! The `ambient-risk` command line: a declarative JSON run config and one
//! subcommand per pipeline stage.
//!
//! Every stage reads the inputs named by the config (or the artifacts of
//! earlier stages in the output directory), writes its artifacts into the
//! output directory and records a `<stage>.manifest.json` with the config
//! hash, seeds and SHA-256 digests of inputs and outputs.
//!
//! Exit codes: 0 on success, 1 on validation errors (usage, config, missing
//! or malformed input), 2 on runtime errors. Errors go to stderr as
//! `error[Code]: message`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{self, feature_columns, CohortSplit, FeatureKey, ModalitySelection};
use crate::eval::{self, EvalConfig, MetricsDocument, MetricsRow, ThresholdMode};
use crate::explain::{self, BaselineKind, PlayerKind, PlayerScheme, ShapleyMode};
use crate::features::{self, FeatureConfig, PatientDayRecord, Period};
use crate::ingest::{self, Modality, SensorSample};
use crate::nets::{self, Arch, Checkpoint, CvReport, ModelConfig, TrainConfig};
use crate::stats::{self, TTestVariant};
use crate::synth::{self, SynthConfig};
use crate::{par, svg, SEQ_LEN};

pub const RUN_CONFIG_SCHEMA_VERSION: u32 = 1;
pub const LOG_ENV: &str = "AMBIENT_RISK_LOG";

pub const SENSOR_FILE: &str = "sensor.csv";
pub const LABEL_FILE: &str = "labels.csv";
pub const SYNTH_TRUTH_FILE: &str = "synth_truth.json";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const DAY_FEATURES_CSV: &str = "day_features.csv";
pub const DAY_RECORDS_FILE: &str = "day_records.json";
pub const COHORT_FILE: &str = "cohort.json";
pub const CV_REPORT_FILE: &str = "cv_report.json";
pub const HISTORY_FILE: &str = "train_history.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const ATTR_FEATURE_FILE: &str = "attributions_feature.csv";
pub const ATTR_SUMMARY_FILE: &str = "attribution_summary.csv";
pub const MODALITY_TOTALS_FILE: &str = "modality_totals.json";
pub const ATTR_CELL_FILE: &str = "attributions_cell.csv";
pub const BY_DAY_FILE: &str = "modality_by_day.csv";
pub const DAY_NIGHT_FILE: &str = "day_night_table.csv";
pub const SERIES_FILE: &str = "period_series.csv";
pub const LOS_FILE: &str = "los_histogram.csv";

pub fn model_file(arch: Arch) -> String {
    format!("model_{arch}.json")
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("invalid input {}: {message}", .path.display())]
    InvalidInput { path: PathBuf, message: String },
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Config(_) => "ConfigInvalid",
            CliError::MissingInput(_) => "MissingInput",
            CliError::InvalidInput { .. } => "InvalidInput",
            CliError::Runtime(_) => "Runtime",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 2,
            _ => 1,
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Defaults to `<out_dir>/sensor.csv`.
    pub sensor_csv: Option<PathBuf>,
    /// Defaults to `<out_dir>/labels.csv`.
    pub label_csv: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortOptions {
    pub selection: ModalitySelection,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CohortOptions {
    fn default() -> Self {
        Self {
            selection: ModalitySelection::NoiseOnly,
            test_fraction: 0.34,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    pub architectures: Vec<Arch>,
    /// Explicit grid; when absent each architecture uses the default grid.
    pub grid: Option<Vec<ModelConfig>>,
    pub cv_folds: usize,
    pub cv_seed: u64,
    pub init_seed: u64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            architectures: Arch::ALL.to_vec(),
            grid: None,
            cv_folds: 3,
            cv_seed: 0,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Exact when the player count allows it, sampled otherwise.
    #[default]
    Auto,
    Exact,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainOptions {
    pub baseline: BaselineKind,
    pub feature_mode: FeatureMode,
    pub cell_level: bool,
    pub permutations: usize,
    pub seed: u64,
    /// Explain at most this many test sequences (in id order).
    pub max_instances: Option<usize>,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            baseline: BaselineKind::TrainMean,
            feature_mode: FeatureMode::Auto,
            cell_level: true,
            permutations: 256,
            seed: 0,
            max_instances: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsOptions {
    pub variant: TTestVariant,
    /// Patient whose stream feeds the period series; first id when absent.
    pub series_patient: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub paths: Paths,
    /// Generator settings for `synth`; `pipeline` runs the generator when
    /// no sensor path is configured.
    pub synth: Option<SynthConfig>,
    pub features: FeatureConfig,
    pub cohort: CohortOptions,
    pub model: ModelOptions,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub explain: ExplainOptions,
    pub stats: StatsOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: RUN_CONFIG_SCHEMA_VERSION,
            paths: Paths::default(),
            synth: None,
            features: FeatureConfig::default(),
            cohort: CohortOptions::default(),
            model: ModelOptions::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            explain: ExplainOptions::default(),
            stats: StatsOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != RUN_CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {RUN_CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.cohort.test_fraction > 0.0 && self.cohort.test_fraction < 1.0) {
            return bad("cohort.test_fraction must be in (0, 1)".into());
        }
        if self.model.architectures.is_empty() {
            return bad("model.architectures is empty".into());
        }
        if self.model.cv_folds < 2 {
            return bad("model.cv_folds must be >= 2".into());
        }
        if let Some(grid) = &self.model.grid {
            for c in grid {
                c.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return bad("eval.threshold must be in (0, 1)".into());
        }
        if self.eval.n_bootstrap == 0 {
            return bad("eval.n_bootstrap must be >= 1".into());
        }
        let m = self.explain.permutations;
        if m < 2 || !m.is_multiple_of(2) {
            return bad("explain.permutations must be even and >= 2".into());
        }
        if let Some(s) = &self.synth {
            s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(s) = &mut self.synth {
            s.seed = seed;
        }
        self.cohort.seed = seed;
        self.model.cv_seed = seed;
        self.model.init_seed = seed;
        if let Some(grid) = &mut self.model.grid {
            grid.iter_mut().for_each(|c| c.seed = seed);
        }
        self.train.shuffle_seed = seed;
        self.eval.seed = seed;
        self.explain.seed = seed;
    }

    pub fn seeds(&self) -> BTreeMap<&'static str, u64> {
        let mut m = BTreeMap::new();
        if let Some(s) = &self.synth {
            m.insert("synth", s.seed);
        }
        m.insert("cohort", self.cohort.seed);
        m.insert("cv", self.model.cv_seed);
        m.insert("init", self.model.init_seed);
        m.insert("shuffle", self.train.shuffle_seed);
        m.insert("bootstrap", self.eval.seed);
        m.insert("explain", self.explain.seed);
        m
    }

    /// SHA-256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Parser)]
#[command(name = "ambient-risk", version, about = "Delirium-risk modelling from ambient ICU noise and light")]
pub struct Args {
    /// JSON run config.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Replace every seed in the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for folds, resamples and coalitions.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Output directory (overrides `paths.out_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort.
    Synth,
    /// Validate sensor and label files.
    Ingest,
    /// Compute per-day, per-period level statistics.
    Features,
    /// Patient-level split, scaling and sequence assembly.
    Split,
    /// Cross-validate the grid and train one model per architecture.
    Train,
    /// Bootstrap metrics on the test set.
    Evaluate,
    /// Shapley attributions for the best model.
    Explain,
    /// Day/night comparison, period series and length-of-stay histogram.
    Stats,
    /// Run every stage in order.
    Pipeline,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Ingest => "ingest",
            Command::Features => "features",
            Command::Split => "split",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Explain => "explain",
            Command::Stats => "stats",
            Command::Pipeline => "pipeline",
        }
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = e.render().to_string();
            eprintln!("error[Usage]: {}", msg.trim_start_matches("error: ").trim_end());
            return 1;
        }
    };
    match run(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            e.exit_code()
        }
    }
}

pub fn run(args: &Args) -> Result<()> {
    let (mut cfg, base) = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|_| CliError::MissingInput(path.clone()))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::from_json(&text)?, base)
        }
        None => (RunConfig::default(), PathBuf::new()),
    };
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be >= 1".into()));
        }
    }
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let out = match (&args.out, &cfg.paths.out_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => resolve(o),
        (None, None) => PathBuf::from("ambient-risk-out"),
    };
    let ctx = Ctx {
        sensor: cfg.paths.sensor_csv.as_deref().map(resolve),
        labels: cfg.paths.label_csv.as_deref().map(resolve),
        hash: cfg.hash(),
        cfg,
        out,
    };
    fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    par::with_jobs(args.jobs, || ctx.dispatch(args.command))
}

struct Ctx {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
    sensor: Option<PathBuf>,
    labels: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct StageManifest<'a> {
    tool: &'static str,
    version: &'static str,
    stage: &'static str,
    config_sha256: &'a str,
    seeds: BTreeMap<&'static str, u64>,
    jobs_independent: bool,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files read and written by one stage.
#[derive(Default)]
struct Io {
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl Ctx {
    fn dispatch(&self, cmd: Command) -> Result<()> {
        match cmd {
            Command::Synth => self.stage(cmd, |c, io| c.synth(io)),
            Command::Ingest => self.stage(cmd, |c, io| c.ingest(io)),
            Command::Features => self.stage(cmd, |c, io| c.features(io)),
            Command::Split => self.stage(cmd, |c, io| c.split(io)),
            Command::Train => self.stage(cmd, |c, io| c.train(io)),
            Command::Evaluate => self.stage(cmd, |c, io| c.evaluate(io)),
            Command::Explain => self.stage(cmd, |c, io| c.explain(io)),
            Command::Stats => self.stage(cmd, |c, io| c.stats(io)),
            Command::Pipeline => {
                if self.sensor.is_none() {
                    self.dispatch(Command::Synth)?;
                }
                for stage in [
                    Command::Ingest,
                    Command::Features,
                    Command::Split,
                    Command::Train,
                    Command::Evaluate,
                    Command::Explain,
                    Command::Stats,
                ] {
                    self.dispatch(stage)?;
                }
                Ok(())
            }
        }
    }

    fn stage(&self, cmd: Command, f: impl FnOnce(&Self, &mut Io) -> Result<()>) -> Result<()> {
        log::info!("stage {} -> {}", cmd.name(), self.out.display());
        let mut io = Io::default();
        f(self, &mut io)?;
        let manifest = StageManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            stage: cmd.name(),
            config_sha256: &self.hash,
            seeds: self.cfg.seeds(),
            jobs_independent: true,
            inputs: io.inputs,
            outputs: io.outputs,
        };
        let json = serde_json::to_string_pretty(&manifest).context("serialising manifest")?;
        let path = self.out.join(format!("{}.manifest.json", cmd.name()));
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    fn read(&self, io: &mut Io, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|_| CliError::MissingInput(path.to_path_buf()))?;
        io.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: digest(&bytes),
        });
        Ok(bytes)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, io: &mut Io, name: &str) -> Result<T> {
        let path = self.out.join(name);
        let bytes = self.read(io, &path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::InvalidInput {
            path,
            message: e.to_string(),
        })
    }

    fn write(&self, io: &mut Io, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let bytes = bytes.as_ref();
        let path = self.out.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        io.outputs.push(FileDigest {
            path: name.to_string(),
            sha256: digest(bytes),
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&self, io: &mut Io, name: &str, value: &T) -> Result<()> {
        let mut json = serde_json::to_string_pretty(value).with_context(|| format!("serialising {name}"))?;
        json.push('\n');
        self.write(io, name, json)
    }

    fn sensor_path(&self) -> PathBuf {
        self.sensor.clone().unwrap_or_else(|| self.out.join(SENSOR_FILE))
    }

    fn label_path(&self) -> PathBuf {
        self.labels.clone().unwrap_or_else(|| self.out.join(LABEL_FILE))
    }

    fn load_samples(&self, io: &mut Io) -> Result<Vec<SensorSample>> {
        let path = self.sensor_path();
        let bytes = self.read(io, &path)?;
        ingest::parse_sensor_csv(&bytes).map_err(|e| CliError::InvalidInput {
            path,
            message: e.to_string(),
        })
    }

    fn load_labels(&self, io: &mut Io) -> Result<Vec<ingest::DayLabel>> {
        let path = self.label_path();
        let bytes = self.read(io, &path)?;
        ingest::parse_label_csv(&bytes).map_err(|e| CliError::InvalidInput {
            path,
            message: e.to_string(),
        })
    }

    fn synth(&self, io: &mut Io) -> Result<()> {
        let cfg = self.cfg.synth.clone().unwrap_or_default();
        let out = synth::generate_cohort(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
        log::info!("generated {} patients", out.manifest.patients.len());
        self.write(io, SENSOR_FILE, &out.sensor_csv)?;
        self.write(io, LABEL_FILE, &out.label_csv)?;
        self.write_json(io, SYNTH_TRUTH_FILE, &out.manifest)
    }

    fn ingest(&self, io: &mut Io) -> Result<()> {
        let samples = self.load_samples(io)?;
        let labels = self.load_labels(io)?;
        let report = ingest::validate_streams(&samples);
        let dup: u64 = report.groups.iter().map(|g| g.duplicate_timestamps).sum();
        if dup > 0 {
            log::warn!("{dup} duplicate timestamps across streams");
        }
        log::info!(
            "{} samples, {} patients, {} labels",
            report.total_samples,
            report.patient_count(),
            labels.len()
        );
        #[derive(Serialize)]
        struct IngestSummary<'a> {
            streams: &'a ingest::StreamReport,
            label_rows: usize,
            label_patients: usize,
        }
        let label_patients = labels
            .iter()
            .map(|l| l.patient_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        self.write_json(
            io,
            INGEST_REPORT_FILE,
            &IngestSummary {
                streams: &report,
                label_rows: labels.len(),
                label_patients,
            },
        )
    }

    fn features(&self, io: &mut Io) -> Result<()> {
        let samples = self.load_samples(io)?;
        let labels = self.load_labels(io)?;
        let records = features::build_day_records(&samples, &labels, &self.cfg.features).map_err(|e| {
            CliError::InvalidInput {
                path: self.label_path(),
                message: e.to_string(),
            }
        })?;
        log::info!("{} patient-days", records.len());
        self.write(io, DAY_FEATURES_CSV, features::records_to_csv(&records))?;
        self.write_json(io, DAY_RECORDS_FILE, &records)
    }

    fn split(&self, io: &mut Io) -> Result<()> {
        let records: Vec<PatientDayRecord> = self.read_json(io, DAY_RECORDS_FILE)?;
        let c = &self.cfg.cohort;
        let split = cohort::build_cohort(&records, c.selection, c.test_fraction, c.seed).map_err(|e| {
            CliError::InvalidInput {
                path: self.out.join(DAY_RECORDS_FILE),
                message: e.to_string(),
            }
        })?;
        log::info!("split: {} train, {} test sequences", split.train.len(), split.test.len());
        self.write(io, COHORT_FILE, split.to_json())
    }

    fn grid(&self, arch: Arch) -> Vec<ModelConfig> {
        match &self.cfg.model.grid {
            Some(grid) => grid.iter().copied().filter(|c| c.arch == arch).collect(),
            None => nets::default_grid(arch, self.cfg.model.init_seed),
        }
    }

    fn train(&self, io: &mut Io) -> Result<()> {
        let split: CohortSplit = self.read_json(io, COHORT_FILE)?;
        let mut reports = Vec::new();
        let mut histories = BTreeMap::new();
        for &arch in &self.cfg.model.architectures {
            let grid = self.grid(arch);
            if grid.is_empty() {
                return Err(CliError::Config(format!("model.grid has no {arch} entry")));
            }
            let report = nets::cross_validate(&grid, &split.train, self.cfg.model.cv_folds, self.cfg.model.cv_seed, &self.cfg.train)
                .with_context(|| format!("cross-validating {arch}"))?;
            let best = report.best_config();
            log::info!("{arch}: best {best:?} (mean cv auc {:?})", report.results[report.best].mean_auc);
            let (params, history) =
                nets::train(&best, &self.cfg.train, &split.train).with_context(|| format!("training {arch}"))?;
            self.write(io, &model_file(arch), Checkpoint::from_params(&params, Some(self.cfg.train)).to_json())?;
            histories.insert(arch.as_str(), history);
            reports.push(report);
        }
        self.write_json(io, CV_REPORT_FILE, &reports)?;
        self.write_json(io, HISTORY_FILE, &histories)
    }

    fn load_model(&self, io: &mut Io, arch: Arch) -> Result<nets::ModelParams> {
        let path = self.out.join(model_file(arch));
        let bytes = self.read(io, &path)?;
        let text = String::from_utf8_lossy(&bytes);
        Checkpoint::from_json(&text)
            .and_then(|c| c.to_params())
            .map_err(|e| CliError::InvalidInput {
                path,
                message: e.to_string(),
            })
    }

    fn evaluate(&self, io: &mut Io) -> Result<()> {
        let split: CohortSplit = self.read_json(io, COHORT_FILE)?;
        let reports: Vec<CvReport> = self.read_json(io, CV_REPORT_FILE)?;
        let mut rows = Vec::new();
        for report in &reports {
            let best = report.best_config();
            let model = self.load_model(io, best.arch)?;
            let mut ecfg = self.cfg.eval;
            if ecfg.threshold_mode == ThresholdMode::Youden {
                let scores = eval::predict_all(&model, &split.train);
                let labels: Vec<u8> = split.train.iter().map(|s| s.label).collect();
                ecfg.threshold = eval::youden_threshold(&scores, &labels).context("selecting threshold")?;
            }
            let metrics = eval::evaluate(&model, &split.test, &ecfg).map_err(|e| CliError::InvalidInput {
                path: self.out.join(COHORT_FILE),
                message: format!("test set: {e}"),
            })?;
            log::info!("{}: test auc {:.4}", best.arch, metrics.auc.point);
            rows.push(MetricsRow {
                data: split.selection.as_str().to_string(),
                method: best.arch.as_str().to_string(),
                config: Some(best),
                report: metrics,
            });
        }
        self.write_json(io, METRICS_FILE, &MetricsDocument::new(rows))
    }

    fn explain(&self, io: &mut Io) -> Result<()> {
        let split: CohortSplit = self.read_json(io, COHORT_FILE)?;
        let reports: Vec<CvReport> = self.read_json(io, CV_REPORT_FILE)?;
        let report = best_report(&reports).ok_or_else(|| CliError::Config("no trained architecture".into()))?;
        let best = report.best_config();
        log::info!("explaining {} (best mean cv auc)", best.arch);
        let model = self.load_model(io, best.arch)?;
        let opts = &self.cfg.explain;

        let f = split.n_features();
        let baseline = match opts.baseline {
            BaselineKind::TrainMean => explain::train_mean_baseline(&split.train),
            BaselineKind::Zero => vec![0.0; SEQ_LEN * f],
        };
        let mut test = split.test.clone();
        if let Some(n) = opts.max_instances {
            test.truncate(n);
        }
        let columns: Vec<FeatureKey> = feature_columns(split.selection);
        let names = &split.feature_names;

        let scheme = PlayerScheme::new(PlayerKind::FeatureLevel, f, baseline.clone()).context("feature scheme")?;
        let exact = match opts.feature_mode {
            FeatureMode::Exact => true,
            FeatureMode::Sampled => false,
            FeatureMode::Auto => f <= explain::MAX_EXACT_PLAYERS,
        };
        let mode = if exact {
            ShapleyMode::Exact
        } else {
            ShapleyMode::Sampled {
                permutations: opts.permutations,
                seed: opts.seed,
            }
        };
        let set = explain::explain_sequences(&model, &test, &scheme, names, mode).context("feature-level attribution")?;
        let summary = explain::summarize(&set);
        self.write(io, ATTR_FEATURE_FILE, explain::attribution_csv(&set))?;
        self.write(io, ATTR_SUMMARY_FILE, explain::summary_csv(&summary))?;
        let totals = explain::modality_totals(&set, &columns).context("modality totals")?;
        self.write_json(io, MODALITY_TOTALS_FILE, &totals)?;
        let top: Vec<_> = summary.iter().take(15).collect();
        self.write(
            io,
            "attribution_summary.svg",
            svg::bar_chart(
                &format!("Feature importance ({})", best.arch),
                "mean |phi|",
                &top.iter().map(|r| format!("{} ({})", r.feature, r.direction.as_str())).collect::<Vec<_>>(),
                &[svg::Series::new("importance", top.iter().map(|r| r.importance).collect())],
            ),
        )?;

        if opts.cell_level {
            let cells = PlayerScheme::new(PlayerKind::CellLevel, f, baseline).context("cell scheme")?;
            let cell_set = explain::explain_sequences(
                &model,
                &test,
                &cells,
                names,
                ShapleyMode::Sampled {
                    permutations: opts.permutations,
                    seed: opts.seed,
                },
            )
            .context("cell-level attribution")?;
            self.write(io, ATTR_CELL_FILE, explain::attribution_csv(&cell_set))?;
            let days = explain::modality_by_day(&cell_set, &columns).context("per-day aggregation")?;
            self.write(io, BY_DAY_FILE, explain::by_day_csv(&days))?;
            self.write(
                io,
                "modality_by_day.svg",
                svg::bar_chart(
                    "Noise versus light attribution by ICU day",
                    "sum of mean |phi|",
                    &days.iter().map(|d| format!("day {}", d.day)).collect::<Vec<_>>(),
                    &[
                        svg::Series::new("noise", days.iter().map(|d| d.noise_total).collect()),
                        svg::Series::new("light", days.iter().map(|d| d.light_total).collect()),
                    ],
                ),
            )?;
        }
        Ok(())
    }

    fn stats(&self, io: &mut Io) -> Result<()> {
        let samples = self.load_samples(io)?;
        let variant = self.cfg.stats.variant;
        let mut rows = Vec::new();
        for modality in Modality::ALL {
            let (mut day, mut night) = (Vec::new(), Vec::new());
            for s in samples.iter().filter(|s| s.modality == modality) {
                match features::assign_period(s.timestamp).1 {
                    Period::Day => day.push(s.value),
                    Period::Night => night.push(s.value),
                }
            }
            match stats::day_night_comparison(modality.as_str(), &day, &night, variant) {
                Ok(pair) => rows.extend(pair),
                Err(e) => log::warn!("skipping {modality} comparison: {e}"),
            }
        }
        self.write(io, DAY_NIGHT_FILE, stats::comparison_csv(&rows))?;

        let first = samples.iter().filter(|s| s.modality == Modality::Noise).map(|s| &*s.patient_id).min();
        let patient = self.cfg.stats.series_patient.as_deref().or(first);
        if let Some(patient) = patient {
            let stream: Vec<SensorSample> = samples
                .iter()
                .filter(|s| &*s.patient_id == patient && s.modality == Modality::Noise)
                .cloned()
                .collect();
            let points = features::period_summary_series(&stream);
            self.write(io, SERIES_FILE, stats::period_series_csv(&points))?;
            let cats: Vec<String> = points
                .iter()
                .map(|p| format!("{} {}", p.date, p.period.as_str()))
                .collect();
            self.write(
                io,
                "period_series.svg",
                svg::line_chart(
                    &format!("Noise mean and std by period, {patient}"),
                    "dB",
                    &cats,
                    &[svg::Series::new("mean", points.iter().map(|p| p.mean).collect())
                        .with_errors(points.iter().map(|p| p.std).collect())],
                ),
            )?;
        }

        let cohort_path = self.out.join(COHORT_FILE);
        if cohort_path.exists() {
            let split: CohortSplit = self.read_json(io, COHORT_FILE)?;
            let all: Vec<_> = split.train.iter().chain(&split.test).cloned().collect();
            let hist = stats::los_histogram(&all);
            self.write(io, LOS_FILE, hist.to_csv())?;
            self.write(
                io,
                "los_histogram.svg",
                svg::bar_chart(
                    "Length of stay",
                    "patients",
                    &(1..=SEQ_LEN).map(|d| format!("{d} days")).collect::<Vec<_>>(),
                    &[svg::Series::new(
                        "patients",
                        (1..=SEQ_LEN).map(|d| hist.count(d) as f64).collect(),
                    )],
                ),
            )?;
        }
        Ok(())
    }
}

/// The report with the highest best-config mean CV AUC; first on ties.
pub fn best_report(reports: &[CvReport]) -> Option<&CvReport> {
    let score = |r: &CvReport| r.results[r.best].mean_auc.unwrap_or(f64::NEG_INFINITY);
    let mut best: Option<&CvReport> = None;
    for r in reports {
        if best.is_none_or(|b| score(r) > score(b)) {
            best = Some(r);
        }
    }
    best
}

/// Initialises logging from `AMBIENT_RISK_LOG` (default `info`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}
