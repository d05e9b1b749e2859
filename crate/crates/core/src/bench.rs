//! Prequential benchmark harness: seeded repeats, grid search by balanced
//! accuracy, and benchmark summaries.
//!
//! Every run walks the stream once in order. Each instance is predicted
//! before its label is used for training, and only the predict/update loop
//! is timed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{format_assignment, Assignment, ConfigError, GridSpec, ModelConfig, ModelKind};
use crate::learners::{LearnerError, OnlineLearner, Prequential};
use crate::metrics::{
    aggregate_report, stars, AggregateReport, DecreasePenalty, GroupSummary, MetricAccumulator, MetricsReport,
    ModelGroups, SizeGroup,
};
use crate::streamgen::{
    load_csv, load_libsvm, mask_stream, CategoricalScheme, CsvOptions, HaphazardStream, LabelColumn, MaskConfig,
    StreamError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("every grid cell failed for {model}")]
    AllCellsFailed { model: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad record {path}: {message}")]
    Record { path: PathBuf, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoaderKind {
    Csv,
    Libsvm,
    /// JSON-lines haphazard stream as written by the simulator.
    Stream,
}

impl std::str::FromStr for LoaderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "libsvm" => Ok(Self::Libsvm),
            "stream" | "jsonl" => Ok(Self::Stream),
            other => Err(format!("unknown loader {other:?} (expected csv, libsvm or stream)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Name used in reports; defaults to the file stem.
    pub name: String,
    pub path: PathBuf,
    pub loader: LoaderKind,
    /// CSV label column: a header name or a 0-based index. `None` is the last column.
    pub label_col: Option<String>,
    /// CSV missing-value markers. `None` uses the loader defaults.
    pub missing: Option<Vec<String>>,
    #[serde(default)]
    pub categorical: Vec<(String, CategoricalScheme)>,
    /// Keep only the first `limit` rows.
    pub limit: Option<usize>,
    #[serde(default = "default_true")]
    pub has_header: bool,
}

fn default_true() -> bool {
    true
}

impl DatasetSpec {
    pub fn new(path: impl Into<PathBuf>, loader: LoaderKind) -> Self {
        let path = path.into();
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self { name, path, loader, label_col: None, missing: None, categorical: Vec::new(), limit: None, has_header: true }
    }

    pub fn csv_options(&self) -> CsvOptions {
        let mut opts = CsvOptions::default();
        if let Some(col) = &self.label_col {
            opts.label_column = match col.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) if col == "last" => LabelColumn::Last,
                Err(_) => LabelColumn::Name(col.clone()),
            };
        }
        if let Some(m) = &self.missing {
            opts.missing_markers = m.clone();
        }
        opts.categorical = self.categorical.clone();
        opts.has_header = self.has_header;
        opts.max_rows = self.limit;
        opts
    }
}

/// Where feature availability comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Availability {
    /// Each cell kept independently with this probability.
    Masked(f64),
    /// The stream as stored.
    Real,
}

impl Availability {
    pub fn label(&self) -> String {
        match self {
            Availability::Masked(p) => format!("{p:.2}"),
            Availability::Real => "real".into(),
        }
    }
}

impl std::str::FromStr for Availability {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("real") {
            return Ok(Availability::Real);
        }
        let p: f64 = s.parse().map_err(|_| format!("availability {s:?} is neither a probability nor \"real\""))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("availability {p} outside [0, 1]"));
        }
        Ok(Availability::Masked(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: ModelConfig,
    pub dataset: DatasetSpec,
    pub availability: Availability,
    /// Seed of the availability mask; shared by all repeats.
    pub mask_seed: u64,
    /// One run per learner seed.
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    /// `repeats` runs for seeded models, a single run for deterministic ones.
    pub fn new(model: ModelConfig, dataset: DatasetSpec, availability: Availability, repeats: usize) -> Self {
        let repeats = if model.kind().is_deterministic() { 1 } else { repeats.max(1) };
        Self { model, dataset, availability, mask_seed: 0, seeds: (0..repeats as u64).collect() }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Invalid("no seeds".into()));
        }
        let unique: BTreeSet<_> = self.seeds.iter().collect();
        if unique.len() != self.seeds.len() {
            return Err(HarnessError::Invalid("duplicate seeds".into()));
        }
        if self.dataset.loader == LoaderKind::Stream && self.availability != Availability::Real {
            return Err(HarnessError::Invalid("a stored stream can only be run with real availability".into()));
        }
        self.model.validate().map_err(|e| HarnessError::Invalid(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form (object keys sorted).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("spec serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn load_stream(&self) -> Result<HaphazardStream, HarnessError> {
        let ds = &self.dataset;
        let mut stream = match ds.loader {
            LoaderKind::Stream => HaphazardStream::read_jsonl(&ds.path)?,
            LoaderKind::Csv | LoaderKind::Libsvm => {
                let mut data = match ds.loader {
                    LoaderKind::Csv => load_csv(&ds.path, &ds.csv_options())?,
                    _ => load_libsvm(&ds.path)?,
                };
                if let Some(n) = ds.limit {
                    data.truncate(n);
                }
                match self.availability {
                    Availability::Masked(p) => mask_stream(&data, &MaskConfig::new(p, self.mask_seed)?),
                    Availability::Real => data.to_stream()?,
                }
            }
        };
        if let Some(n) = ds.limit {
            stream.0.truncate(n);
        }
        if stream.is_empty() {
            return Err(HarnessError::Invalid(format!("dataset {} is empty", ds.path.display())));
        }
        Ok(stream)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Ok { report: MetricsReport },
    Failed { diagnostic: String, processed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    #[serde(flatten)]
    pub status: RunStatus,
}

impl SeedRun {
    pub fn report(&self) -> Option<&MetricsReport> {
        match &self.status {
            RunStatus::Ok { report } => Some(report),
            RunStatus::Failed { .. } => None,
        }
    }
}

/// Population mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub ok_runs: usize,
    pub failed_runs: usize,
    pub balanced_accuracy: MeanStd,
    pub accuracy: MeanStd,
    pub errors: MeanStd,
    /// `None` if any run had an undefined value.
    pub auroc: Option<MeanStd>,
    pub auprc: Option<MeanStd>,
    pub wall_time_s: MeanStd,
}

impl RunSummary {
    pub fn from_runs(runs: &[SeedRun]) -> Option<Self> {
        let reports: Vec<&MetricsReport> = runs.iter().filter_map(SeedRun::report).collect();
        let col = |f: &dyn Fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        let opt = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
            reports.iter().map(|r| f(r)).collect::<Option<Vec<f64>>>().and_then(|v| MeanStd::of(&v))
        };
        Some(Self {
            ok_runs: reports.len(),
            failed_runs: runs.len() - reports.len(),
            balanced_accuracy: col(&|r| r.balanced_accuracy)?,
            accuracy: col(&|r| r.accuracy)?,
            errors: col(&|r| r.errors as f64)?,
            auroc: opt(&|r| r.auroc),
            auprc: opt(&|r| r.auprc),
            wall_time_s: col(&|r| r.wall_time_s)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec_hash: String,
    pub spec: ExperimentSpec,
    pub n_instances: u64,
    pub n_features: u64,
    pub runs: Vec<SeedRun>,
    /// `None` when every run failed.
    pub summary: Option<RunSummary>,
}

impl RunRecord {
    pub fn model(&self) -> ModelKind {
        self.spec.model.kind()
    }

    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|r| r.report().is_some())
    }

    pub fn failures(&self) -> impl Iterator<Item = (u64, &str)> {
        self.runs.iter().filter_map(|r| match &r.status {
            RunStatus::Failed { diagnostic, .. } => Some((r.seed, diagnostic.as_str())),
            RunStatus::Ok { .. } => None,
        })
    }

    fn recompute_summary(&mut self) {
        self.summary = RunSummary::from_runs(&self.runs);
    }

    fn wall_times(&self) -> Vec<Option<f64>> {
        self.runs.iter().map(|r| r.report().map(|r| r.wall_time_s)).collect()
    }

    /// Copy with every wall time set to zero; its serialization is a pure
    /// function of the spec and the stream.
    fn without_times(&self) -> Self {
        let mut out = self.clone();
        for run in &mut out.runs {
            if let RunStatus::Ok { report } = &mut run.status {
                report.wall_time_s = 0.0;
            }
        }
        out.recompute_summary();
        out
    }
}

/// Wall times and creation time for one record, kept apart from the record
/// so that rerunning an experiment reproduces the record file byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingManifest {
    pub spec_hash: String,
    pub created_unix_s: u64,
    pub wall_time_s: Vec<Option<f64>>,
}

pub fn record_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("{hash}.json"))
}

fn timing_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("{hash}.timing.json"))
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

fn read_file(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

/// Write `<hash>.json` (timeless) and `<hash>.timing.json`. Returns the record path.
pub fn save_record(dir: &Path, record: &RunRecord) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    let path = record_path(dir, &record.spec_hash);
    let body = serde_json::to_string_pretty(&record.without_times()).expect("record serializes");
    write_file(&path, &(body + "\n"))?;
    let created_unix_s =
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest =
        TimingManifest { spec_hash: record.spec_hash.clone(), created_unix_s, wall_time_s: record.wall_times() };
    write_file(&timing_path(dir, &record.spec_hash), &serde_json::to_string_pretty(&manifest).expect("serializes"))?;
    Ok(path)
}

/// Read one record and merge its timing manifest if present.
pub fn load_record(path: &Path) -> Result<RunRecord, HarnessError> {
    let bad = |message: String| HarnessError::Record { path: path.to_path_buf(), message };
    let mut record: RunRecord = serde_json::from_str(&read_file(path)?).map_err(|e| bad(e.to_string()))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let tpath = timing_path(dir, &record.spec_hash);
    if tpath.exists() {
        let m: TimingManifest = serde_json::from_str(&read_file(&tpath)?).map_err(|e| bad(e.to_string()))?;
        if m.wall_time_s.len() != record.runs.len() {
            return Err(bad("timing manifest does not match runs".into()));
        }
        for (run, t) in record.runs.iter_mut().zip(m.wall_time_s) {
            if let (RunStatus::Ok { report }, Some(t)) = (&mut run.status, t) {
                report.wall_time_s = t;
            }
        }
        record.recompute_summary();
    }
    Ok(record)
}

/// All records in `dir`, ordered by file name.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let entries = fs::read_dir(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.ends_with(".json") && !name.ends_with(".timing.json")
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| load_record(p)).collect()
}

/// One fresh learner, one ordered pass.
pub fn run_stream(model: &ModelConfig, seed: u64, stream: &HaphazardStream) -> SeedRun {
    let fail = |diagnostic: String, processed: u64| SeedRun { seed, status: RunStatus::Failed { diagnostic, processed } };
    let learner: Box<dyn OnlineLearner> = match model.build(seed) {
        Ok(l) => l,
        Err(e) => return fail(e.to_string(), 0),
    };
    let mut learner = Prequential::new(learner);
    let mut acc = MetricAccumulator::new();
    let start = Instant::now();
    for x in stream {
        let step = learner.predict(x).and_then(|pred| {
            acc.record(pred.score, pred.class, x.label())
                .map_err(|e| LearnerError::Diverged(format!("bad prediction at t={}: {e}", x.t())))?;
            learner.update(x)
        });
        if let Err(e) = step {
            return fail(format!("t={}: {e}", x.t()), learner.processed());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if learner.processed() != stream.len() as u64 {
        return fail(format!("processed {} of {} instances", learner.processed(), stream.len()), learner.processed());
    }
    assert_eq!(acc.errors() + acc.correct(), acc.n(), "errors + correct must equal N");
    assert_eq!(acc.correct(), acc.recount_correct());
    match acc.finish(elapsed) {
        Ok(report) => SeedRun { seed, status: RunStatus::Ok { report } },
        Err(e) => fail(e.to_string(), learner.processed()),
    }
}

fn build_record(spec: &ExperimentSpec, stream: &HaphazardStream, runs: Vec<SeedRun>) -> RunRecord {
    let features: BTreeSet<_> = stream.iter().flat_map(|x| x.ids()).collect();
    let summary = RunSummary::from_runs(&runs);
    RunRecord {
        spec_hash: spec.hash(),
        spec: spec.clone(),
        n_instances: stream.len() as u64,
        n_features: features.len() as u64,
        runs,
        summary,
    }
}

/// All seeds of one experiment, sequentially.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunRecord, HarnessError> {
    spec.validate()?;
    let stream = spec.load_stream()?;
    let runs = spec.seeds.iter().map(|&s| run_stream(&spec.model, s, &stream)).collect();
    Ok(build_record(spec, &stream, runs))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| HarnessError::Pool(e.to_string()))
}

/// Several experiments with every (experiment, seed) cell on a pool of
/// `jobs` threads. Output is independent of `jobs`.
pub fn run_experiments(specs: &[ExperimentSpec], jobs: usize) -> Result<Vec<RunRecord>, HarnessError> {
    let mut streams = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        streams.push(spec.load_stream()?);
    }
    let cells: Vec<(usize, u64)> =
        specs.iter().enumerate().flat_map(|(i, s)| s.seeds.iter().map(move |&seed| (i, seed))).collect();
    let runs: Vec<SeedRun> =
        pool(jobs)?.install(|| cells.par_iter().map(|&(i, seed)| run_stream(&specs[i].model, seed, &streams[i])).collect());
    let mut runs = runs.into_iter();
    Ok(specs
        .iter()
        .zip(&streams)
        .map(|(spec, stream)| build_record(spec, stream, runs.by_ref().take(spec.seeds.len()).collect()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub assignment: Vec<(String, String)>,
    /// Mean balanced accuracy over the seeds; `None` if the cell failed.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: Assignment,
    pub best_config: ModelConfig,
    pub best_score: f64,
    pub cells: Vec<GridCell>,
}

/// Evaluate every cell of `grid` on the stream of `base` (its model config
/// supplies the values of keys the grid does not list) and return the cell
/// with the highest mean balanced accuracy. Ties go to the earliest cell in
/// enumeration order; failed cells score minus infinity.
pub fn grid_search(grid: &GridSpec, base: &ExperimentSpec, jobs: usize) -> Result<GridResult, HarnessError> {
    if base.model.kind() != grid.model {
        return Err(HarnessError::Invalid(format!("grid is for {} but base config is {}", grid.model, base.model.kind())));
    }
    let assignments = grid.assignments();
    let configs =
        assignments.iter().map(|a| base.model.with_overrides(a)).collect::<Result<Vec<_>, ConfigError>>()?;
    let mut probe = base.clone();
    for cfg in &configs {
        probe.model = cfg.clone();
        probe.validate()?;
    }
    let stream = base.load_stream()?;
    let cells: Vec<(usize, u64)> =
        (0..configs.len()).flat_map(|i| base.seeds.iter().map(move |&s| (i, s))).collect();
    let runs: Vec<SeedRun> =
        pool(jobs)?.install(|| cells.par_iter().map(|&(i, seed)| run_stream(&configs[i], seed, &stream)).collect());
    let per_cell = base.seeds.len();
    let mut out = Vec::with_capacity(configs.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, chunk) in runs.chunks(per_cell).enumerate() {
        let score = if chunk.iter().all(|r| r.report().is_some()) {
            RunSummary::from_runs(chunk).map(|s| s.balanced_accuracy.mean)
        } else {
            for r in chunk {
                if let RunStatus::Failed { diagnostic, .. } = &r.status {
                    log::warn!("grid cell {} seed {} failed: {diagnostic}", format_assignment(&assignments[i]), r.seed);
                }
            }
            None
        };
        let s = score.unwrap_or(f64::NEG_INFINITY);
        if s > best.map_or(f64::NEG_INFINITY, |b| b.1) {
            best = Some((i, s));
        }
        out.push(GridCell {
            assignment: assignments[i].iter().map(|(k, v)| (k.clone(), v.to_string())).collect(),
            score,
        });
    }
    let (i, best_score) = best.ok_or_else(|| HarnessError::AllCellsFailed { model: grid.model.to_string() })?;
    Ok(GridResult { best: assignments[i].clone(), best_config: configs[i].clone(), best_score, cells: out })
}

/// How records are assigned to dataset groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    /// Dataset name to group; other datasets are grouped by instance count.
    pub overrides: BTreeMap<String, SizeGroup>,
    /// Low- and high-dimensional dataset of equal length for the
    /// feature-scalability ratio.
    pub feature_pair: Option<(String, String)>,
    /// Availability at which the feature pair is compared.
    pub feature_pair_p: f64,
    pub penalty: DecreasePenalty,
}

impl Default for Grouping {
    fn default() -> Self {
        Self {
            overrides: BTreeMap::new(),
            feature_pair: Some(("SUSY".into(), "HIGGS".into())),
            feature_pair_p: 0.5,
            penalty: DecreasePenalty::default(),
        }
    }
}

impl Grouping {
    pub fn group_of(&self, record: &RunRecord) -> SizeGroup {
        self.overrides
            .get(&record.spec.dataset.name)
            .copied()
            .unwrap_or_else(|| SizeGroup::from_instances(record.n_instances as usize))
    }
}

/// One model on one (dataset, availability) cell; rates in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub model: String,
    pub bacc: f64,
    pub bacc_std: f64,
    pub time_s: f64,
    pub errors: f64,
    pub accuracy: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub runs: usize,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dataset: String,
    pub availability: String,
    pub group: SizeGroup,
    pub rows: Vec<CellRow>,
    pub winners: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stars {
    pub performance: Option<u8>,
    pub data_scalability: Option<u8>,
    pub prediction_consistency: Option<u8>,
    pub speed: Option<u8>,
    pub feature_scalability: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub groups: ModelGroups,
    pub aggregate: AggregateReport,
    pub stars: Stars,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub cells: Vec<CellSummary>,
    pub win_counts: BTreeMap<String, usize>,
    pub models: BTreeMap<String, ModelSummary>,
}

impl BenchmarkReport {
    pub const CSV_HEADER: &'static str = "dataset,p,group,model,bAcc,std,Time,Err,Acc,ROC,PRC,runs,failed,winner";

    /// One line per (dataset, availability, model), in the report's order.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for cell in &self.cells {
            for r in &cell.rows {
                out.push_str(&format!(
                    "{},{},{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{},{},{},{},{}\n",
                    cell.dataset,
                    cell.availability,
                    group_name(cell.group),
                    r.model,
                    r.bacc,
                    r.bacc_std,
                    r.time_s,
                    r.errors,
                    r.accuracy,
                    opt(r.auroc),
                    opt(r.auprc),
                    r.runs,
                    r.failed_runs,
                    u8::from(cell.winners.contains(&r.model)),
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn group_name(g: SizeGroup) -> &'static str {
    match g {
        SizeGroup::Small => "small",
        SizeGroup::Medium => "medium",
        SizeGroup::Large => "large",
    }
}

/// (bAcc, std if seeded, time) of one cell.
type GroupPoint = (f64, Option<f64>, f64);

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Win counts per (dataset, availability) cell and per-model group
/// summaries. A pure function of the records: the same records always give
/// the same bytes from [`BenchmarkReport::to_csv`] and [`BenchmarkReport::to_json`].
pub fn summarize(records: &[RunRecord], grouping: &Grouping) -> BenchmarkReport {
    // (dataset, availability) -> model -> record
    let mut by_cell: BTreeMap<(String, String), BTreeMap<String, &RunRecord>> = BTreeMap::new();
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.spec_hash.cmp(&b.spec_hash));
    for r in sorted {
        if r.summary.is_none() {
            log::warn!("record {} has no successful run; skipped", r.spec_hash);
            continue;
        }
        let key = (r.spec.dataset.name.clone(), r.spec.availability.label());
        let cell = by_cell.entry(key.clone()).or_default();
        let model = r.model().to_string();
        if cell.contains_key(&model) {
            log::warn!("duplicate record for {model} on {} p={}; keeping the first", key.0, key.1);
            continue;
        }
        cell.insert(model, r);
    }

    let mut cells = Vec::new();
    let mut win_counts: BTreeMap<String, usize> = BTreeMap::new();
    // model -> group -> (bAcc, std if seeded, time)
    let mut per_group: BTreeMap<String, BTreeMap<SizeGroup, Vec<GroupPoint>>> = BTreeMap::new();
    let mut pair_times: BTreeMap<String, (Option<f64>, Option<f64>)> = BTreeMap::new();

    for ((dataset, availability), models) in &by_cell {
        let group = grouping.group_of(models.values().next().expect("cell has a record"));
        let mut rows = Vec::new();
        for (model, r) in models {
            let s = r.summary.as_ref().expect("filtered above");
            let row = CellRow {
                model: model.clone(),
                bacc: s.balanced_accuracy.mean * 100.0,
                bacc_std: s.balanced_accuracy.std * 100.0,
                time_s: s.wall_time_s.mean,
                errors: s.errors.mean,
                accuracy: s.accuracy.mean * 100.0,
                auroc: s.auroc.map(|m| m.mean * 100.0),
                auprc: s.auprc.map(|m| m.mean * 100.0),
                runs: s.ok_runs,
                failed_runs: s.failed_runs,
            };
            let std = (!r.model().is_deterministic()).then_some(row.bacc_std);
            per_group.entry(model.clone()).or_default().entry(group).or_default().push((row.bacc, std, row.time_s));
            if let Some((lo, hi)) = &grouping.feature_pair {
                if r.spec.availability == Availability::Masked(grouping.feature_pair_p) {
                    let slot = pair_times.entry(model.clone()).or_default();
                    if dataset == lo {
                        slot.0 = Some(row.time_s);
                    } else if dataset == hi {
                        slot.1 = Some(row.time_s);
                    }
                }
            }
            rows.push(row);
        }
        let best = rows.iter().map(|r| r.bacc).fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<String> = rows.iter().filter(|r| r.bacc == best).map(|r| r.model.clone()).collect();
        for w in &winners {
            *win_counts.entry(w.clone()).or_default() += 1;
        }
        for r in &rows {
            win_counts.entry(r.model.clone()).or_default();
        }
        cells.push(CellSummary { dataset: dataset.clone(), availability: availability.clone(), group, rows, winners });
    }

    let mut models = BTreeMap::new();
    for (model, groups_map) in &per_group {
        let mut groups = ModelGroups::default();
        for g in SizeGroup::ALL {
            match groups_map.get(&g) {
                Some(v) if !v.is_empty() => {
                    let stds: Option<Vec<f64>> = v.iter().map(|x| x.1).collect();
                    groups.set(
                        g,
                        GroupSummary {
                            mean_bacc: mean(&v.iter().map(|x| x.0).collect::<Vec<_>>()),
                            mean_std: stds.map(|s| mean(&s)),
                            mean_time: mean(&v.iter().map(|x| x.2).collect::<Vec<_>>()),
                        },
                    );
                }
                _ => log::warn!("{model}: no records in the {} group; group omitted", group_name(g)),
            }
        }
        if let Some(&(lo, hi)) = pair_times.get(model) {
            groups.low_dim_time = lo;
            groups.high_dim_time = hi;
        }
        let aggregate = aggregate_report(&groups, grouping.penalty);
        models.insert(model.clone(), (groups, aggregate));
    }

    let perfs: Vec<f64> = models.values().filter_map(|(_, a)| a.performance).collect();
    let worst = perfs.iter().copied().fold(f64::INFINITY, f64::min);
    let best = perfs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let models = models
        .into_iter()
        .map(|(m, (groups, aggregate))| {
            let stars = Stars {
                performance: aggregate.performance.map(|p| stars::performance(p, worst, best)),
                data_scalability: aggregate.data_scalability.map(stars::data_scalability),
                prediction_consistency: aggregate.prediction_consistency.map(stars::prediction_consistency),
                speed: aggregate.average_time.map(stars::speed),
                feature_scalability: aggregate.feature_scalability.map(stars::feature_scalability),
            };
            (m, ModelSummary { groups, aggregate, stars })
        })
        .collect();
    BenchmarkReport { cells, win_counts, models }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_grid_file;
    use crate::learners::{Nb3Config, OlvfConfig};
    use std::io::Write;

    fn write_csv(rows: usize, dim: usize, seed: u64) -> tempfile::NamedTempFile {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        let header: Vec<String> = (0..dim).map(|j| format!("f{j}")).chain(["class".into()]).collect();
        writeln!(f, "{}", header.join(",")).unwrap();
        for _ in 0..rows {
            let y: u8 = rng.gen_range(0..2);
            let mut cells: Vec<String> = Vec::new();
            for j in 0..dim {
                let signal = if j < 2 { f64::from(y) * 2.0 - 1.0 } else { 0.0 };
                cells.push(format!("{:.4}", signal + rng.gen_range(-1.5..1.5)));
            }
            cells.push(y.to_string());
            writeln!(f, "{}", cells.join(",")).unwrap();
        }
        f.flush().unwrap();
        f
    }

    fn spec(model: ModelConfig, file: &tempfile::NamedTempFile, p: f64, seeds: Vec<u64>) -> ExperimentSpec {
        ExperimentSpec {
            model,
            dataset: DatasetSpec::new(file.path(), LoaderKind::Csv),
            availability: Availability::Masked(p),
            mask_seed: 7,
            seeds,
        }
    }

    fn fake_record(model: ModelKind, dataset: &str, n: u64, p: f64, baccs: &[f64], time: f64) -> RunRecord {
        let runs: Vec<SeedRun> = baccs
            .iter()
            .enumerate()
            .map(|(i, &b)| SeedRun {
                seed: i as u64,
                status: RunStatus::Ok {
                    report: MetricsReport {
                        n,
                        errors: 0,
                        accuracy: b,
                        balanced_accuracy: b,
                        auroc: None,
                        auprc: None,
                        degenerate: false,
                        wall_time_s: time,
                    },
                },
            })
            .collect();
        let mut ds = DatasetSpec::new(format!("{dataset}.csv"), LoaderKind::Csv);
        ds.name = dataset.into();
        let spec = ExperimentSpec {
            model: model.default_config(),
            dataset: ds,
            availability: Availability::Masked(p),
            mask_seed: 0,
            seeds: (0..baccs.len() as u64).collect(),
        };
        let summary = RunSummary::from_runs(&runs);
        RunRecord { spec_hash: spec.hash(), spec, n_instances: n, n_features: 8, runs, summary }
    }

    #[test]
    fn mean_std_is_population() {
        let m = MeanStd::of(&[1.0, 3.0]).unwrap();
        assert_eq!((m.mean, m.std), (2.0, 1.0));
        assert_eq!(MeanStd::of(&[0.7]).unwrap().std, 0.0);
        assert!(MeanStd::of(&[]).is_none());
    }

    #[test]
    fn deterministic_model_two_seeds_zero_std() {
        let f = write_csv(300, 6, 1);
        let rec = run_experiment(&spec(ModelConfig::Olvf(OlvfConfig::default()), &f, 0.5, vec![0, 1])).unwrap();
        assert_eq!(rec.runs.len(), 2);
        let (a, b) = (rec.runs[0].report().unwrap(), rec.runs[1].report().unwrap());
        assert_eq!(a.balanced_accuracy, b.balanced_accuracy);
        assert_eq!(a.errors, b.errors);
        assert_eq!(a.auroc, b.auroc);
        assert_eq!(rec.summary.unwrap().balanced_accuracy.std, 0.0);
    }

    #[test]
    fn repeats_give_one_report_each() {
        let f = write_csv(120, 4, 2);
        let s = ExperimentSpec::new(
            ModelKind::DynFo.default_config(),
            DatasetSpec::new(f.path(), LoaderKind::Csv),
            Availability::Masked(0.75),
            5,
        );
        assert_eq!(s.seeds.len(), 5);
        let rec = run_experiment(&s).unwrap();
        assert_eq!(rec.runs.len(), 5);
        assert!(rec.all_ok());
        for r in &rec.runs {
            let rep = r.report().unwrap();
            assert_eq!(rep.n, 120);
        }
        let det = ExperimentSpec::new(ModelKind::Nb3.default_config(), s.dataset.clone(), s.availability, 5);
        assert_eq!(det.seeds, vec![0]);
    }

    #[test]
    fn nb3_small_stream_is_fast() {
        let f = write_csv(198, 33, 3);
        let s = spec(ModelKind::Nb3.default_config(), &f, 0.5, vec![0]);
        let start = Instant::now();
        let rec = run_experiment(&s).unwrap();
        assert!(start.elapsed().as_secs_f64() < 1.0);
        assert!(rec.summary.unwrap().wall_time_s.mean < 1.0);
        assert_eq!(rec.n_instances, 198);
    }

    #[test]
    fn spec_hash_is_stable_and_sensitive() {
        let f = write_csv(10, 2, 4);
        let a = spec(ModelKind::Nb3.default_config(), &f, 0.5, vec![0]);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.mask_seed = 8;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn parallel_runs_match_sequential() {
        let f = write_csv(150, 5, 5);
        let specs = vec![
            spec(ModelKind::Ocds.default_config(), &f, 0.5, vec![0, 1, 2]),
            spec(ModelKind::Orf3v.default_config(), &f, 0.75, vec![3, 4]),
        ];
        let seq: Vec<RunRecord> = specs.iter().map(|s| run_experiment(s).unwrap()).collect();
        let par = run_experiments(&specs, 4).unwrap();
        for (a, b) in seq.iter().zip(&par) {
            assert_eq!(a.without_times(), b.without_times());
        }
    }

    #[test]
    fn stored_stream_needs_real_availability() {
        let mut s = spec(ModelKind::Nb3.default_config(), &write_csv(5, 2, 6), 0.5, vec![0]);
        s.dataset.loader = LoaderKind::Stream;
        assert!(matches!(s.validate(), Err(HarnessError::Invalid(_))));
        s.seeds = vec![];
        assert!(s.validate().is_err());
    }

    #[test]
    fn single_cell_grid_returns_it() {
        let f = write_csv(100, 4, 7);
        let grid = &parse_grid_file("[olvf]\nC = [0.1]\n").unwrap()[0];
        let res = grid_search(grid, &spec(ModelKind::Olvf.default_config(), &f, 0.5, vec![0]), 1).unwrap();
        assert_eq!(format_assignment(&res.best), "C=0.1");
        assert_eq!(res.cells.len(), 1);
    }

    #[test]
    fn failed_cells_score_minus_infinity() {
        let f = write_csv(100, 4, 8);
        // capacity of 1 aux node fails as soon as a second feature arrives
        let grid = &parse_grid_file("[auxdrop]\nn_neuron_aux_layer = [1, 8]\n").unwrap()[0];
        let base = spec(ModelKind::AuxDrop.default_config(), &f, 0.9, vec![0]);
        let res = grid_search(grid, &base, 2).unwrap();
        assert_eq!(res.cells[0].score, None);
        assert_eq!(format_assignment(&res.best), "n_neuron_aux_layer=8");

        let all_bad = &parse_grid_file("[auxdrop]\nn_neuron_aux_layer = [1, 2]\n").unwrap()[0];
        assert!(matches!(grid_search(all_bad, &base, 2), Err(HarnessError::AllCellsFailed { .. })));
    }

    #[test]
    fn grid_ties_go_to_first_cell() {
        let f = write_csv(80, 3, 9);
        // var_floor far below any sample variance leaves predictions unchanged
        let grid = &parse_grid_file("[nb3]\nvar_floor = [1e-9, 1e-8]\n").unwrap()[0];
        let res = grid_search(grid, &spec(ModelKind::Nb3.default_config(), &f, 0.5, vec![0]), 2).unwrap();
        assert_eq!(res.cells[0].score, res.cells[1].score);
        assert_eq!(res.best, grid.assignments()[0]);
    }

    #[test]
    fn nb3_grid_matches_exhaustive_oracle() {
        // two informative features among twelve: small n should help
        let f = write_csv(400, 12, 10);
        let base = spec(ModelConfig::Nb3(Nb3Config::default()), &f, 0.75, vec![0]);
        let grid = &parse_grid_file("[nb3]\nn = [0.2, 0.4, 0.6, 0.8, 1.0]\n").unwrap()[0];
        let res = grid_search(grid, &base, 3).unwrap();

        let mut oracle_best: Option<(String, f64)> = None;
        for (cell, a) in res.cells.iter().zip(grid.assignments()) {
            let mut s = base.clone();
            s.model = base.model.with_overrides(&a).unwrap();
            let b = run_experiment(&s).unwrap().summary.unwrap().balanced_accuracy.mean;
            assert_eq!(cell.score, Some(b));
            if oracle_best.as_ref().is_none_or(|(_, best)| b > *best) {
                oracle_best = Some((format_assignment(&a), b));
            }
        }
        let (name, score) = oracle_best.unwrap();
        assert_eq!(format_assignment(&res.best), name);
        assert_eq!(res.best_score, score);
    }

    #[test]
    fn one_model_wins_every_cell() {
        let recs = vec![
            fake_record(ModelKind::Olvf, "a", 100, 0.25, &[0.6], 1.0),
            fake_record(ModelKind::Olvf, "a", 100, 0.5, &[0.7], 1.0),
            fake_record(ModelKind::Olvf, "b", 100, 0.5, &[0.8], 1.0),
        ];
        let rep = summarize(&recs, &Grouping::default());
        assert_eq!(rep.cells.len(), 3);
        assert_eq!(rep.win_counts["olvf"], 3);
    }

    #[test]
    fn win_counts_follow_mean_bacc() {
        let recs = vec![
            fake_record(ModelKind::Olvf, "a", 100, 0.5, &[0.6], 1.0),
            fake_record(ModelKind::DynFo, "a", 100, 0.5, &[0.7, 0.5, 0.7], 1.0),
            fake_record(ModelKind::Olvf, "b", 100, 0.5, &[0.8], 1.0),
            fake_record(ModelKind::DynFo, "b", 100, 0.5, &[0.9, 0.6], 1.0),
        ];
        let rep = summarize(&recs, &Grouping::default());
        assert_eq!(rep.win_counts["olvf"], 1);
        assert_eq!(rep.win_counts["dynfo"], 1);
    }

    #[test]
    fn published_group_means_give_published_performance() {
        // NB3 and Aux-Drop group means; NB3 average is 52.82 and Aux-Drop 59.49
        let mut recs = Vec::new();
        for (kind, vals) in [(ModelKind::Nb3, [53.95, 54.52, 50.00]), (ModelKind::AuxDrop, [59.33, 59.97, 59.16])] {
            for (ds, n, v) in [("small", 500, vals[0]), ("medium", 50_000, vals[1]), ("large", 500_000, vals[2])] {
                recs.push(fake_record(kind, ds, n, 0.5, &[v / 100.0], 1.0));
            }
        }
        let rep = summarize(&recs, &Grouping::default());
        let nb3 = &rep.models["nb3"];
        assert!((nb3.groups.small.unwrap().mean_bacc - 53.95).abs() < 0.01);
        assert!((nb3.aggregate.performance.unwrap() - 52.82).abs() < 0.01);
        assert!((nb3.aggregate.data_scalability.unwrap() - 0.02).abs() < 0.01);
        assert!((rep.models["auxdrop"].aggregate.performance.unwrap() - 59.49).abs() < 0.01);
        assert!(nb3.groups.small.unwrap().mean_std.is_none());
        assert_eq!(rep.models["auxdrop"].groups.small.unwrap().mean_std, Some(0.0));
    }

    #[test]
    fn empty_group_is_omitted() {
        let recs = vec![fake_record(ModelKind::Olvf, "a", 100, 0.5, &[0.6], 1.0)];
        let rep = summarize(&recs, &Grouping::default());
        let m = &rep.models["olvf"];
        assert!(m.groups.small.is_some());
        assert!(m.groups.medium.is_none() && m.groups.large.is_none());
        assert!(m.aggregate.performance.is_none());
        assert!(!m.aggregate.gaps.is_empty());
    }

    #[test]
    fn overrides_and_feature_pair() {
        let recs = vec![
            fake_record(ModelKind::Olvf, "SUSY", 100, 0.5, &[0.7], 2.0),
            fake_record(ModelKind::Olvf, "HIGGS", 100, 0.5, &[0.6], 3.0),
            fake_record(ModelKind::Olvf, "HIGGS", 100, 0.25, &[0.6], 9.0),
        ];
        let mut g = Grouping::default();
        g.overrides.insert("SUSY".into(), SizeGroup::Large);
        let rep = summarize(&recs, &g);
        let m = &rep.models["olvf"];
        assert!(m.groups.large.is_some());
        assert_eq!(m.aggregate.feature_scalability, Some(1.5));
    }

    #[test]
    fn report_is_pure_function_of_records() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_csv(120, 4, 11);
        let specs = vec![
            spec(ModelKind::Nb3.default_config(), &f, 0.5, vec![0]),
            spec(ModelKind::DynFo.default_config(), &f, 0.5, vec![0, 1]),
        ];
        for r in run_experiments(&specs, 2).unwrap() {
            save_record(dir.path(), &r).unwrap();
        }
        let a = summarize(&load_records(dir.path()).unwrap(), &Grouping::default());
        let b = summarize(&load_records(dir.path()).unwrap(), &Grouping::default());
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.cells[0].rows.len(), 2);
        assert!(a.to_csv().starts_with(BenchmarkReport::CSV_HEADER));
    }

    #[test]
    fn saved_record_round_trips_with_times() {
        let dir = tempfile::tempdir().unwrap();
        let f = write_csv(60, 3, 12);
        let rec = run_experiment(&spec(ModelKind::Olvf.default_config(), &f, 0.5, vec![0])).unwrap();
        let path = save_record(dir.path(), &rec).unwrap();
        let back = load_record(&path).unwrap();
        assert_eq!(back, rec);
        let body = fs::read_to_string(&path).unwrap();
        let rerun = run_experiment(&rec.spec).unwrap();
        save_record(dir.path(), &rerun).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), body);
    }
}
