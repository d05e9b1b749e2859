use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use haphazard::bench::{
    grid_search, load_records, run_experiments, save_record, summarize, Availability, DatasetSpec, ExperimentSpec,
    Grouping, HarnessError, LoaderKind,
};
use haphazard::config::{format_assignment, parse_config_file, parse_grid_file, ModelConfig, ModelKind};
use haphazard::metrics::{carbon_estimate, DecreasePenalty, HardwareProfile, SizeGroup};
use haphazard::streamgen::{load_csv, load_libsvm, mask_stream, Dataset, MaskConfig, StreamError};

const RESULTS_ENV: &str = "HAPHAZARD_RESULTS_DIR";

#[derive(Parser)]
#[command(name = "haphazard", version, about = "Benchmark online learners on haphazard input streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mask a dataset and write the resulting stream as JSON lines.
    Simulate(SimulateArgs),
    /// Run models prequentially and store one record per (model, p).
    Run(RunArgs),
    /// Grid-search one model's hyperparameters by balanced accuracy.
    Grid(GridArgs),
    /// Summarize stored records into CSV and JSON.
    Report(ReportArgs),
    /// Estimate energy and carbon for a run time.
    Carbon(CarbonArgs),
}

#[derive(Args, Clone)]
struct DatasetArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "csv")]
    loader: LoaderKind,
    /// Label column name or 0-based index (CSV); defaults to the last column.
    #[arg(long)]
    label_col: Option<String>,
    /// Missing-value markers (CSV), comma separated.
    #[arg(long, value_delimiter = ',')]
    missing: Option<Vec<String>>,
    /// Keep only the first N rows.
    #[arg(long)]
    limit: Option<usize>,
    /// The CSV file has no header row.
    #[arg(long)]
    no_header: bool,
}

impl DatasetArgs {
    fn spec(&self) -> Result<DatasetSpec, CliError> {
        if !self.dataset.is_file() {
            return Err(CliError::Usage(format!("dataset {} not found", self.dataset.display())));
        }
        let mut d = DatasetSpec::new(&self.dataset, self.loader);
        d.label_col = self.label_col.clone();
        d.missing = self.missing.clone();
        d.limit = self.limit;
        d.has_header = !self.no_header;
        Ok(d)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SeedArgs {
    /// Learner seeds, comma separated. Overrides --repeats.
    #[arg(long, alias = "seed", value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Runs per seeded model (deterministic models always run once).
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Seed of the availability mask.
    #[arg(long, default_value_t = 0)]
    mask_seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Availability probabilities, or "real" for the stream as stored.
    #[arg(long, value_delimiter = ',', required = true)]
    p: Vec<Availability>,
    #[arg(long, value_delimiter = ',', required = true)]
    model: Vec<String>,
    /// Hyperparameter file with one table per model.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    seeds: SeedArgs,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    model: String,
    #[arg(long)]
    grid: PathBuf,
    /// Values for keys the grid does not list.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "0.5")]
    p: Availability,
    #[command(flatten)]
    seeds: SeedArgs,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Force a dataset into a size group, e.g. `--group SUSY=large`.
    #[arg(long = "group", value_parser = parse_group)]
    groups: Vec<(String, SizeGroup)>,
    /// Low- and high-dimensional datasets of equal length, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values = ["SUSY", "HIGGS"])]
    feature_pair: Vec<String>,
    /// Use 1 + |n|^2 instead of (1 + |n|)^2 in the data-scalability measure.
    #[arg(long)]
    square_plus_one: bool,
}

#[derive(Args)]
struct CarbonArgs {
    /// Wall time in seconds.
    #[arg(long)]
    time: f64,
    /// Hardware profile JSON; the 128-core CPU server if omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_group(s: &str) -> Result<(String, SizeGroup), String> {
    let (name, g) = s.split_once('=').ok_or_else(|| format!("expected NAME=GROUP, got {s:?}"))?;
    Ok((name.to_string(), g.parse()?))
}

enum CliError {
    /// Bad arguments, paths or input files.
    Usage(String),
    /// A run or search failed.
    Eval(String),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::AllCellsFailed { .. } | HarnessError::Pool(_) => CliError::Eval(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<StreamError> for CliError {
    fn from(e: StreamError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn results_dir(flag: &Path) -> PathBuf {
    std::env::var_os(RESULTS_ENV).map(PathBuf::from).unwrap_or_else(|| flag.to_path_buf())
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_configs(path: Option<&Path>) -> Result<BTreeMap<ModelKind, ModelConfig>, CliError> {
    match path {
        Some(p) => parse_config_file(&read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
        None => Ok(BTreeMap::new()),
    }
}

fn parse_model(name: &str) -> Result<ModelKind, CliError> {
    name.parse().map_err(|e: haphazard::config::ConfigError| CliError::Usage(e.to_string()))
}

fn seeds_for(kind: ModelKind, args: &SeedArgs) -> Vec<u64> {
    match &args.seeds {
        Some(s) => s.clone(),
        None if kind.is_deterministic() => vec![0],
        None => (0..args.repeats.max(1) as u64).collect(),
    }
}

fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, CliError> {
    let mut data = match spec.loader {
        LoaderKind::Csv => load_csv(&spec.path, &spec.csv_options())?,
        LoaderKind::Libsvm => load_libsvm(&spec.path)?,
        LoaderKind::Stream => return Err(CliError::Usage("simulate needs a csv or libsvm dataset".into())),
    };
    if let Some(n) = spec.limit {
        data.truncate(n);
    }
    Ok(data)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let mask = MaskConfig::new(args.p, args.seed)?;
    let data = load_dataset(&args.data.spec()?)?;
    let stream = mask_stream(&data, &mask);
    let mut buf = Vec::new();
    stream.write_jsonl(&mut buf).map_err(|e| CliError::Usage(e.to_string()))?;
    match args.out {
        Some(path) => write(&path, &String::from_utf8(buf).expect("json is utf-8"))?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&buf).map_err(|e| CliError::Usage(e.to_string()))?;
        }
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let dataset = args.data.spec()?;
    let configs = load_configs(args.config.as_deref())?;
    let kinds = args.model.iter().map(|m| parse_model(m)).collect::<Result<Vec<_>, _>>()?;
    let mut specs = Vec::new();
    for &kind in &kinds {
        let model = configs.get(&kind).cloned().unwrap_or_else(|| kind.default_config());
        for &availability in &args.p {
            let spec = ExperimentSpec {
                model: model.clone(),
                dataset: dataset.clone(),
                availability,
                mask_seed: args.seeds.mask_seed,
                seeds: seeds_for(kind, &args.seeds),
            };
            spec.validate()?;
            specs.push(spec);
        }
    }
    let out = results_dir(&args.out).join("records");
    let records = run_experiments(&specs, args.jobs)?;
    let mut failed = 0;
    for rec in &records {
        let path = save_record(&out, rec)?;
        let label = format!("{} {} p={}", rec.model(), rec.spec.dataset.name, rec.spec.availability.label());
        match &rec.summary {
            Some(s) => println!(
                "{label}: bAcc {:.2} ± {:.2} over {} run(s) -> {}",
                s.balanced_accuracy.mean * 100.0,
                s.balanced_accuracy.std * 100.0,
                s.ok_runs,
                path.display()
            ),
            None => println!("{label}: no successful run -> {}", path.display()),
        }
        for (seed, diag) in rec.failures() {
            eprintln!("{label} seed {seed} failed: {diag}");
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Eval(format!("{failed} run(s) failed")));
    }
    Ok(())
}

fn cmd_grid(args: GridArgs) -> Result<(), CliError> {
    let kind = parse_model(&args.model)?;
    let dataset = args.data.spec()?;
    let configs = load_configs(args.config.as_deref())?;
    let grid_text = read(&args.grid)?;
    let grids = parse_grid_file(&grid_text).map_err(|e| CliError::Usage(format!("{}: {e}", args.grid.display())))?;
    let grid = grids
        .into_iter()
        .find(|g| g.model == kind)
        .ok_or_else(|| CliError::Usage(format!("{} has no [{kind}] table", args.grid.display())))?;
    let base = ExperimentSpec {
        model: configs.get(&kind).cloned().unwrap_or_else(|| kind.default_config()),
        dataset,
        availability: args.p,
        mask_seed: args.seeds.mask_seed,
        seeds: seeds_for(kind, &args.seeds),
    };
    base.validate()?;
    let result = grid_search(&grid, &base, args.jobs)?;

    let out = results_dir(&args.out);
    let stem = format!("{kind}_{}_p{}", base.dataset.name, args.p.label());
    let cells = serde_json::json!({
        "model": kind.name(),
        "dataset": base.dataset.name,
        "p": args.p.label(),
        "best": format_assignment(&result.best),
        "best_score": result.best_score,
        "cells": result.cells,
    });
    write(&out.join("grid").join(format!("{stem}.json")), &(serde_json::to_string_pretty(&cells).expect("json") + "\n"))?;
    let mut table = toml::Table::new();
    table.insert(kind.name().into(), toml::Value::Table(result.best_config.to_table()));
    let best_path = out.join("best").join(format!("{stem}.toml"));
    write(&best_path, &toml::to_string(&table).expect("toml"))?;
    println!(
        "{kind}: best {} (bAcc {:.2}) -> {}",
        format_assignment(&result.best),
        result.best_score * 100.0,
        best_path.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let out = results_dir(&args.out);
    let records = load_records(&out.join("records"))?;
    if records.is_empty() {
        return Err(CliError::Usage(format!("no records in {}", out.join("records").display())));
    }
    let grouping = Grouping {
        overrides: args.groups.into_iter().collect(),
        feature_pair: match args.feature_pair.as_slice() {
            [lo, hi] => Some((lo.clone(), hi.clone())),
            _ => None,
        },
        penalty: if args.square_plus_one { DecreasePenalty::SquarePlusOne } else { DecreasePenalty::ShiftedSquare },
        ..Grouping::default()
    };
    let report = summarize(&records, &grouping);
    write(&out.join("summary.csv"), &report.to_csv())?;
    write(&out.join("summary.json"), &report.to_json())?;
    for (model, wins) in &report.win_counts {
        println!("{model}: {wins} win(s)");
    }
    println!("-> {}", out.join("summary.csv").display());
    Ok(())
}

fn cmd_carbon(args: CarbonArgs) -> Result<(), CliError> {
    if !(args.time.is_finite() && args.time >= 0.0) {
        return Err(CliError::Usage(format!("invalid time {}", args.time)));
    }
    let profile = match &args.profile {
        Some(p) => serde_json::from_str::<HardwareProfile>(&read(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => HardwareProfile::dgx_a100_cpu(),
    };
    profile.validate().map_err(CliError::Usage)?;
    let est = carbon_estimate(args.time, &profile);
    let body = serde_json::to_string_pretty(&serde_json::json!({
        "wall_time_s": args.time,
        "profile": profile,
        "energy_kwh": est.energy_kwh,
        "carbon_kg": est.carbon_kg,
    }))
    .expect("json")
        + "\n";
    if let Some(out) = &args.out {
        write(&results_dir(out).join("carbon.json"), &body)?;
    }
    print!("{body}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Run(a) => cmd_run(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Report(a) => cmd_report(a),
        Command::Carbon(a) => cmd_carbon(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Eval(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
