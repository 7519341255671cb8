//! `metasdt` command-line front end.
//!
//! Exit status is 0 on success, 2 for usage and configuration errors and 1
//! for runtime failures. Failures are reported on stderr as a single JSON
//! object `{"error": {"kind": ..., "message": ...}}`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use metasdt::binning::{build_counts, fit_bins, hautus_correct, BinStrategy};
use metasdt::config::{AurocVariant, RunConfig};
use metasdt::estimate::{bootstrap_cell, fit_cell, rate_trials};
use metasdt::inference::cell_key;
use metasdt::metrics::MetricBundle;
use metasdt::par::Execution;
use metasdt::pipeline::{run_pipeline, sha256_hex, EvaluationReport};
use metasdt::report::{emit_report, EmitOptions};
use metasdt::robustness::{run_r1, run_r2, run_r3, run_r6, MatchingSettings, PrimarySettings, SSource};
use metasdt::sdt::estimate_s;
use metasdt::simulator::{recovery_study, simulate_cohorts, simulate_labeled, CohortGrid, ObserverSpec, RecoverySettings, TrialLabels};
use metasdt::trials::{
    load_answer_keys, load_trials_graded, write_trials_jsonl, FieldMapping, LoadOutcome, TrialFilter, TrialFormat,
    TrialRecord, TrialStore,
};

#[derive(Debug, Parser)]
#[command(name = "metasdt", version, about = "Type-2 signal detection analysis of model confidence", color = clap::ColorChoice::Never)]
struct Cli {
    /// Run configuration (TOML). Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Disable data-parallel execution.
    #[arg(long, global = true)]
    sequential: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate (and optionally grade) trial logs and write canonical JSON lines.
    Ingest(IngestArgs),
    /// Estimate meta-d' and M-ratio for a single cell.
    Fit(FitArgs),
    /// Run the full pipeline and write report, tables and plot data.
    Evaluate(EvaluateArgs),
    /// Run robustness checks on the reference-temperature trials.
    Robustness(RobustnessArgs),
    /// Generate synthetic trials from a simulated observer.
    Simulate(SimulateArgs),
    /// Parameter-recovery study over an observer grid.
    Recovery(RecoveryArgs),
    /// Re-emit artifacts from a saved report.json.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Csv,
    Tsv,
}

impl From<FormatArg> for TrialFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => TrialFormat::JsonLines,
            FormatArg::Csv => TrialFormat::Delimited(b','),
            FormatArg::Tsv => TrialFormat::Delimited(b'\t'),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Quantile,
    EqualWidth,
}

impl From<StrategyArg> for BinStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Quantile => BinStrategy::Quantile,
            StrategyArg::EqualWidth => BinStrategy::EqualWidth,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AurocArg {
    Raw,
    Folded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckArg {
    R1,
    R2,
    R3,
    R6,
}

/// Trial input shared by the commands that read logs.
#[derive(Debug, Args)]
struct InputArgs {
    /// Trial log path, or `-` for stdin.
    #[arg(long, value_name = "FILE")]
    trials: String,
    /// Input format; inferred from the extension when omitted (stdin: jsonl).
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Rename an input field, e.g. `--map nlp=mean_logprob`.
    #[arg(long = "map", value_name = "FIELD=COLUMN")]
    mappings: Vec<String>,
}

/// Flags overriding individual RunConfig values.
#[derive(Debug, Args, Default)]
struct ConfigOverrides {
    /// Confidence levels per Type-1 response side.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    bin_strategy: Option<StrategyArg>,
    #[arg(long)]
    reference_temperature: Option<f64>,
    #[arg(long)]
    n_resamples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Confidence level of bootstrap intervals.
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    exclusion_bound: Option<f64>,
    #[arg(long)]
    tost_delta: Option<f64>,
    #[arg(long)]
    similarity_threshold: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    temperatures_h3: Option<Vec<f64>>,
    #[arg(long)]
    min_cell_trials: Option<usize>,
    #[arg(long)]
    ece_bins: Option<usize>,
    #[arg(long, value_enum)]
    auroc_variant: Option<AurocArg>,
    #[arg(long, value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
    /// Supplied zROC slope for the unequal-variance check.
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    difficulty_strata: Option<usize>,
    #[arg(long)]
    no_robustness: bool,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    /// JSON object mapping question ids to accepted answer aliases.
    #[arg(long, value_name = "FILE")]
    answer_key: Option<PathBuf>,
    /// Destination for the canonical log (default stdout).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Trial log path, or `-` for stdin.
    #[arg(long, value_name = "FILE", default_value = "-")]
    trials: String,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long = "map", value_name = "FIELD=COLUMN")]
    mappings: Vec<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Estimate the zROC slope and fit the unequal-variance model.
    #[arg(long, conflicts_with = "s")]
    estimate_s: bool,
    /// Also bootstrap the estimates.
    #[arg(long)]
    bootstrap: bool,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output directory.
    #[arg(long, env = "METASDT_OUT_DIR", default_value = "report")]
    out: PathBuf,
    /// Also render SVG plots.
    #[arg(long)]
    svg: bool,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Debug, Args)]
struct RobustnessArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Checks to run (default: all applicable).
    #[arg(long = "check", value_enum, value_delimiter = ',')]
    checks: Vec<CheckArg>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Debug, Args)]
struct ObserverArgs {
    #[arg(long)]
    d_gen: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    c_gen: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_ratio: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_meta: f64,
    #[arg(long, default_value_t = 0.5)]
    base_rate: f64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
}

impl ObserverArgs {
    fn spec(&self, seed: u64) -> Option<ObserverSpec> {
        Some(ObserverSpec {
            d_gen: self.d_gen?,
            c_gen: self.c_gen,
            sigma_ratio: self.sigma_ratio,
            sigma_meta: self.sigma_meta,
            base_rate: self.base_rate,
            n: self.n,
            seed,
        })
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    observer: ObserverArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML document of `[[cohort]]` tables; replaces the single-observer flags.
    #[arg(long, value_name = "FILE", conflicts_with = "d_gen")]
    grid: Option<PathBuf>,
    #[arg(long, default_value = "sim")]
    model: String,
    #[arg(long, default_value = "sim")]
    dataset: String,
    #[arg(long, default_value = "unclassified")]
    domain: String,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value = "q")]
    question_prefix: String,
    /// Destination (default stdout).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecoveryArgs {
    #[command(flatten)]
    observer: ObserverArgs,
    /// Seed of the first simulated replicate; `--seed` seeds the bootstrap.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Simulated data sets per grid point.
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    /// Sample size of the reference fit for non-ideal observers.
    #[arg(long, default_value_t = 200_000)]
    reference_n: usize,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// A report.json written by `evaluate`.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    #[arg(long, env = "METASDT_OUT_DIR", default_value = "report")]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
    /// The reader of stdout went away; not worth reporting.
    Closed,
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Runtime(_) | CliError::Closed => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
            CliError::Closed => "output closed",
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
            CliError::Closed => 0,
        }
    }
}

impl From<metasdt::Error> for CliError {
    fn from(e: metasdt::Error) -> Self {
        match e {
            metasdt::Error::Io(e) => e.into(),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::BrokenPipe {
            return CliError::Closed;
        }
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.io_error_kind() == Some(io::ErrorKind::BrokenPipe) {
            return CliError::Closed;
        }
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail(&CliError::Usage(e.render().to_string().trim().to_string()));
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ExitCode {
    if let CliError::Closed = e {
        return ExitCode::SUCCESS;
    }
    let body = json!({ "error": { "kind": e.kind(), "message": e.message() } });
    eprintln!("{body}");
    ExitCode::from(e.code())
}

fn run(cli: &Cli) -> CliResult<()> {
    let execution = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match &cli.command {
        Command::Ingest(a) => ingest(&load_config(cli, &a.overrides)?, a),
        Command::Fit(a) => fit(&load_config(cli, &a.overrides)?, a, execution),
        Command::Evaluate(a) => evaluate(load_config(cli, &a.overrides)?, a, execution),
        Command::Robustness(a) => robustness(&load_config(cli, &a.overrides)?, a),
        Command::Simulate(a) => simulate(a),
        Command::Recovery(a) => recovery(&load_config(cli, &a.overrides)?, a, execution),
        Command::Report(a) => report(a),
    }
}

fn load_config(cli: &Cli, o: &ConfigOverrides) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_toml(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(k) = o.k {
        cfg.k = k;
    }
    if let Some(s) = o.bin_strategy {
        cfg.bin_strategy = s.into();
    }
    if let Some(t) = o.reference_temperature {
        cfg.reference_temperature = t;
    }
    if let Some(n) = o.n_resamples {
        cfg.bootstrap.n_resamples = n;
    }
    if let Some(seed) = o.seed {
        cfg.bootstrap.seed = seed;
    }
    if let Some(l) = o.level {
        cfg.bootstrap.level = l;
    }
    if let Some(b) = o.exclusion_bound {
        cfg.bootstrap.exclusion_bound = b;
    }
    if let Some(d) = o.tost_delta {
        cfg.tost_delta = d;
    }
    if let Some(t) = o.similarity_threshold {
        cfg.similarity_threshold = t;
    }
    if let Some(t) = &o.temperatures_h3 {
        cfg.temperatures_h3 = t.clone();
    }
    if let Some(m) = o.min_cell_trials {
        cfg.min_cell_trials = m;
    }
    if let Some(b) = o.ece_bins {
        cfg.ece_bins = b;
    }
    if let Some(v) = o.auroc_variant {
        cfg.auroc_variant = match v {
            AurocArg::Raw => AurocVariant::Raw,
            AurocArg::Folded => AurocVariant::Folded,
        };
    }
    if let Some(k) = &o.k_values {
        cfg.robustness.k_values = k.clone();
    }
    if let Some(s) = o.s {
        cfg.robustness.s_source = SSource::Supplied(s);
    }
    if let Some(n) = o.difficulty_strata {
        cfg.robustness.difficulty_strata = n;
    }
    if o.no_robustness {
        cfg.robustness.enabled = false;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn field_mapping(pairs: &[String]) -> CliResult<FieldMapping> {
    let mut m = FieldMapping::default();
    for pair in pairs {
        let (field, column) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--map expects FIELD=COLUMN, got `{pair}`")))?;
        let slot = match field {
            "model_id" => &mut m.model_id,
            "dataset_id" => &mut m.dataset_id,
            "domain" => &mut m.domain,
            "temperature" => &mut m.temperature,
            "question_id" => &mut m.question_id,
            "answer_text" => &mut m.answer_text,
            "nlp" => &mut m.nlp,
            "correct" => &mut m.correct,
            other => return Err(CliError::Usage(format!("unknown trial field `{other}`"))),
        };
        *slot = column.to_string();
    }
    Ok(m)
}

/// Reads and digests a trial source. Returns the outcome and the
/// `(name, sha256)` of the raw bytes.
fn read_trials(
    source: &str,
    format: Option<FormatArg>,
    mappings: &[String],
    keys: &BTreeMap<String, metasdt::trials::AnswerKey>,
) -> CliResult<(LoadOutcome, (String, String))> {
    let mapping = field_mapping(mappings)?;
    let (bytes, default_format) = if source == "-" {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf)?;
        (buf, TrialFormat::JsonLines)
    } else {
        let path = Path::new(source);
        let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {source}: {e}")))?;
        (bytes, TrialFormat::from_path(path))
    };
    let fmt = format.map(TrialFormat::from).unwrap_or(default_format);
    let digest = sha256_hex(&bytes);
    let outcome = load_trials_graded(bytes.as_slice(), fmt, &mapping, keys)?;
    for s in &outcome.skipped {
        log::warn!("{source}: skipped line {}: {}", s.line, s.reason);
    }
    Ok((outcome, (source.to_string(), digest)))
}

fn load_store(input: &InputArgs) -> CliResult<(TrialStore, BTreeMap<String, String>)> {
    let (outcome, (name, digest)) = read_trials(&input.trials, input.format, &input.mappings, &BTreeMap::new())?;
    let store = TrialStore::new(outcome.records)?;
    if store.is_empty() {
        return Err(CliError::Runtime(format!("{name}: no valid trials")));
    }
    Ok((store, BTreeMap::from([(name, digest)])))
}

fn print_json(value: &Value) -> CliResult<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn ingest(cfg: &RunConfig, a: &IngestArgs) -> CliResult<()> {
    let keys = match &a.answer_key {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
            load_answer_keys(io::BufReader::new(file), cfg.similarity_threshold)?
                .into_iter()
                .map(|k| (k.question_id.clone(), k))
                .collect()
        }
        None => BTreeMap::new(),
    };
    let (outcome, (name, digest)) = read_trials(&a.input.trials, a.input.format, &a.input.mappings, &keys)?;
    let store = TrialStore::new(outcome.records)?;
    let summary = json!({
        "input": name,
        "sha256": digest,
        "n_valid": store.len(),
        "n_skipped": outcome.skipped.len(),
        "skipped": outcome.skipped,
        "models": store.distinct(|r| &r.model_id),
        "datasets": store.distinct(|r| &r.dataset_id),
        "domains": store.distinct(|r| &r.domain),
        "temperatures": store.temperatures(),
        "graded_with_keys": keys.len(),
    });
    match &a.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
            write_trials_jsonl(BufWriter::new(file), store.records())?;
            print_json(&summary)
        }
        None => {
            write_trials_jsonl(BufWriter::new(io::stdout().lock()), store.records())?;
            eprintln!("{summary}");
            Ok(())
        }
    }
}

fn fit(cfg: &RunConfig, a: &FitArgs, execution: Execution) -> CliResult<()> {
    let (outcome, _) = read_trials(&a.trials, a.format, &a.mappings, &BTreeMap::new())?;
    let mut filter = TrialFilter::default();
    if let Some(m) = &a.model {
        filter = filter.model(m);
    }
    if let Some(d) = &a.dataset {
        filter = filter.dataset(d);
    }
    if let Some(d) = &a.domain {
        filter = filter.domain(d);
    }
    if let Some(t) = a.temperature {
        filter = filter.temperature(t);
    }
    let store = TrialStore::new(outcome.records)?;
    let trials: Vec<TrialRecord> = store.filter(&filter);
    if trials.is_empty() {
        return Err(CliError::Runtime("no trials match the requested cell".into()));
    }
    let models: Vec<&str> = {
        let mut m: Vec<&str> = trials.iter().map(|t| t.model_id.as_str()).collect();
        m.sort();
        m.dedup();
        m
    };
    if models.len() > 1 {
        log::warn!("cell pools {} models; pass --model to select one", models.len());
    }
    let scheme = fit_bins(&trials, cfg.k, cfg.bin_strategy)?;
    let s = if a.estimate_s {
        estimate_s(&hautus_correct(&build_counts(&trials, &scheme)?)?)?
    } else {
        match cfg.robustness.s_source {
            SSource::Supplied(s) => s,
            SSource::Estimated => 1.0,
        }
    };
    let cell = fit_cell(&trials, &scheme, s)?;
    let metrics = MetricBundle::compute(&trials, cell.fit.meta_d, cell.type1.d_prime, cfg.ece_bins)?;
    let mut out = json!({
        "n_trials": trials.len(),
        "n_correct": trials.iter().filter(|t| t.correct).count(),
        "scheme": scheme,
        "counts": cell.counts,
        "type1": cell.type1,
        "fit": cell.fit,
        "metrics": metrics,
    });
    if a.bootstrap {
        let mut bcfg = cfg.bootstrap;
        bcfg.execution = execution;
        let rated = rate_trials(&trials, &scheme);
        let b = bootstrap_cell(&rated, cfg.k, s, &cell, &bcfg, cell_key("fit"))?;
        out["bootstrap"] = json!({ "m_ratio": b.m_ratio, "meta_d": b.meta_d, "d_prime": b.d_prime });
    }
    print_json(&out)
}

fn evaluate(mut cfg: RunConfig, a: &EvaluateArgs, execution: Execution) -> CliResult<()> {
    cfg.bootstrap.execution = execution;
    let (store, inputs) = load_store(&a.input)?;
    log::info!("evaluating {} trials", store.len());
    let report = run_pipeline(&cfg, &store, inputs)?;
    let opts = EmitOptions {
        svg: a.svg,
        ..Default::default()
    };
    let files = emit_report(&report, &a.out, &opts)?;
    print_json(&summary(&report, &a.out, &files))
}

fn summary(report: &EvaluationReport, out: &Path, files: &[PathBuf]) -> Value {
    let h = &report.hypotheses;
    json!({
        "out_dir": out,
        "files": files,
        "cells": report.cells.len(),
        "failures": report.failures.len(),
        "verdicts": {
            "h1": h.h1.iter().map(|r| (r.model_id.clone(), r.verdict.as_str())).collect::<BTreeMap<_, _>>(),
            "h2": h.h2.verdict.as_str(),
            "h3": h.h3.iter().map(|r| (r.model_id.clone(), r.verdict.as_str())).collect::<BTreeMap<_, _>>(),
            "h4": h.h4.verdict.as_str(),
        },
    })
}

fn robustness(cfg: &RunConfig, a: &RobustnessArgs) -> CliResult<()> {
    let (store, _) = load_store(&a.input)?;
    let trials = store.filter(&TrialFilter::default().temperature(cfg.reference_temperature));
    if trials.is_empty() {
        return Err(CliError::Runtime(format!(
            "no trials at the reference temperature {}",
            cfg.reference_temperature
        )));
    }
    let checks = if a.checks.is_empty() {
        vec![CheckArg::R1, CheckArg::R2, CheckArg::R3, CheckArg::R6]
    } else {
        a.checks.clone()
    };
    let primary = PrimarySettings {
        k: cfg.k,
        strategy: cfg.bin_strategy,
    };
    let n_models = store.distinct(|r| &r.model_id).len();
    let mut reports = Vec::new();
    for check in checks {
        let r = match check {
            CheckArg::R1 => run_r1(&trials, &cfg.robustness.k_values, &primary)?,
            CheckArg::R2 => run_r2(&trials, cfg.robustness.s_source, &primary)?,
            CheckArg::R3 => run_r3(&trials, &primary)?,
            CheckArg::R6 if n_models < 2 && a.checks.is_empty() => {
                log::info!("skipping R6: needs at least two models");
                continue;
            }
            CheckArg::R6 => {
                let matching = MatchingSettings {
                    n_strata: cfg.robustness.difficulty_strata,
                    seed: cfg.bootstrap.seed,
                };
                run_r6(&trials, &matching, &primary)?
            }
        };
        reports.push(r);
    }
    print_json(&serde_json::to_value(reports)?)
}

fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let records = match &a.grid {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            let grid = CohortGrid::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            for c in &grid.cohort {
                c.spec().validate().map_err(|e| CliError::Usage(e.to_string()))?;
            }
            simulate_cohorts(&grid.cohort)?
        }
        None => {
            let spec = a
                .observer
                .spec(a.seed)
                .ok_or_else(|| CliError::Usage("simulate needs --d-gen or --grid".into()))?;
            spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let labels = TrialLabels {
                model_id: a.model.clone(),
                dataset_id: a.dataset.clone(),
                domain: a.domain.clone(),
                temperature: a.temperature,
                question_prefix: a.question_prefix.clone(),
            };
            simulate_labeled(&spec, &labels)?
        }
    };
    match &a.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
            write_trials_jsonl(BufWriter::new(file), &records)?;
        }
        None => write_trials_jsonl(BufWriter::new(io::stdout().lock()), &records)?,
    }
    Ok(())
}

fn recovery(cfg: &RunConfig, a: &RecoveryArgs, execution: Execution) -> CliResult<()> {
    let grid = match a.observer.spec(a.data_seed) {
        Some(spec) => vec![spec],
        None if !cfg.grid.is_empty() => cfg.grid.clone(),
        None => return Err(CliError::Usage("recovery needs --d-gen or a config with a [[grid]] table".into())),
    };
    for spec in &grid {
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if a.replicates == 0 {
        return Err(CliError::Usage("--replicates must be positive".into()));
    }
    let mut bootstrap = cfg.bootstrap;
    bootstrap.execution = execution;
    let settings = RecoverySettings {
        k: cfg.k,
        strategy: cfg.bin_strategy,
        replicates: a.replicates,
        bootstrap,
        reference_n: a.reference_n,
        execution,
    };
    let rows = recovery_study(&grid, &settings)?;
    print_json(&serde_json::to_value(rows)?)
}

fn report(a: &ReportArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.input).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", a.input.display())))?;
    let report = EvaluationReport::from_json(&text)?;
    let opts = EmitOptions {
        svg: a.svg,
        ..Default::default()
    };
    let files = emit_report(&report, &a.out, &opts)?;
    print_json(&summary(&report, &a.out, &files))
}
