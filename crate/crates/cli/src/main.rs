//! `climvar`: synthesize data, compute statistics and distances, train,
//! evaluate and explain models, or run a whole experiment from one config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use climvar::dataset::{compute_stats, input_names, output_names, read_dataset, write_dataset, BatchGenerator, NormalizationReference};
use climvar::experiment::{hash_json, level_pressure, run_experiment, stats_json, RunConfig};
use climvar::explain::{feature_matrix, mean_jacobian, DEFAULT_COALITIONS};
use climvar::metrics::{EvalReport, ReportMeta, DEFAULT_LAT_BANDS};
use climvar::models::{load_checkpoint, predict_physical, save_checkpoint, train, Callback, Checkpoint};
use climvar::stats::{compare_samples, DEFAULT_BINS};
use climvar::synth::{SynthConfig, SynthModel};
use climvar::thermo::{ClimateTag, Constants};
use climvar::{Error, Result};
use ndarray::{Array1, Axis};
use serde::Serialize;

mod csvio;

#[derive(Parser)]
#[command(name = "climvar", version, about = "Climate-invariant rescaling toolkit")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset for one climate.
    Synth(SynthArgs),
    /// Normalisation statistics for one representation.
    Stats(StatsArgs),
    /// Distances between the PDFs of two sample columns.
    Distance(DistanceArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Evaluate a model on a dataset.
    Eval(EvalArgs),
    /// Signed SHAP feature matrix (and optionally the mean Jacobian).
    Explain(ExplainArgs),
    /// Run a full experiment from a config file.
    Run(RunArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Climate tag: -4K, 0K or +4K.
    #[arg(long, allow_hyphen_values = true)]
    climate: String,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generator settings as JSON; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[serde(skip)]
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum Representation {
    /// Brute force.
    Bf,
    /// Climate invariant.
    Ci,
}

#[derive(Args, Serialize)]
struct StatsArgs {
    /// Datasets; the first defines the normalisation unless `--union`.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ci")]
    rescaling: Representation,
    /// Normalise over all inputs rather than the first.
    #[arg(long)]
    union: bool,
    #[serde(skip)]
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct DistanceArgs {
    /// CSV file holding the first sample column.
    a: PathBuf,
    /// CSV file holding the second sample column.
    b: PathBuf,
    /// Column name (if the files have a header) or zero-based index.
    #[arg(long, default_value = "0")]
    column: String,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// JSON report; stdout if omitted.
    #[serde(skip)]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Both normalised histograms as CSV.
    #[serde(skip)]
    #[arg(long)]
    pdf: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model from the config's plan: mlr_bf, mlr_ci, nn_bf, nn_ci or nn_<tag>_<variant>.
    #[arg(long, default_value = "nn_ci")]
    model: String,
    /// Model seed; the config's first seed if omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// Datasets evaluated after every epoch.
    #[arg(long)]
    callback: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Latitude-band × level R² table.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_LAT_BANDS)]
    bands: usize,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Samples explained, evenly spaced through the dataset.
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Samples averaged into the single background point.
    #[arg(long, default_value_t = 1024)]
    background: usize,
    #[arg(long, default_value_t = DEFAULT_COALITIONS)]
    coalitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the mean finite-difference Jacobian.
    #[arg(long)]
    jacobian: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Validate the config and print the plan without running it.
    #[arg(long)]
    dry_run: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::Format { .. } | Error::SchemaMismatch(_) | Error::Io { .. } | Error::InvalidInput(_) | Error::DegenerateRange { .. } => 3,
        Error::TrainingDiverged { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Stats(a) => stats(a),
        Command::Distance(a) => distance(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Explain(a) => explain(a),
        Command::Run(a) => run(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("CLIMVAR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("CLIMVAR_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// A config for subcommands run without `--config`: defaults everywhere.
fn default_run_config() -> RunConfig {
    RunConfig::from_json(
        r#"{"schema_version":1,"output_dir":"","data":{"kind":"files","train":"","val":"","test":"","generalization":""},"nn":{}}"#,
    )
    .expect("default run config is valid")
}

/// Reads a run config; an unreadable config file is a config error.
fn read_run_config(path: &Path) -> Result<RunConfig> {
    RunConfig::from_path(path).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(format!("cannot read {}: {source}", path.display())),
        e => e,
    })
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => read_run_config(p),
        None => Ok(default_run_config()),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let climate: ClimateTag = a.climate.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    let cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    let model = SynthModel::new(cfg, Constants::default())?;
    let data = model.generate_dataset(climate, a.n, a.seed)?;
    write_dataset(&a.out, &data)?;
    println!("wrote {} samples ({}, {} levels) to {}", data.len(), climate.as_str(), data.n_levels(), a.out.display());
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let cfg = load_run_config(a.config.as_deref())?;
    let rescaling = match a.rescaling {
        Representation::Bf => cfg.brute_force,
        Representation::Ci => cfg.climate_invariant,
    };
    let reference = if a.union { NormalizationReference::Union } else { cfg.normalization };
    let data = a.inputs.iter().map(read_dataset).collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = data.iter().collect();
    let stats = compute_stats(&refs, &rescaling, reference, &Constants::default())?;
    let hash = hash_json(&(&cfg.hash(), &a));
    write_text(&a.out, &stats_json(&stats, &hash)?)?;
    let flagged = stats.rescaled.iter().filter(|s| s.constant).count();
    println!("wrote {} feature statistics ({flagged} constant) to {}", stats.rescaled.len(), a.out.display());
    Ok(())
}

fn distance(a: DistanceArgs) -> Result<()> {
    let xa = csvio::read_column(&a.a, &a.column)?;
    let xb = csvio::read_column(&a.b, &a.column)?;
    let (report, p, q) = compare_samples(&xa, &xb, a.bins)?;
    let hash = hash_json(&a);
    let mut v = serde_json::to_value(&report)?;
    v["n_a"] = xa.len().into();
    v["n_b"] = xb.len().into();
    v["config_hash"] = hash.clone().into();
    let json = serde_json::to_string_pretty(&v)?;
    match &a.out {
        Some(p) => write_text(p, &json)?,
        None => println!("{json}"),
    }
    if let Some(path) = &a.pdf {
        write_text(path, &csvio::pdf_csv(&p, &q, &hash))?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = load_run_config(a.config.as_deref())?;
    let runs = cfg.model_runs();
    let run = runs.iter().find(|r| r.name == a.model).ok_or_else(|| {
        let names: Vec<&str> = runs.iter().map(|r| r.name.as_str()).collect();
        Error::Config(format!("model {:?} is not in the config's plan {names:?}", a.model))
    })?;
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let c = Constants::default();
    let train_data = read_dataset(&a.train)?;
    let val_data = read_dataset(&a.val)?;
    let callbacks = a.callback.iter().map(read_dataset).collect::<Result<Vec<_>>>()?;

    let mut for_stats = vec![&train_data];
    for_stats.extend(callbacks.iter());
    let stats = compute_stats(&for_stats, &run.rescaling, cfg.normalization, &c)?;
    let rescaling = climvar::dataset::RescalingConfig { seed: climvar::rng::mix(run.rescaling.seed, seed), ..run.rescaling };
    let g_train = BatchGenerator::new(&train_data, rescaling, &stats, &c)?;
    let g_val = BatchGenerator::new(&val_data, rescaling, &stats, &c)?.ordered();
    let gens = callbacks
        .iter()
        .map(|d| Ok(BatchGenerator::new(d, rescaling, &stats, &c)?.ordered()))
        .collect::<Result<Vec<_>>>()?;
    let cbs: Vec<Callback> = gens
        .iter()
        .zip(&a.callback)
        .map(|(g, p)| Callback { name: stem(p), gen: g })
        .collect();

    let model = run.spec.build(g_train.n_inputs(), g_train.n_outputs(), seed)?;
    let tc = climvar::models::TrainConfig { seed, ..run.train.clone() };
    let hash = hash_json(&(&cfg.hash(), &a.model, seed, stem(&a.train), stem(&a.val)));
    let trained = train(model, &g_train, &g_val, &tc, &cbs)?;
    let ck = Checkpoint::new(
        trained.model,
        rescaling,
        tc,
        train_data.climate(),
        stats,
        hash.clone(),
        trained.curves.best_epoch,
    );
    save_checkpoint(&a.out, &ck)?;
    if let Some(p) = &a.curves {
        write_text(p, &trained.curves.to_csv(&hash))?;
    }
    println!(
        "{}: best epoch {} with validation MSE {:.6e}; wrote {}",
        a.model,
        trained.curves.best_epoch,
        trained.curves.best_val,
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if a.bands == 0 {
        return Err(Error::Config("--bands must be >= 1".into()));
    }
    let ck = load_checkpoint(&a.model)?;
    let data = read_dataset(&a.data)?;
    let c = Constants::default();
    let h = &ck.header;
    let gen = BatchGenerator::new(&data, h.rescaling, &h.stats, &c)?.ordered();
    let (pred, batch) = predict_physical(&ck.model, &gen, h.train_climate)?;
    let meta = ReportMeta {
        config_hash: h.config_hash.clone(),
        model: stem(&a.model),
        dataset: stem(&a.data),
        climate: data.climate().as_str().to_string(),
        train_climate: h.train_climate.as_str().to_string(),
    };
    let report = EvalReport::build(
        meta,
        &pred,
        &batch.y_physical,
        &batch.lat,
        level_pressure(&data),
        output_names(data.n_levels()),
        a.bands,
    )?;
    report.emit(&a.out, a.grid.as_deref())?;
    println!("MSE {:.6e} over {} samples ({} inputs clamped)", report.mse, report.n_samples, batch.n_clamped);
    Ok(())
}

fn evenly_spaced(len: usize, n: usize) -> Vec<usize> {
    let n = n.min(len);
    (0..n).map(|i| i * len / n).collect()
}

fn explain(a: ExplainArgs) -> Result<()> {
    if a.n == 0 || a.background == 0 {
        return Err(Error::Config("--n and --background must be >= 1".into()));
    }
    let ck = load_checkpoint(&a.model)?;
    let data = read_dataset(&a.data)?;
    if data.is_empty() {
        return Err(Error::InvalidInput(format!("{} holds no samples", a.data.display())));
    }
    let c = Constants::default();
    let h = &ck.header;
    let gen = BatchGenerator::new(&data, h.rescaling, &h.stats, &c)?.ordered();
    let explained = gen.make_batch(&evenly_spaced(data.len(), a.n))?;
    let bg_batch = gen.make_batch(&evenly_spaced(data.len(), a.background))?;
    let background: Array1<f64> = bg_batch.x.mean_axis(Axis(0)).expect("non-empty background");
    let fm = feature_matrix(&ck.model, explained.x.view(), background.view(), a.coalitions, a.seed)?;
    let ins = input_names(data.n_levels(), &h.rescaling);
    let outs = output_names(data.n_levels());
    write_text(&a.out, &fm.to_csv(&ins, &outs, &h.config_hash)?)?;
    if let Some(p) = &a.jacobian {
        let j = mean_jacobian(&ck.model, explained.x.view(), a.step)?;
        write_text(p, &csvio::jacobian_csv(&j, &ins, &outs, &h.config_hash))?;
    }
    println!("explained {} samples with {} coalitions each; wrote {}", fm.n_explained, fm.n_coalitions, a.out.display());
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = read_run_config(&a.config)?;
    if let Some(dir) = a.out_dir {
        cfg.output_dir = dir;
    }
    if a.dry_run {
        cfg.check_inputs()?;
        println!("config hash {}", cfg.hash());
        for (i, step) in cfg.plan().iter().enumerate() {
            println!("{:>2}. {step}", i + 1);
        }
        return Ok(());
    }
    let summary = run_experiment(&cfg)?;
    println!("{:<16} {:>4} {:>12} {:>12} {:>12} {:>12}", "model", "seed", "train", "val", "test", "generalize");
    for r in &summary.rows {
        println!(
            "{:<16} {:>4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            r.model, r.seed, r.train_mse, r.val_mse, r.test_mse, r.generalization_mse
        );
    }
    println!("artifacts in {} (config hash {})", summary.output_dir.display(), summary.config_hash);
    Ok(())
}
