use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use had_core::feature_store::{
    features_checksum, generate_synthetic, ingest_precomputed, read_dataset, write_dataset, DatasetManifest,
    IngestShapes, LabeledSample, ModalFeatures, Split, SyntheticSpec,
};
use had_core::fusion_model::FusionClassifierModel;
use had_core::metrics::{emit_report, read_summary, LabeledRun};
use had_core::probe::{probe_lipschitz, sweep, write_probe, SweepGrid};
use had_core::trainer::{checkpoint_dir, evaluate_run, run_incremental, RunConfig, CONFIG_FILE};
use had_core::HadError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "had", version, about = "Class-incremental audio-visual recognition toolkit")]
struct Cli {
    /// Seed for the command's randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Config file used as the base for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Convert precomputed per-video feature arrays into a dataset.
    Ingest(IngestArgs),
    /// Run every phase of an incremental schedule.
    Train(TrainArgs),
    /// Re-score the checkpoints of a finished run.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the dataset recorded in the run config.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Curves and tables for one or more runs, given as `label=dir` or `dir`.
    Report {
        #[arg(required = true)]
        runs: Vec<String>,
    },
    /// Measure how far the fused video feature moves under small input perturbations.
    ProbeLipschitz {
        #[arg(long)]
        run: PathBuf,
        /// Checkpoint phase; defaults to the last.
        #[arg(long)]
        phase: Option<usize>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-2)]
        epsilon: f64,
        #[arg(long, default_value_t = 10)]
        n_samples: usize,
    },
    /// Full runs over a cartesian grid of config values.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long)]
    snippets: Option<usize>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    visual2d: PathBuf,
    #[arg(long)]
    visual3d: PathBuf,
    /// CSV with columns `id,label,split`.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 10)]
    snippets: usize,
    #[arg(long, default_value_t = 128)]
    audio_dim: usize,
    #[arg(long, default_value_t = 8)]
    frames_per_snippet: usize,
    #[arg(long, default_value_t = 2048)]
    visual2d_dim: usize,
    #[arg(long, default_value_t = 512)]
    visual3d_dim: usize,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Schedule and hyperparameter preset.
    #[arg(long)]
    preset: Option<String>,
    /// Component to switch off; repeatable.
    #[arg(long)]
    ablate: Vec<String>,
    /// Persisted `config.json` (or the run directory holding it) to re-run.
    #[arg(long)]
    from_config: Option<PathBuf>,
    /// `key=value` override of a dotted config key; repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// `key=v1,v2,...`; repeatable.
    #[arg(long, required = true)]
    grid: Vec<String>,
    /// Comma-separated seeds; defaults to `--seed` or 0.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

enum CliError {
    Usage(String),
    Core(HadError),
}

impl From<HadError> for CliError {
    fn from(e: HadError) -> Self {
        Self::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (cat, msg) = match self {
            Self::Usage(m) => ("usage", m.clone()),
            Self::Core(e) => (e.category(), e.to_string()),
        };
        write!(f, "error[{cat}]: {}", msg.replace('\n', " "))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn require_out(out: &Option<PathBuf>) -> CliResult<&Path> {
    out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value"));
}

fn load_samples(dir: &Path) -> CliResult<(DatasetManifest, Vec<LabeledSample>)> {
    let reader = read_dataset(dir)?;
    let samples = reader.load_all()?;
    Ok((reader.manifest().clone(), samples))
}

fn config_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(CONFIG_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Base config (persisted, file or preset), then ablations, `--set`, `--seed`, `--dataset`.
fn resolve_config(cli: &Cli, args: &ConfigArgs) -> CliResult<RunConfig> {
    let sources = [args.from_config.is_some(), cli.config.is_some(), args.preset.is_some()];
    if sources.iter().filter(|&&s| s).count() > 1 {
        return Err(CliError::Usage("use only one of --from-config, --config and --preset".into()));
    }
    let mut cfg = match (&args.from_config, &cli.config, &args.preset) {
        (Some(p), _, _) | (None, Some(p), _) => RunConfig::load(&config_file(p))?,
        (None, None, Some(name)) => RunConfig::preset(name)?,
        (None, None, None) => RunConfig::preset("synthetic")?,
    };
    for a in &args.ablate {
        cfg.ablate(a)?;
    }
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(d) = &args.dataset {
        cfg.dataset = Some(d.clone());
    }
    Ok(cfg)
}

fn dataset_of(cfg: &RunConfig) -> CliResult<&Path> {
    cfg.dataset.as_deref().ok_or_else(|| CliError::Usage("no dataset: pass --dataset".into()))
}

fn run_dataset(run: &Path, flag: &Option<PathBuf>) -> CliResult<PathBuf> {
    match flag {
        Some(d) => Ok(d.clone()),
        None => {
            let cfg = RunConfig::load(&run.join(CONFIG_FILE))?;
            cfg.dataset.ok_or_else(|| CliError::Usage("run config has no dataset: pass --dataset".into()))
        }
    }
}

fn generate(cli: &Cli, args: &GenerateArgs) -> CliResult<()> {
    let out = require_out(&cli.out)?;
    let mut spec = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HadError::Missing(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<SyntheticSpec>(&text)
                .map_err(|e| CliError::Core(HadError::InvalidConfig(format!("{}: {e}", p.display()))))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let fields = [
        (&mut spec.num_classes, args.num_classes),
        (&mut spec.train_per_class, args.train_per_class),
        (&mut spec.test_per_class, args.test_per_class),
        (&mut spec.snippets, args.snippets),
    ];
    for (slot, v) in fields {
        if let Some(v) = v {
            *slot = v;
        }
    }
    let (manifest, samples) = generate_synthetic(&spec)?;
    write_dataset(&manifest, &samples, out)?;
    print_json(&json!({
        "dataset": out,
        "num_classes": manifest.num_classes,
        "samples": samples.len(),
        "checksum": features_checksum(out)?,
    }));
    Ok(())
}

fn ingest(cli: &Cli, a: &IngestArgs) -> CliResult<()> {
    let out = require_out(&cli.out)?;
    let shapes = IngestShapes {
        snippets: a.snippets,
        audio_dim: a.audio_dim,
        frames_per_snippet: a.frames_per_snippet,
        visual2d_dim: a.visual2d_dim,
        visual3d_dim: a.visual3d_dim,
    };
    let summary = ingest_precomputed(&a.audio, &a.visual2d, &a.visual3d, &a.labels, out, &shapes)?;
    let skipped: Vec<Value> = summary.skipped.iter().map(|s| json!({"id": s.id, "reason": s.reason})).collect();
    print_json(&json!({
        "dataset": out,
        "videos": summary.manifest.records.len(),
        "num_classes": summary.manifest.num_classes,
        "skipped": skipped,
    }));
    Ok(())
}

fn train(cli: &Cli, args: &TrainArgs) -> CliResult<()> {
    let out = require_out(&cli.out)?;
    let cfg = resolve_config(cli, &args.config)?;
    let (manifest, samples) = load_samples(dataset_of(&cfg)?)?;
    let outcome = run_incremental(&manifest, &samples, &cfg, Some(out))?;
    print_json(&json!({
        "run": out,
        "aia": outcome.metrics.aia,
        "fia": outcome.metrics.fia,
        "ia": outcome.metrics.ia,
        "fingerprint": outcome.summary.fingerprint,
    }));
    Ok(())
}

fn eval(run: &Path, dataset: &Option<PathBuf>) -> CliResult<()> {
    let (_, samples) = load_samples(&run_dataset(run, dataset)?)?;
    let metrics = evaluate_run(run, &samples)?;
    let summary = read_summary(run)?;
    let matches = (metrics.aia - summary.aia).abs() <= 1e-6 && (metrics.fia - summary.fia).abs() <= 1e-6;
    print_json(&json!({
        "aia": metrics.aia,
        "fia": metrics.fia,
        "ia": metrics.ia,
        "matches_summary": matches,
    }));
    Ok(())
}

fn report(cli: &Cli, runs: &[String]) -> CliResult<()> {
    let out = require_out(&cli.out)?;
    let labeled: Vec<LabeledRun> = runs
        .iter()
        .map(|r| match r.split_once('=') {
            Some((label, dir)) => LabeledRun { label: label.to_string(), dir: PathBuf::from(dir) },
            None => {
                let dir = PathBuf::from(r);
                let label = dir.file_name().map_or_else(|| r.clone(), |n| n.to_string_lossy().into_owned());
                LabeledRun { label, dir }
            }
        })
        .collect();
    let files = emit_report(&labeled, out)?;
    print_json(&json!({"svg": files.svg, "tables": files.tables, "ablation": files.ablation}));
    Ok(())
}

fn probe(cli: &Cli, run: &Path, phase: Option<usize>, dataset: &Option<PathBuf>, epsilon: f64, n: usize) -> CliResult<()> {
    let summary = read_summary(run)?;
    let phase = phase.unwrap_or(summary.schedule.phases());
    let model = FusionClassifierModel::load_checkpoint(&checkpoint_dir(run, phase))?;
    let (_, samples) = load_samples(&run_dataset(run, dataset)?)?;
    let test: Vec<&ModalFeatures> = samples.iter().filter(|s| s.split == Split::Test).map(|s| &s.features).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0));
    let report = probe_lipschitz(&model, &test, epsilon, n, &mut rng)?;
    let out = cli.out.as_deref().unwrap_or(run);
    let path = write_probe(&report, out)?;
    print_json(&json!({
        "probe": path,
        "mean": report.mean,
        "fraction_exceeding": report.fraction_exceeding,
    }));
    Ok(())
}

fn parse_grid(entries: &[String]) -> CliResult<SweepGrid> {
    let mut grid = BTreeMap::new();
    for e in entries {
        let (k, vs) = e.split_once('=').ok_or_else(|| CliError::Usage(format!("--grid expects key=v1,v2, got `{e}`")))?;
        let values: Vec<Value> = vs
            .split(',')
            .filter(|v| !v.is_empty())
            .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string())))
            .collect();
        grid.insert(k.to_string(), values);
    }
    Ok(grid)
}

fn workers() -> usize {
    std::env::var("HAD_NUM_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_sweep(cli: &Cli, args: &SweepArgs) -> CliResult<()> {
    let out = require_out(&cli.out)?;
    let cfg = resolve_config(cli, &args.config)?;
    let grid = parse_grid(&args.grid)?;
    let seeds = if args.seeds.is_empty() { vec![cfg.seed] } else { args.seeds.clone() };
    let (manifest, samples) = load_samples(dataset_of(&cfg)?)?;
    let rows = sweep(&cfg, &grid, &seeds, &manifest, &samples, out, workers())?;
    let summary: Vec<Value> = rows
        .iter()
        .map(|r| json!({"point": r.point, "seed": r.seed, "aia": r.aia, "fia": r.fia, "fingerprint": r.fingerprint}))
        .collect();
    print_json(&json!({"sweep": out.join(had_core::probe::SWEEP_FILE), "runs": summary}));
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate(a) => generate(cli, a),
        Command::Ingest(a) => ingest(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval { run, dataset } => eval(run, dataset),
        Command::Report { runs } => report(cli, runs),
        Command::ProbeLipschitz { run, phase, dataset, epsilon, n_samples } => {
            probe(cli, run, *phase, dataset, *epsilon, *n_samples)
        }
        Command::Sweep(a) => run_sweep(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()));
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
