//! `stdistill` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or data error (one JSON line on stderr),
//! 2 usage error.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use stdistill::bench::{run_bench, BenchConfig};
use stdistill::dataset::{load_dataset, synth_generate, write_dataset, Corruption, Dataset, SynthConfig};
use stdistill::metrics::{parse_gammas, robust_sweep};
use stdistill::teacher::train_ref_teacher;
use stdistill::trainer::{ablate, train, TrainConfig, VARIANTS};
use stdistill::{evaluate, load_teacher, synth_teacher, Checkpoint, Error, PreparedData, Result, RunConfig, Split};

#[derive(Parser)]
#[command(name = "stdistill", version, about = "Distilled spatio-temporal MLP forecaster")]
struct Cli {
    /// Run configuration (flat TOML). Flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed; falls back to the config file, then STDISTILL_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph dataset.
    Synth(SynthArgs),
    /// Produce or validate teacher predictions.
    Teacher {
        #[command(subcommand)]
        mode: TeacherMode,
    },
    /// Train the student.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Evaluate a checkpoint over a range of input corruption levels.
    Robust(RobustArgs),
    /// Train and evaluate a named ablation variant.
    Ablate(AblateArgs),
    /// Time student and reference-teacher inference for growing graphs.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    steps_per_day: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    /// ring or grid
    #[arg(long)]
    graph: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Output path (`.json` for the text format).
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset file; a synthetic dataset from the config is used when omitted.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Subcommand)]
enum TeacherMode {
    /// Train the reference graph-convolution teacher.
    Ref {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Ground truth plus bias and Gaussian noise.
    Synthetic {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        bias: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Validate an external prediction file against the dataset.
    Import {
        file: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Copy the validated file here.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Teacher prediction file.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Output directory for checkpoint, epoch log and resolved config.
    #[arg(short, long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// 0 disables early stopping.
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// train, val, test or all
    #[arg(long, default_value = "test")]
    split: String,
    /// Input corruption as mode:gamma, e.g. noise:0.3
    #[arg(long)]
    corrupt: Option<String>,
    /// Emit a per-horizon CSV table instead of JSON.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct RobustArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// noise or missing
    #[arg(long, default_value = "noise")]
    mode: String,
    /// start:stop:step or a comma list
    #[arg(long, default_value = "0:0.3:0.05")]
    gammas: String,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    variant: String,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated node counts.
    #[arg(long, value_delimiter = ',', default_values_t = [50usize, 100, 200, 400, 800])]
    nodes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Keep repeating until each side has run this long (seconds).
    #[arg(long, default_value_t = 0.5)]
    min_secs: f64,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    csv: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("STDISTILL_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("STDISTILL_SEED={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), env_seed()?)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(cfg, a),
        Command::Teacher { mode } => cmd_teacher(cfg, mode),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Robust(a) => cmd_robust(cfg, a),
        Command::Ablate(a) => cmd_ablate(cfg, a),
        Command::Bench(a) => cmd_bench(cfg, a),
    }
}

/// Writes one line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

fn print_json(v: &Value) {
    emit(&v.to_string());
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn cmd_synth(mut cfg: RunConfig, a: SynthArgs) -> Result<()> {
    macro_rules! set {
        ($($field:ident => $key:ident),*) => { $(if let Some(v) = a.$field { cfg.$key = v; })* };
    }
    set!(nodes => synth_nodes, days => synth_days, steps_per_day => synth_steps_per_day,
         features => synth_features, graph => synth_graph, rho => synth_rho, sigma => synth_sigma);
    // The global seed drives the generator for this command.
    cfg.synth_seed = cfg.seed;
    let synth: SynthConfig = cfg.synth_config()?;
    let data = synth_generate(&synth)?;
    write_dataset(&a.output, &data)?;
    print_json(&json!({
        "output": a.output,
        "nodes": synth.nodes,
        "steps": data.series.num_steps(),
        "features": synth.features,
        "graph": synth.graph.to_string(),
        "seed": synth.seed,
    }));
    Ok(())
}

fn apply_data(cfg: &mut RunConfig, d: &DataArgs) {
    if let Some(p) = &d.dataset {
        cfg.dataset = Some(p.clone());
    }
    if let Some(h) = d.history {
        cfg.history = h;
    }
    if let Some(h) = d.horizon {
        cfg.horizon = h;
    }
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset {
        Some(p) => load_dataset(p),
        None => synth_generate(&cfg.synth_config()?),
    }
}

fn prepare(cfg: &RunConfig) -> Result<(Dataset, PreparedData)> {
    cfg.validate()?;
    let ds = dataset(cfg)?;
    let data = PreparedData::new(&ds, cfg.history, cfg.horizon)?;
    Ok((ds, data))
}

fn cmd_teacher(mut cfg: RunConfig, mode: TeacherMode) -> Result<()> {
    match mode {
        TeacherMode::Ref {
            data,
            epochs,
            hidden,
            lr,
            output,
        } => {
            apply_data(&mut cfg, &data);
            cfg.teacher_epochs = epochs.unwrap_or(cfg.teacher_epochs);
            cfg.teacher_hidden = hidden.unwrap_or(cfg.teacher_hidden);
            cfg.teacher_lr = lr.unwrap_or(cfg.teacher_lr);
            let (ds, data) = prepare(&cfg)?;
            let mixing = ds.graph.row_normalized_with_self_loops();
            let (_, preds, run) = train_ref_teacher(&data, mixing, &cfg.teacher_config())?;
            preds.save(&output)?;
            print_json(&json!({
                "mode": "ref",
                "output": output,
                "num_windows": preds.num_windows(),
                "best_epoch": run.best_epoch,
                "train_mae": run.train_mae,
                "untrained_test": to_value(&run.untrained_test),
                "test": to_value(&run.test),
                "config": to_value(&cfg),
            }));
        }
        TeacherMode::Synthetic {
            data,
            sigma,
            bias,
            output,
        } => {
            apply_data(&mut cfg, &data);
            let (_, data) = prepare(&cfg)?;
            let all: Vec<usize> = data.range(Split::All).collect();
            let preds = synth_teacher(&data.raw_targets(&all), sigma, bias, cfg.seed)?;
            preds.save(&output)?;
            print_json(&json!({
                "mode": "synthetic",
                "output": output,
                "num_windows": preds.num_windows(),
                "sigma": sigma,
                "bias": bias,
                "seed": cfg.seed,
            }));
        }
        TeacherMode::Import { file, data, output } => {
            apply_data(&mut cfg, &data);
            let (_, data) = prepare(&cfg)?;
            let preds = load_teacher(&file, &data)?;
            if let Some(out) = &output {
                preds.save(out)?;
            }
            print_json(&json!({
                "mode": "import",
                "file": file,
                "num_windows": preds.num_windows(),
                "window_shape": preds.window_shape(),
            }));
        }
    }
    Ok(())
}

fn apply_train(cfg: &mut RunConfig, a: &TrainArgs) {
    apply_data(cfg, &a.data);
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { cfg.$field = v; })* };
    }
    set!(epochs, batch_size, lr, dim, latent, lambda, beta1, beta2, delta, patience);
    if let Some(t) = &a.teacher {
        cfg.teacher = Some(t.clone());
    }
    if let Some(o) = &a.out_dir {
        cfg.out_dir = o.clone();
    }
}

struct TrainRun {
    data: PreparedData,
    checkpoint: Checkpoint,
    summary: Value,
}

/// Trains with `tcfg`, writing `checkpoint.stck`, `epochs.jsonl` and
/// `config.toml` under the output directory and streaming epoch records to
/// stdout when `stream` is set.
fn train_to_dir(cfg: &RunConfig, tcfg: &TrainConfig, label: &str, stream: bool) -> Result<TrainRun> {
    let (_, data) = prepare(cfg)?;
    let teacher = match &cfg.teacher {
        Some(p) if tcfg.kd_mode() != stdistill::trainer::KdMode::Off => Some(load_teacher(p, &data)?),
        _ => None,
    };
    fs::create_dir_all(&cfg.out_dir)?;
    let mut log = BufWriter::new(File::create(cfg.out_dir.join("epochs.jsonl"))?);
    let mut io_err = None;
    let outcome = train(&data, teacher.as_ref(), tcfg, |e| {
        let line = serde_json::to_string(e).expect("serializable");
        if stream {
            emit(&line);
        }
        if let Err(err) = writeln!(log, "{line}") {
            io_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    log.flush()?;
    let mut checkpoint = outcome.checkpoint;
    let echo = json!({ "run": to_value(cfg), "variant": label });
    checkpoint.set_run_config(echo.clone());
    let ckpt_path = cfg.out_dir.join("checkpoint.stck");
    checkpoint.save(&ckpt_path)?;
    fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml())?;
    let val = evaluate(&checkpoint, &data, Split::Val, None)?;
    let summary = json!({
        "variant": label,
        "checkpoint": ckpt_path,
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.log.len(),
        "stopped_early": outcome.stopped_early,
        "val": to_value(&val),
        "config": to_value(tcfg),
    });
    fs::write(cfg.out_dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json"))?;
    Ok(TrainRun {
        data,
        checkpoint,
        summary,
    })
}

fn cmd_train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    apply_train(&mut cfg, &a);
    train_to_dir(&cfg, &cfg.train_config(), "full", true)?;
    Ok(())
}

fn cmd_ablate(mut cfg: RunConfig, a: AblateArgs) -> Result<()> {
    apply_train(&mut cfg, &a.train);
    if !VARIANTS.contains(&a.variant.as_str()) {
        return Err(Error::Config(format!(
            "unknown variant {:?} (expected one of {})",
            a.variant,
            VARIANTS.join(", ")
        )));
    }
    let tcfg = ablate(&a.variant, &cfg.train_config())?;
    let run = train_to_dir(&cfg, &tcfg, &a.variant, false)?;
    let test = evaluate(&run.checkpoint, &run.data, Split::Test, None)?;
    print_json(&json!({
        "variant": a.variant,
        "report": to_value(&test),
        "train": run.summary,
    }));
    Ok(())
}

fn load_for_eval(cfg: &mut RunConfig, checkpoint: &Path, dataset: &Option<PathBuf>) -> Result<(Checkpoint, PreparedData)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if let Some(d) = dataset {
        cfg.dataset = Some(d.clone());
    } else if let Some(d) = ckpt
        .run_config()
        .and_then(|v| v.pointer("/run/dataset"))
        .and_then(Value::as_str)
    {
        cfg.dataset = Some(PathBuf::from(d));
    }
    let ds = dataset_for(cfg, &ckpt)?;
    let dims = ckpt.dims();
    let data = PreparedData::with_normalizer(&ds, dims.history, dims.horizon, ckpt.normalizer().clone())?;
    ckpt.check_alignment(&data)?;
    Ok((ckpt, data))
}

/// Without an explicit dataset, regenerates the synthetic data the checkpoint
/// was trained on.
fn dataset_for(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Dataset> {
    if cfg.dataset.is_some() {
        return dataset(cfg);
    }
    let run = ckpt.run_config().and_then(|v| v.get("run")).cloned();
    match run {
        Some(v) => {
            let trained: RunConfig =
                serde_json::from_value(v).map_err(|e| Error::Config(format!("checkpoint run config: {e}")))?;
            dataset(&trained)
        }
        None => dataset(cfg),
    }
}

fn cmd_eval(mut cfg: RunConfig, a: EvalArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let corruption = a.corrupt.as_deref().map(str::parse::<Corruption>).transpose()?;
    let (ckpt, data) = load_for_eval(&mut cfg, &a.checkpoint, &a.dataset)?;
    let report = evaluate(&ckpt, &data, split, corruption.map(|c| (c, cfg.seed)))?;
    if a.csv {
        emit(report.to_csv().trim_end());
    } else {
        print_json(&json!({
            "split": a.split,
            "corruption": corruption.map(|c| c.to_string()),
            "report": to_value(&report),
        }));
    }
    Ok(())
}

fn cmd_robust(mut cfg: RunConfig, a: RobustArgs) -> Result<()> {
    let gammas = parse_gammas(&a.gammas)?;
    let (ckpt, data) = load_for_eval(&mut cfg, &a.checkpoint, &a.dataset)?;
    let points = robust_sweep(&ckpt, &data, &a.mode, &gammas, cfg.seed)?;
    print_json(&json!({ "mode": a.mode, "seed": cfg.seed, "points": to_value(&points) }));
    Ok(())
}

fn cmd_bench(cfg: RunConfig, a: BenchArgs) -> Result<()> {
    let defaults = BenchConfig::default();
    let bcfg = BenchConfig {
        nodes: a.nodes,
        reps: a.reps,
        min_secs: a.min_secs,
        warmup: a.warmup,
        history: a.history.unwrap_or(defaults.history),
        horizon: a.horizon.unwrap_or(defaults.horizon),
        dim: a.dim.unwrap_or(defaults.dim),
        latent: a.dim.unwrap_or(defaults.latent),
        seed: cfg.seed,
        ..defaults
    };
    let rows = run_bench(&bcfg)?;
    if a.csv {
        emit("nodes,student_secs,teacher_secs,ratio");
        for r in &rows {
            emit(&format!("{},{},{},{}", r.nodes, r.student_secs, r.teacher_secs, r.ratio));
        }
    } else {
        print_json(&json!({ "config": to_value(&bcfg), "rows": to_value(&rows) }));
    }
    Ok(())
}
