//! `tafcal` command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use tafcal::data::{self, split_ldo, Layout, SyntheticSpec};
use tafcal::model::{Checkpoint, Manifest, MANIFEST_FILE};
use tafcal::tensor::{Precision, Real};
use tafcal::trainer::{
    self, ablate, export_embeddings, sweep, RunCache, RunReport, Stage, SweepAxis, TrainConfig,
};
use tafcal::Error;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage: unknown command or flag, bad flag value
  3  config: malformed config or override, unknown key, bad version
  4  io: missing or unreadable file
  5  format: corrupt tensor file or manifest
  6  invalid-argument: shape mismatch, bad label, bad parameter
  7  numerical: divergence, non-finite values, reconstruction residual
  8  uncalibrated: calibrated use without a source prototype

On failure the first stderr line is `error: category=<name> code=<n>`,
followed by human-readable diagnostics.

Environment:
  TFCAL_PRECISION=single|double  overrides the config precision
  RUST_LOG=info|debug            log verbosity (default info)";

#[derive(Parser, Debug)]
#[command(name = "tafcal", version, about = "Fourier amplitude style calibration toolkit", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-domain dataset.
    GenData(GenDataArgs),
    /// Train one model and evaluate it on the held-out domain.
    Train(RunArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Run the component ablation grid.
    Ablate(GridArgs),
    /// Run a sensitivity sweep.
    Sweep(SweepArgs),
    /// Dump style-layer features as CSV.
    Export(ExportArgs),
    /// Print checkpoint and prototype details.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// JSON config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key override applied after the file, e.g. `calibration.eta=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Built-in spec used when no config file is given.
    #[arg(long, value_enum, default_value_t = Preset::AmplitudeShift)]
    preset: Preset,
    /// File layout of the written images.
    #[arg(long, value_enum, default_value_t = LayoutArg::Packed)]
    layout: LayoutArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    AmplitudeShift,
    PhaseShift,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LayoutArg {
    Packed,
    PerSample,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Target,
    Val,
    Train,
    All,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Apply test-time calibration with the stored prototype.
    #[arg(long)]
    calibrated: bool,
    /// Calibration strength.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Which samples to score.
    #[arg(long, value_enum, default_value_t = SplitArg::Target)]
    split: SplitArg,
    /// Dataset directory; defaults to the one in the run's config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Where to write eval.json; defaults to the checkpoint directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds.
    #[arg(long, default_value = "0,1,2", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AxisArg {
    Strength,
    Layer,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value_t = AxisArg::Strength)]
    axis: AxisArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    PreStyle,
    PostStyle,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value_t = StageArg::PreStyle)]
    stage: StageArg,
    /// Calibration strength for the post-style stage (0 = roundtrip).
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    ckpt: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 3,
        "io" => 4,
        "format" => 5,
        "invalid-argument" => 6,
        "numerical" => 7,
        "uncalibrated" => 8,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: category={} code={code}", e.category());
            eprintln!("  {e}");
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Command) -> tafcal::Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => {
            let base = train_config(&a.config)?;
            let report = ablate(&base, &a.seeds, a.jobs, &RunCache::new())?;
            write_grid(&a.out, "ablation", &report)
        }
        Command::Sweep(a) => {
            let base = train_config(&a.grid.config)?;
            let axis = match a.axis {
                AxisArg::Strength => SweepAxis::Strength,
                AxisArg::Layer => SweepAxis::Layer,
            };
            let report = sweep(&base, axis, &a.grid.seeds, a.grid.jobs, &RunCache::new())?;
            write_grid(&a.grid.out, &report.kind.clone(), &report)
        }
        Command::Export(a) => export(a),
        Command::Inspect(a) => inspect(a),
    }
}

/// Sets `path` (dotted) in `root` to `raw`, parsed as JSON when possible
/// and as a string otherwise.
fn apply_override(root: &mut Value, spec: &str) -> tafcal::Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("override key {key:?} has an empty segment")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one segment")
}

fn config_value(args: &ConfigArgs, default: Value) -> tafcal::Result<Value> {
    let mut root = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => default,
    };
    for o in &args.overrides {
        apply_override(&mut root, o)?;
    }
    Ok(root)
}

fn train_config(args: &ConfigArgs) -> tafcal::Result<TrainConfig> {
    let value = config_value(args, Value::Object(Default::default()))?;
    let mut cfg: TrainConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    if let Ok(p) = std::env::var("TFCAL_PRECISION") {
        cfg.precision = p
            .parse::<Precision>()
            .map_err(|_| Error::Config(format!("TFCAL_PRECISION must be single or double, got {p:?}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> tafcal::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn gen_data(a: GenDataArgs) -> tafcal::Result<()> {
    let preset = match a.preset {
        Preset::AmplitudeShift => SyntheticSpec::amplitude_shift(0),
        Preset::PhaseShift => SyntheticSpec::phase_shift_control(0),
    };
    let value = config_value(&a.config, serde_json::to_value(&preset)?)?;
    let spec: SyntheticSpec = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    let ds = data::generate(&spec)?;
    let layout = match a.layout {
        LayoutArg::Packed => Layout::PackedByDomain,
        LayoutArg::PerSample => Layout::PerSample,
    };
    data::save_with_layout(&ds, &a.out, layout)?;
    write_json(&a.out.join("spec.json"), &spec)?;
    println!("wrote {} samples ({} domains, {} classes) to {}", ds.len(), ds.num_domains(), ds.num_classes(), a.out.display());
    Ok(())
}

fn train(a: RunArgs) -> tafcal::Result<()> {
    let cfg = train_config(&a.config)?;
    let ds = cfg.data.load()?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_json(&a.out.join("config.json"), &cfg)?;
    let report = match cfg.precision {
        Precision::Single => train_save::<f32>(&cfg, &ds, &a.out)?,
        Precision::Double => train_save::<f64>(&cfg, &ds, &a.out)?,
    };
    println!(
        "target {}: uncalibrated {:.4}, calibrated {}",
        report.target_domain,
        report.target_accuracy_uncalibrated,
        report
            .target_accuracy_calibrated
            .map_or("n/a".to_string(), |v| format!("{v:.4}"))
    );
    Ok(())
}

fn train_save<T: Real>(cfg: &TrainConfig, ds: &data::DomainDataset, out: &Path) -> tafcal::Result<RunReport> {
    let (ckpt, report) = trainer::train::<T>(cfg, ds)?;
    ckpt.save(out)?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// The run config stored next to a checkpoint.
fn run_config(ckpt: &Path) -> tafcal::Result<TrainConfig> {
    let path = ckpt.join("config.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    TrainConfig::from_json(&text)
}

fn split_indices(cfg: &TrainConfig, ds: &data::DomainDataset, split: SplitArg) -> tafcal::Result<Vec<usize>> {
    let s = split_ldo(ds, cfg.target_domain, cfg.val_fraction, cfg.seed)?;
    Ok(match split {
        SplitArg::Target => s.test,
        SplitArg::Val => s.val,
        SplitArg::Train => s.train,
        SplitArg::All => (0..ds.len()).collect(),
    })
}

fn checkpoint_precision(dir: &Path) -> tafcal::Result<Precision> {
    Manifest::read(&dir.join(MANIFEST_FILE))?
        .get("precision")?
        .parse()
        .map_err(|_| Error::Config("checkpoint precision must be single or double".into()))
}

fn eval(a: EvalArgs) -> tafcal::Result<()> {
    let cfg = run_config(&a.ckpt)?;
    let ds = match &a.data {
        Some(p) => data::load(p)?,
        None => cfg.data.load()?,
    };
    let indices = split_indices(&cfg, &ds, a.split)?;
    let report = match checkpoint_precision(&a.ckpt)? {
        Precision::Single => trainer::evaluate(&Checkpoint::<f32>::load(&a.ckpt)?, &ds, &indices, a.calibrated, a.tau)?,
        Precision::Double => trainer::evaluate(&Checkpoint::<f64>::load(&a.ckpt)?, &ds, &indices, a.calibrated, a.tau)?,
    };
    let out = a.out.unwrap_or_else(|| a.ckpt.join("eval.json"));
    write_json(&out, &report)?;
    println!("accuracy {:.4} ({}/{})", report.accuracy, report.correct, report.total);
    for d in &report.per_domain {
        println!("  {} {:.4} ({}/{})", d.name, d.accuracy, d.correct, d.total);
    }
    Ok(())
}

fn write_grid(out: &Path, name: &str, report: &trainer::GridReport) -> tafcal::Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(format!("{name}.json")), report)?;
    report.write_csv(&out.join(format!("{name}.csv")))?;
    for s in &report.summary {
        println!("{:<20} {:.4} ± {:.4} (n={})", s.cell, s.mean, s.std, s.n);
    }
    Ok(())
}

fn export(a: ExportArgs) -> tafcal::Result<()> {
    let cfg = run_config(&a.ckpt)?;
    let ds = match &a.data {
        Some(p) => data::load(p)?,
        None => cfg.data.load()?,
    };
    let indices = split_indices(&cfg, &ds, a.split)?;
    let stage = match a.stage {
        StageArg::PreStyle => Stage::PreStyle,
        StageArg::PostStyle => Stage::PostStyle,
    };
    let emb = match checkpoint_precision(&a.ckpt)? {
        Precision::Single => export_embeddings(&Checkpoint::<f32>::load(&a.ckpt)?, &ds, &indices, stage, a.tau)?,
        Precision::Double => export_embeddings(&Checkpoint::<f64>::load(&a.ckpt)?, &ds, &indices, stage, a.tau)?,
    };
    emb.write_csv(&a.out)?;
    println!("wrote {} rows of {:?} features to {}", emb.rows.len(), emb.shape, a.out.display());
    Ok(())
}

fn inspect(a: InspectArgs) -> tafcal::Result<()> {
    match checkpoint_precision(&a.ckpt)? {
        Precision::Single => print_checkpoint(&Checkpoint::<f32>::load(&a.ckpt)?),
        Precision::Double => print_checkpoint(&Checkpoint::<f64>::load(&a.ckpt)?),
    }
    Ok(())
}

fn print_checkpoint<T: Real>(ckpt: &Checkpoint<T>) {
    println!("parameters: {}", ckpt.model.spec.param_count());
    println!("insertion_after_block: {}", ckpt.model.spec.insertion_after_block);
    println!("seed: {}", ckpt.seed);
    println!("config_digest: {}", ckpt.config_digest);
    match &ckpt.prototype {
        Some(p) => {
            let t = p.map.tensor();
            let vals: Vec<f64> = t.data().iter().map(|v| v.to_f64_lossy()).collect();
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            println!("prototype_shape: {:?}", t.shape());
            println!("prototype_epoch: {}", p.epoch);
            println!("prototype_bins: min {min:.6} mean {mean:.6} max {max:.6}");
        }
        None => println!("prototype: none"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nest_and_parse_json() {
        let mut v = serde_json::json!({"epochs": 3});
        apply_override(&mut v, "calibration.eta=0.3").unwrap();
        apply_override(&mut v, "precision=double").unwrap();
        apply_override(&mut v, "epochs=5").unwrap();
        assert_eq!(v, serde_json::json!({"epochs": 5, "precision": "double", "calibration": {"eta": 0.3}}));
        assert!(apply_override(&mut v, "epochs").is_err());
        assert!(apply_override(&mut v, "epochs.x=1").is_err());
    }
}
