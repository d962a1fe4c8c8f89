use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use paxkit::axis::{decode_axis, encode_axis, AxisCodecConfig};
use paxkit::data::{load_dataset, synthesize, MetricsWriter, RunConfig, Split, SynthParams};
use paxkit::eval::{average_precision, read_detections, write_detections, ApProtocol};
use paxkit::model::{load_checkpoint, save_checkpoint, ModelConfig};
use paxkit::train::{detection_records, evaluate_map, ground_truth_records, prepare_samples, train};
use paxkit::verify::{self, Suite, VerifyOptions};

/// Bad flag values that clap cannot catch; exits with the usage code.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

#[derive(Parser)]
#[command(name = "paxkit", version, about = "Point-axis oriented object detection toolkit")]
struct Cli {
    /// Worker threads for batch inference.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene directory.
    Synth(SynthArgs),
    /// Train a model on a scene directory.
    Train(TrainArgs),
    /// Run inference and score the detections.
    Eval(EvalArgs),
    /// Run the built-in oracle suites.
    Verify(VerifyArgs),
    /// Print the axis encoding of one direction.
    AxisDemo(AxisDemoArgs),
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SynthParams::default().n_images)]
    n_images: usize,
    #[arg(long, default_value_t = SynthParams::default().max_objects)]
    max_objects: usize,
    #[arg(long, default_value_t = SynthParams::default().height)]
    height: usize,
    #[arg(long, default_value_t = SynthParams::default().width)]
    width: usize,
    /// `val` draws scenes from a seed namespace disjoint from `train`.
    #[arg(long, default_value = "train")]
    split: Split,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint, metrics and effective config.
    #[arg(long)]
    out: PathBuf,
    /// Scene directory scored after training.
    #[arg(long)]
    val: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, default_value = "voc12")]
    protocol: ApProtocol,
    /// Output directory for the detection dump and AP tables.
    #[arg(long)]
    out: PathBuf,
    /// Run configuration the checkpoint must agree with.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    score_threshold: f64,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long, default_value = "all")]
    suite: Suite,
    /// Reduced sample counts.
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct AxisDemoArgs {
    /// Direction in degrees.
    #[arg(long, allow_hyphen_values = true)]
    theta: f64,
    #[arg(long, default_value_t = AxisCodecConfig::default().n_bins)]
    n_bins: usize,
    /// Peak width in bins.
    #[arg(long, default_value_t = AxisCodecConfig::default().sigma)]
    sigma: f64,
    /// Also write `bin,angle_deg,value` rows here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            // clap's message up to the usage block, folded onto one line
            let rendered = e.render().to_string();
            let reason: Vec<&str> =
                rendered.lines().map(str::trim).take_while(|l| !l.is_empty() && !l.starts_with("Usage:")).collect();
            eprintln!("{} (try --help)", reason.join(" "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(UsageError("--threads must be at least 1".into()).into());
    }
    match cli.cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a, cli.threads),
        Command::Eval(a) => cmd_eval(a, cli.threads),
        Command::Verify(a) => cmd_verify(a),
        Command::AxisDemo(a) => cmd_axis_demo(a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let params = SynthParams {
        n_images: a.n_images,
        max_objects: a.max_objects,
        height: a.height,
        width: a.width,
        ..SynthParams::default()
    };
    params.validate().map_err(|e| UsageError(e.to_string()))?;
    let manifest = synthesize(&a.out, a.seed, a.split, &params)?;
    println!("wrote {} {} scenes to {}", manifest.scenes.len(), a.split, a.out.display());
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs, threads: usize) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let data = load_dataset(&a.data)?;
    if data.classes != cfg.classes {
        bail!("dataset classes {:?} differ from config classes {:?}", data.classes, cfg.classes);
    }
    let samples = prepare_samples(&data.scenes, &cfg.classes, &cfg.codec())?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.toml"), cfg.to_toml_string())?;
    let mut metrics = MetricsWriter::create(&a.out.join("metrics.jsonl"))?;
    // wall-clock times live in a sidecar so metrics.jsonl stays reproducible
    let mut timing = BufWriter::new(fs::File::create(a.out.join("timing.jsonl"))?);
    let start = Instant::now();
    let mut io_err = None;
    let mut timing_err = None;
    let outcome = train(&cfg, &samples, |rec, _| {
        if let Err(e) = metrics.write(rec) {
            io_err.get_or_insert(e);
        }
        let ms = start.elapsed().as_millis() as u64;
        let line = serde_json::json!({ "epoch": rec.epoch, "wall_ms": ms });
        if let Err(e) = writeln!(timing, "{line}").and_then(|_| timing.flush()) {
            timing_err.get_or_insert(e);
        }
        let maps = match (rec.map50, rec.map75) {
            (Some(m50), Some(m75)) => format!(" mAP50 {m50:.4} mAP75 {m75:.4}"),
            _ => String::new(),
        };
        eprintln!(
            "epoch {:>4} loss {:.5} lr {:.1e}{maps} [{:.1}s]",
            rec.epoch,
            rec.loss,
            rec.lr,
            start.elapsed().as_secs_f64()
        );
    })?;
    if let Some(e) = io_err {
        return Err(e).context("writing metrics");
    }
    if let Some(e) = timing_err {
        return Err(e).context("writing timing.jsonl");
    }
    let ckpt = a.out.join("model.ckpt");
    save_checkpoint(&ckpt, &outcome.model, cfg.seed)?;
    println!("wrote {}", ckpt.display());

    if let Some(val_dir) = a.val {
        let val = load_dataset(&val_dir)?;
        let e = evaluate_map(&outcome.model, &val.scenes, &cfg.classes, &cfg.codec(), cfg.score_threshold, threads)?;
        let json = serde_json::json!({ "map50": e.map50.to_json(), "map75": e.map75.to_json() });
        fs::write(a.out.join("val.json"), serde_json::to_string_pretty(&json)? + "\n")?;
        println!("val mAP50 {:.4} mAP75 {:.4}", e.map50.map, e.map75.map);
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, threads: usize) -> Result<()> {
    if !(a.iou > 0.0 && a.iou <= 1.0) {
        return Err(UsageError(format!("--iou must be in (0, 1], got {}", a.iou)).into());
    }
    let model = load_checkpoint(&a.checkpoint).with_context(|| format!("checkpoint {}", a.checkpoint.display()))?;
    let mut codec = AxisCodecConfig { n_bins: model.cfg.n_bins, ..AxisCodecConfig::default() };
    if let Some(path) = &a.config {
        let cfg = load_config(Some(path))?;
        if cfg.model_config() != model.cfg {
            bail!("checkpoint/config mismatch: {}", config_diff(&model.cfg, &cfg.model_config()));
        }
        codec = cfg.codec();
    }
    let data = load_dataset(&a.data)?;
    if data.classes.len() != model.cfg.n_classes {
        bail!(
            "checkpoint/data mismatch: model has {} classes, dataset has {}",
            model.cfg.n_classes,
            data.classes.len()
        );
    }
    let dets = detection_records(&model, &data.scenes, &data.classes, &codec, a.score_threshold, threads)?;
    fs::create_dir_all(&a.out)?;
    let dump = a.out.join("detections.txt");
    let mut w = BufWriter::new(fs::File::create(&dump)?);
    write_detections(&mut w, &dets)?;
    w.flush()?;
    drop(w);

    // score what was written, so the dump alone reproduces the report
    let dets = read_detections(BufReader::new(fs::File::open(&dump)?))?;
    let gts = ground_truth_records(&data.scenes)?;
    let report = average_precision(&dets, &gts, a.iou, a.protocol);
    let table = report.to_table();
    fs::write(a.out.join("ap.txt"), &table)?;
    fs::write(a.out.join("ap.json"), serde_json::to_string_pretty(&report.to_json())? + "\n")?;
    print!("{table}");
    Ok(())
}

/// `key checkpoint-value vs config-value` for every differing field.
fn config_diff(ckpt: &ModelConfig, cfg: &ModelConfig) -> String {
    let (a, b) = (serde_json::to_value(ckpt).unwrap_or_default(), serde_json::to_value(cfg).unwrap_or_default());
    let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else { return "model configs differ".into() };
    let diffs: Vec<String> =
        a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, v)| format!("{k} {v} vs {}", b[k])).collect();
    diffs.join(", ")
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    let opts =
        VerifyOptions { seed: a.seed, ..if a.quick { VerifyOptions::quick() } else { VerifyOptions::default() } };
    let mut failed = Vec::new();
    for report in verify::run(a.suite, &opts) {
        println!("== {} ({} ms)", report.suite, report.elapsed_ms);
        for c in &report.checks {
            println!("{c}");
        }
        failed.extend(report.failures().map(|c| c.name.clone()));
    }
    if !failed.is_empty() {
        bail!("{} failing checks: {}", failed.len(), failed.join(", "));
    }
    println!("all checks passed");
    Ok(())
}

fn cmd_axis_demo(a: AxisDemoArgs) -> Result<()> {
    let cfg = AxisCodecConfig { n_bins: a.n_bins, sigma: a.sigma, ..AxisCodecConfig::default() };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    if !a.theta.is_finite() {
        return Err(UsageError(format!("--theta must be finite, got {}", a.theta)).into());
    }
    let enc = encode_axis(a.theta.to_radians(), &cfg);
    let dec = decode_axis(&enc.values)?;
    let values: Vec<String> = enc.values.iter().map(|v| format!("{v:.6}")).collect();
    println!("encoding [{}]", values.join(", "));
    let peaks: Vec<String> = dec.directions.iter().map(|d| format!("{:.3}", d.to_degrees())).collect();
    println!(
        "decoded principal direction {:.3} deg (bin {}, peaks {})",
        dec.principal_reduced.to_degrees(),
        dec.bin,
        peaks.join(" ")
    );
    if let Some(path) = a.csv {
        let mut w = BufWriter::new(fs::File::create(&path)?);
        writeln!(w, "bin,angle_deg,value")?;
        let width = 360.0 / cfg.n_bins as f64;
        for (b, v) in enc.values.iter().enumerate() {
            writeln!(w, "{b},{},{v}", b as f64 * width)?;
        }
        w.flush()?;
    }
    Ok(())
}
