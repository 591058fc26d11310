#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use trajgrid::data::{
    generate_scenarios, prepare_split, read_jsonl, resample_track, write_jsonl, DatasetSplit,
    Manifest, ScenarioKind, ScenarioMix, ScenarioSpec, Track, RESAMPLE_PERIOD,
};
use trajgrid::eval::{evaluate, metrics_csv};
use trajgrid::grid::{cell_center, GridGeometry};
use trajgrid::kalman::KfConfig;
use trajgrid::neural::checkpoint::{load_checkpoint, save_checkpoint};
use trajgrid::neural::{
    predict_fleet, train, Architecture, FeatureVector, HeadKind, LossKind, NetworkParams,
    Optimizer, TrainConfig,
};
use trajgrid::render::{to_csv, to_pgm};
use trajgrid::Execution;

const RAW_FILE: &str = "raw.jsonl";
const RESAMPLED_FILE: &str = "resampled.jsonl";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "trajgrid", version, about = "Occupancy-grid trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic highway tracks (raw 10 ms and resampled 100 ms).
    Generate(GenerateArgs),
    /// Train one network for one horizon.
    Train(TrainArgs),
    /// Score checkpoints and the Kalman baseline on the validation split.
    Eval(EvalArgs),
    /// Predict a fused occupancy map for a scene.
    Predict(PredictArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 500)]
    tracks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Generate a single scenario kind instead of the default mix.
    #[arg(long, value_enum)]
    only: Option<KindArg>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (or a resampled JSONL file).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint and training log.
    #[arg(long)]
    out: PathBuf,
    /// Prediction horizon in seconds, a multiple of 0.1.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = HeadArg::Grid)]
    head: HeadArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    /// Window length in 100 ms steps.
    #[arg(long, default_value_t = 20)]
    window: usize,
    /// Keep every n-th window.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Comma-separated widths of the input fully-connected layers.
    #[arg(long, default_value = "64")]
    input_fc: String,
    /// Comma-separated LSTM hidden sizes.
    #[arg(long, default_value = "128,128")]
    lstm: String,
    /// Comma-separated widths of the output fully-connected layers.
    #[arg(long, default_value = "256")]
    output_fc: String,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 40)]
    batch: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Binary)]
    loss: LossArg,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// One or more checkpoints, or directories of checkpoints.
    #[arg(long, required = true, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    /// Metrics CSV path; printed to standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Expected head of every checkpoint.
    #[arg(long, value_enum)]
    head: Option<HeadArg>,
    /// Score the training split instead of the validation split.
    #[arg(long)]
    train_split: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSONL scene: 100 ms samples of one or more tracks.
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for the PGM and CSV maps.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum HeadArg {
    Grid,
    Regress,
}

impl From<HeadArg> for HeadKind {
    fn from(h: HeadArg) -> Self {
        match h {
            HeadArg::Grid => HeadKind::Grid,
            HeadArg::Regress => HeadKind::Regression,
        }
    }
}

/// Scenario names as they appear in the manifest.
#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum KindArg {
    Cruise,
    LaneChange,
    CutIn,
    DecelLead,
}

impl From<KindArg> for ScenarioKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Cruise => ScenarioKind::Cruise,
            KindArg::LaneChange => ScenarioKind::LaneChange,
            KindArg::CutIn => ScenarioKind::CutIn,
            KindArg::DecelLead => ScenarioKind::DecelLead,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Binary,
    Categorical,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    if a.tracks == 0 {
        return Err(usage("--tracks must be at least 1"));
    }
    let spec = ScenarioSpec {
        n_tracks: a.tracks,
        mix: a.only.map_or_else(ScenarioMix::default, |k| ScenarioMix::only(k.into())),
        ..ScenarioSpec::default()
    };
    let scenarios = generate_scenarios(&spec, a.seed).context("generating scenarios")?;
    let raw: Vec<Track> = scenarios.iter().map(|s| s.track.clone()).collect();
    let resampled = raw
        .iter()
        .map(resample_track)
        .collect::<Result<Vec<_>, _>>()
        .context("resampling")?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_jsonl(&a.out.join(RAW_FILE), &raw).context("writing raw tracks")?;
    write_jsonl(&a.out.join(RESAMPLED_FILE), &resampled).context("writing resampled tracks")?;
    let manifest = Manifest::new(&spec, a.seed, &scenarios);
    let json = serde_json::to_string_pretty(&manifest).map_err(anyhow::Error::from)?;
    fs::write(a.out.join(MANIFEST_FILE), json + "\n").context("writing manifest")?;
    println!(
        "wrote {} tracks ({} raw samples) to {}",
        raw.len(),
        raw.iter().map(|t| t.samples.len()).sum::<usize>(),
        a.out.display()
    );
    Ok(())
}

fn check_delta(delta: f64) -> Result<(), Failure> {
    let steps = delta / RESAMPLE_PERIOD;
    if !(delta > 0.0) || !steps.is_finite() || (steps - steps.round()).abs() > 1e-9 {
        return Err(usage(format!("--delta {delta} is not a positive multiple of 0.1 s")));
    }
    Ok(())
}

fn parse_widths(flag: &str, text: &str) -> Result<Vec<usize>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(usage(format!("--{flag}: `{s}` is not a positive width"))),
        })
        .collect()
}

fn load_tracks(data: &Path) -> anyhow::Result<Vec<Track>> {
    let path = if data.is_dir() {
        data.join(RESAMPLED_FILE)
    } else {
        data.to_path_buf()
    };
    read_jsonl(&path).with_context(|| format!("reading {}", path.display()))
}

fn head_name(head: HeadKind) -> &'static str {
    match head {
        HeadKind::Grid => "grid",
        HeadKind::Regression => "regress",
    }
}

/// Per-horizon file stem, e.g. `grid-delta-1.0`.
fn checkpoint_stem(head: HeadKind, delta: f64) -> String {
    format!("{}-delta-{delta:.1}", head_name(head))
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    check_delta(a.delta)?;
    if a.window == 0 || a.epochs == 0 || a.stride == 0 || a.batch == 0 {
        return Err(usage("--window, --epochs, --stride and --batch must be positive"));
    }
    let head: HeadKind = a.head.into();
    let arch = Architecture {
        input_fc: parse_widths("input-fc", &a.input_fc)?,
        lstm: parse_widths("lstm", &a.lstm)?,
        output_fc: parse_widths("output-fc", &a.output_fc)?,
        head,
    };
    if arch.lstm.is_empty() {
        return Err(usage("--lstm needs at least one layer"));
    }
    let config = TrainConfig {
        learning_rate_init: a.lr,
        batch_size: a.batch,
        max_epochs: a.epochs,
        rng_seed: a.seed,
        sequence_length: a.window,
        loss: match a.loss {
            LossArg::Binary => LossKind::BinaryPerClass,
            LossArg::Categorical => LossKind::Categorical,
        },
        optimizer: match a.optimizer {
            OptimizerArg::Adam => Optimizer::adam(),
            OptimizerArg::Sgd => Optimizer::Sgd,
        },
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;

    let tracks = load_tracks(&a.data)?;
    let split = load_split(&tracks, a.delta, a.window, a.seed)?.subsample(a.stride);
    let outcome = train(&arch, &split, &config).context("training")?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let stem = checkpoint_stem(head, a.delta);
    let ckpt = a.out.join(format!("{stem}.ckpt"));
    save_checkpoint(&outcome.params, &ckpt).context("writing checkpoint")?;
    fs::write(a.out.join(format!("{stem}.log.csv")), outcome.log_csv())
        .context("writing training log")?;
    println!(
        "trained on {} windows ({} validation), best epoch {} of {}; wrote {}",
        split.train.len(),
        split.validation.len(),
        outcome.best_epoch,
        outcome.log.len(),
        ckpt.display()
    );
    Ok(())
}

fn load_split(tracks: &[Track], delta: f64, window: usize, seed: u64) -> anyhow::Result<DatasetSplit> {
    prepare_split(
        tracks,
        delta,
        window,
        &GridGeometry::default(),
        0.85,
        seed,
        Execution::default(),
    )
    .context("building the dataset")
}

fn collect_checkpoints(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e == "ckpt"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let paths = collect_checkpoints(&a.checkpoint)?;
    if paths.is_empty() {
        return Err(usage("no checkpoints found"));
    }
    let mut models: Vec<NetworkParams> = Vec::new();
    for p in &paths {
        models.push(load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?);
    }
    let expected = a.head.map(HeadKind::from).unwrap_or(models[0].head);
    if let Some(bad) = models.iter().position(|m| m.head != expected) {
        return Err(usage(format!(
            "{} has a {} head but the metric is for {} heads",
            paths[bad].display(),
            head_name(models[bad].head),
            head_name(expected)
        )));
    }
    models.sort_by(|x, y| x.delta.total_cmp(&y.delta));

    let tracks = load_tracks(&a.data)?;
    let kf = KfConfig::default();
    let mut rows = Vec::new();
    for m in &models {
        let split = load_split(&tracks, m.delta, m.provenance.window, m.provenance.split_seed)?;
        let windows = if a.train_split { &split.train } else { &split.validation };
        let pair = evaluate(m, windows, &kf, Execution::default())
            .with_context(|| format!("evaluating delta {}", m.delta))?;
        rows.extend(pair);
    }
    let csv = metrics_csv(&rows);
    match a.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<(), Failure> {
    let params = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    if params.head != HeadKind::Grid {
        return Err(usage("predict needs a grid-head checkpoint"));
    }
    let scene = read_jsonl(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    if scene.is_empty() {
        return Err(usage("the scene has no tracks"));
    }
    let window = params.provenance.window.max(1);
    let sequences: Vec<Vec<FeatureVector>> = scene
        .iter()
        .map(|t| {
            let start = t.samples.len().saturating_sub(window);
            t.samples[start..].iter().map(|s| s.features()).collect()
        })
        .collect();
    if let Some(empty) = scene.iter().position(|t| t.samples.is_empty()) {
        return Err(Failure::Runtime(anyhow!("track {} is empty", scene[empty].id)));
    }
    let map = predict_fleet(&params, &sequences, Execution::default()).context("predicting")?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("fused.pgm"), to_pgm(&map)).context("writing PGM")?;
    fs::write(a.out.join("fused.csv"), to_csv(&map)).context("writing CSV")?;
    println!("rank,i_x,i_y,x,y,p");
    for (rank, (idx, p)) in map.top_k(a.top_k).into_iter().enumerate() {
        let (x, y) = cell_center(&map.geometry, idx).map_err(anyhow::Error::from)?;
        println!("{},{},{},{},{},{}", rank + 1, idx.i_x, idx.i_y, x, y, p);
    }
    Ok(())
}
