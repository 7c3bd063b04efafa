//! The `mgcnn` command-line front end.
//!
//! Settings resolve as flags, then the `--config` TOML file, then built-in
//! defaults. Every command writes a `<command>.manifest.json` into its
//! output directory before any other artifact; `mgcnn replay <manifest>`
//! re-runs it in serial mode.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 usage error,
//! 70 internal invariant violation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::dataset::WindowDataset;
use crate::error::{Error, Result};
use crate::graph::{load_topology, CorridorTopology, DEFAULT_SPEED_FLOOR_MPH};
use crate::metrics::{
    evaluate, export_series, sweep_horizon, sweep_lookback, Experiment, HistoricalAverage, UnitSpace, HORIZONS,
    LOOKBACKS,
};
use crate::model::{forward, Mode, ModelConfig};
use crate::pipeline::{
    assemble_series, correlation_matrix, csv_files, ingest_csv, movement_name, prepare, prepare_with_manifest,
    CleanFeatureSeries, PipelineConfig, PipelineManifest, RawIntersectionSeries, CLASS_ATTR,
};
use crate::spectral::{LambdaMax, SpectralConfig, WeightTransform};
use crate::synth::{generate, SynthConfig, TOPOLOGY_FILE};
use crate::train::{split_train_test, train_with_progress, TrainConfig};
use crate::{MINUTES_PER_DAY, MOVEMENTS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 70;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const PIPELINE_FILE: &str = "pipeline.txt";

#[derive(Debug, Parser)]
#[command(name = "mgcnn", version, about = "Multigraph convolutional network for turning-movement forecasting")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "MGCNN_THREADS")]
    pub threads: Option<usize>,

    /// Run on a single thread for bit-reproducible artifacts.
    #[arg(long, global = true)]
    pub serial: bool,

    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corridor dataset.
    Synth(SynthArgs),
    /// Clean the data and write the pipeline manifest.
    Preprocess(PreprocessArgs),
    /// Train a model and write checkpoint, pipeline manifest and history.
    Train(TrainArgs),
    /// Score a checkpoint and the baselines on the test day.
    Evaluate(CkptArgs),
    /// Predict counts `horizon` minutes after a given minute.
    Predict(PredictArgs),
    /// Train one model per lookback and tabulate test errors.
    SweepLookback(SweepLookbackArgs),
    /// Train one model per horizon and tabulate test errors.
    SweepHorizon(SweepHorizonArgs),
    /// Write truth/prediction series for external plotting.
    ExportPlotData(ExportArgs),
    /// Re-run a command from its manifest in serial mode.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// RNG seed [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Days of minute data [default: 20]
    #[arg(long)]
    pub days: Option<usize>,
    /// Intersections along the corridor [default: 10]
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Fraction of count entries replaced by extreme outliers [default: 0]
    #[arg(long)]
    pub outlier_rate: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Directory of per-intersection CSV files.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Topology file [default: <data-dir>/topology.txt]
    #[arg(long)]
    pub topology: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct PipelineArgs {
    /// |r| at or above which a predictor pair is collinear [default: 0.8]
    #[arg(long)]
    pub collinearity_threshold: Option<f64>,
    /// Leading days used for training and for fitting statistics [default: 19]
    #[arg(long)]
    pub train_days: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
pub struct HyperArgs {
    /// Seed for initialization, shuffling and dropout [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum training epochs [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate [default: 0.0007]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Multiply the learning rate by this every `--lr-decay-every` epochs [default: 0.1]
    #[arg(long)]
    pub lr_decay_factor: Option<f64>,
    /// Epochs between learning-rate decays [default: 10]
    #[arg(long)]
    pub lr_decay_every: Option<usize>,
    /// Minibatch size [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Dropout rate [default: 0.35]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Epochs without improvement before stopping, 0 disables [default: 10]
    #[arg(long)]
    pub patience: Option<usize>,
    /// Chebyshev order K [default: 3]
    #[arg(long)]
    pub cheb_k: Option<usize>,
    /// Width of the first graph convolution [default: 32]
    #[arg(long)]
    pub hidden1: Option<usize>,
    /// Width of the second graph convolution [default: 32]
    #[arg(long)]
    pub hidden2: Option<usize>,
    /// `power` or `fixed:<value>` [default: power]
    #[arg(long)]
    pub lambda_max: Option<String>,
    /// `travel_time` or `inverse` [default: travel_time]
    #[arg(long)]
    pub weight_transform: Option<String>,
    /// Lowest speed used for travel times, mph [default: 1]
    #[arg(long)]
    pub speed_floor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Lookback window M in minutes [default: 10]
    #[arg(long)]
    pub lookback: Option<usize>,
    /// Prediction horizon N in minutes [default: 5]
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CkptArgs {
    /// Checkpoint written by `train`; its directory must hold pipeline.txt.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Must match the checkpoint when given.
    #[arg(long)]
    pub lookback: Option<usize>,
    /// Must match the checkpoint when given.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// [default: the checkpoint's directory]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub ckpt: CkptArgs,
    /// Last observed minute [default: the final minute in the data]
    #[arg(long)]
    pub minute: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub ckpt: CkptArgs,
    /// Movement to export, e.g. EB_T [default: EB_T]
    #[arg(long)]
    pub movement: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepLookbackArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Prediction horizon N [default: 5]
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Lookbacks to try [default: 10,20,30,40,50,60]
    #[arg(long, value_delimiter = ',')]
    pub lookbacks: Option<Vec<usize>>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepHorizonArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Lookback window M [default: 10]
    #[arg(long)]
    pub lookback: Option<usize>,
    /// Horizons to try [default: 1,2,3,4,5]
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A `<command>.manifest.json` file.
    pub manifest: PathBuf,
    /// Write artifacts here instead of the original output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub cheb_k: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1);
        Self {
            cheb_k: m.cheb_k,
            hidden1: m.hidden1,
            hidden2: m.hidden2,
        }
    }
}

/// Every tunable setting, after flags, config file and defaults are merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub lookback: usize,
    pub horizon: usize,
    pub lookbacks: Vec<usize>,
    pub horizons: Vec<usize>,
    pub speed_floor_mph: f64,
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub spectral: SpectralConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            lookback: 10,
            horizon: 5,
            lookbacks: LOOKBACKS.to_vec(),
            horizons: HORIZONS.to_vec(),
            speed_floor_mph: DEFAULT_SPEED_FLOOR_MPH,
            synth: SynthConfig::default(),
            pipeline: PipelineConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            spectral: SpectralConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn apply_pipeline(&mut self, a: &PipelineArgs) {
        if let Some(v) = a.collinearity_threshold {
            self.pipeline.collinearity_threshold = v;
        }
        if let Some(v) = a.train_days {
            self.pipeline.train_days = v;
        }
    }

    fn apply_hyper(&mut self, a: &HyperArgs) -> Result<()> {
        if let Some(v) = a.seed {
            self.seed = v;
        }
        let t = &mut self.train;
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(a.epochs, t.epochs);
        set!(a.learning_rate, t.learning_rate);
        set!(a.lr_decay_factor, t.lr_decay_factor);
        set!(a.lr_decay_every, t.lr_decay_every);
        set!(a.batch_size, t.batch_size);
        set!(a.dropout, t.dropout_rate);
        if let Some(p) = a.patience {
            t.early_stop_patience = (p > 0).then_some(p);
        }
        set!(a.cheb_k, self.model.cheb_k);
        set!(a.hidden1, self.model.hidden1);
        set!(a.hidden2, self.model.hidden2);
        set!(a.speed_floor, self.speed_floor_mph);
        if let Some(s) = &a.lambda_max {
            self.spectral.lambda_max = s.parse::<LambdaMax>()?;
        }
        if let Some(s) = &a.weight_transform {
            self.spectral.weight_transform = s.parse::<WeightTransform>()?;
        }
        Ok(())
    }

    /// Propagates the shared seed and checks every section.
    fn finish(mut self) -> Result<Self> {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
        self.synth.validate()?;
        self.train.validate()?;
        if !(self.pipeline.collinearity_threshold > 0.0 && self.pipeline.collinearity_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "collinearity threshold must lie in (0, 1], got {}",
                self.pipeline.collinearity_threshold
            )));
        }
        if self.pipeline.train_days == 0 {
            return Err(Error::Config("train_days must be at least 1".into()));
        }
        if self.lookback == 0 || self.horizon == 0 {
            return Err(Error::Config("lookback and horizon must be at least 1".into()));
        }
        if self.lookbacks.is_empty() || self.horizons.is_empty() || self.lookbacks.contains(&0) || self.horizons.contains(&0) {
            return Err(Error::Config("sweep lists must be nonempty and positive".into()));
        }
        if !(self.speed_floor_mph > 0.0) {
            return Err(Error::Config("speed floor must be positive".into()));
        }
        self.model_config(1, 1).validate()?;
        Ok(self)
    }

    pub fn model_config(&self, features: usize, lookback: usize) -> ModelConfig {
        ModelConfig {
            cheb_k: self.model.cheb_k,
            hidden1: self.model.hidden1,
            hidden2: self.model.hidden2,
            dropout_rate: self.train.dropout_rate,
            ..ModelConfig::new(features, lookback)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance record written before a command's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: Vec<InputHash>,
    pub version: String,
    pub timestamp: String,
    pub threads: usize,
    pub serial: bool,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("{command}.manifest.json")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn hash_inputs(paths: &[PathBuf]) -> Result<Vec<InputHash>> {
    paths
        .iter()
        .map(|p| {
            Ok(InputHash {
                path: p.clone(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

struct Context {
    args: Vec<String>,
    config_path: Option<PathBuf>,
    threads: usize,
    serial: bool,
}

impl Context {
    fn write_manifest(&self, command: &str, out_dir: &Path, config: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let mut all: Vec<PathBuf> = self.config_path.iter().cloned().collect();
        all.extend_from_slice(inputs);
        let manifest = RunManifest {
            command: command.into(),
            args: self.args.clone(),
            config: config.clone(),
            seed: config.seed,
            inputs: hash_inputs(&all)?,
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            threads: self.threads,
            serial: self.serial,
        };
        let path = out_dir.join(RunManifest::file_name(command));
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invariant(e.to_string()))?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Loaded {
    raw: Vec<RawIntersectionSeries>,
    topology: CorridorTopology,
    inputs: Vec<PathBuf>,
    days: usize,
}

fn load_data(data: &DataArgs, gap_limit: usize) -> Result<Loaded> {
    let files = csv_files(&data.data_dir)?;
    let topo_path = data.topology.clone().unwrap_or_else(|| data.data_dir.join(TOPOLOGY_FILE));
    let topology = load_topology(&topo_path)?;
    let ingested = ingest_csv(&files, gap_limit)?;
    let end = ingested
        .series
        .iter()
        .map(|s| s.first_minute + s.len())
        .max()
        .ok_or_else(|| Error::InvalidInput("no rows in the data directory".into()))?;
    let mut inputs = vec![topo_path];
    inputs.extend(files);
    Ok(Loaded {
        raw: ingested.series,
        topology,
        inputs,
        days: end.div_ceil(MINUTES_PER_DAY),
    })
}

fn dataset(
    clean: &[CleanFeatureSeries],
    topology: &CorridorTopology,
    lookback: usize,
    horizon: usize,
    spectral: &SpectralConfig,
    floor: f64,
) -> Result<WindowDataset> {
    let series = assemble_series(clean, topology, spectral, floor)?;
    WindowDataset::new(Arc::new(series), lookback, horizon)
}

fn base_config(ctx: &Context) -> Result<RunConfig> {
    match &ctx.config_path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn cmd_synth(ctx: &Context, a: &SynthArgs) -> Result<()> {
    let mut cfg = base_config(ctx)?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.days {
        cfg.synth.days = v;
    }
    if let Some(v) = a.nodes {
        cfg.synth.nodes = v;
    }
    if let Some(v) = a.outlier_rate {
        cfg.synth.outlier_rate = v;
    }
    let cfg = cfg.finish()?;
    ctx.write_manifest("synth", &a.out_dir, &cfg, &[])?;
    let data = generate(&cfg.synth)?;
    let paths = data.write_to(&a.out_dir)?;
    println!(
        "wrote {} intersections x {} minutes and {} to {}",
        paths.len(),
        cfg.synth.days * MINUTES_PER_DAY,
        TOPOLOGY_FILE,
        a.out_dir.display()
    );
    if !data.outliers.is_empty() {
        println!("injected {} outliers", data.outliers.len());
    }
    Ok(())
}

fn cmd_preprocess(ctx: &Context, a: &PreprocessArgs) -> Result<()> {
    let mut cfg = base_config(ctx)?;
    cfg.apply_pipeline(&a.pipeline);
    let cfg = cfg.finish()?;
    let loaded = load_data(&a.data, cfg.pipeline.gap_limit)?;
    ctx.write_manifest("preprocess", &a.out_dir, &cfg, &loaded.inputs)?;
    let prepared = prepare(loaded.raw, &cfg.pipeline)?;
    prepared.manifest.save(a.out_dir.join(PIPELINE_FILE))?;

    // Correlation heatmap data for the first intersection's kept features,
    // over the training minutes.
    let first = &prepared.series[0];
    let train_cols = cfg.pipeline.train_days * MINUTES_PER_DAY;
    let cols = train_cols.min(first.len());
    let corr = correlation_matrix(first.attributes.slice(ndarray::s![.., ..cols]))?;
    let names = prepared.manifest.feature_names();
    let mut csv = format!("attribute,{}\n", names.join(","));
    for (i, row) in corr.r.rows().into_iter().enumerate() {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        csv.push_str(&format!("{},{}\n", names[i], vals.join(",")));
    }
    write(&a.out_dir.join("correlation.csv"), &csv)?;

    println!(
        "kept {} of 85 attributes (class {}) across {} intersections",
        prepared.manifest.kept_attribute_ids.len(),
        if prepared.manifest.kept_attribute_ids.contains(&CLASS_ATTR) { "kept" } else { "dropped" },
        prepared.series.len()
    );
    for (s, local) in prepared.series.iter().zip(&prepared.local_kept) {
        println!("  {}: {} kept locally", s.intersection_id, local.len());
    }
    Ok(())
}

fn cmd_train(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let mut cfg = base_config(ctx)?;
    cfg.apply_pipeline(&a.pipeline);
    cfg.apply_hyper(&a.hyper)?;
    if let Some(v) = a.lookback {
        cfg.lookback = v;
    }
    if let Some(v) = a.horizon {
        cfg.horizon = v;
    }
    let cfg = cfg.finish()?;
    let loaded = load_data(&a.data, cfg.pipeline.gap_limit)?;
    ctx.write_manifest("train", &a.out_dir, &cfg, &loaded.inputs)?;

    let prepared = prepare(loaded.raw, &cfg.pipeline)?;
    let ds = dataset(
        &prepared.series,
        &loaded.topology,
        cfg.lookback,
        cfg.horizon,
        &cfg.spectral,
        cfg.speed_floor_mph,
    )?;
    let split = split_train_test(&ds, cfg.pipeline.train_days, loaded.days)?;
    let model = cfg.model_config(ds.series().feature_count(), cfg.lookback);
    println!(
        "training on {} windows ({} features, {} parameters)",
        split.train.len(),
        model.features,
        crate::model::ModelParams::init(&model, cfg.seed)?.parameter_count()
    );
    let (params, history) = train_with_progress(&ds, &split.train, &model, &cfg.train, |e| {
        println!("epoch {:>3}  loss {:.6}  lr {:.2e}", e.epoch + 1, e.loss, e.lr);
    })?;

    prepared.manifest.save(a.out_dir.join(PIPELINE_FILE))?;
    Checkpoint {
        nodes: loaded.topology.node_count(),
        horizon: cfg.horizon,
        spectral: cfg.spectral,
        speed_floor_mph: cfg.speed_floor_mph,
        params,
    }
    .save(a.out_dir.join(CHECKPOINT_FILE))?;
    write(&a.out_dir.join("history.csv"), &history.to_csv())?;
    println!(
        "wrote {} after {} epoch(s){}",
        a.out_dir.join(CHECKPOINT_FILE).display(),
        history.epochs.len(),
        if history.stopped_early { " (early stop)" } else { "" }
    );
    Ok(())
}

struct Restored {
    ckpt: Checkpoint,
    manifest: PipelineManifest,
    ds: WindowDataset,
    days: usize,
    inputs: Vec<PathBuf>,
    out_dir: PathBuf,
}

fn restore(a: &CkptArgs, gap_limit: usize) -> Result<Restored> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let dir = a.ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
    let pipeline_path = dir.join(PIPELINE_FILE);
    let manifest = PipelineManifest::load(&pipeline_path)?;
    let lookback = ckpt.params.config().lookback;
    if a.lookback.is_some_and(|m| m != lookback) || a.horizon.is_some_and(|n| n != ckpt.horizon) {
        return Err(Error::Config(format!(
            "checkpoint was trained with lookback {lookback} and horizon {}",
            ckpt.horizon
        )));
    }
    let loaded = load_data(&a.data, gap_limit)?;
    if loaded.topology.node_count() != ckpt.nodes {
        return Err(Error::Config(format!(
            "checkpoint expects {} intersections, data has {}",
            ckpt.nodes,
            loaded.topology.node_count()
        )));
    }
    let clean = prepare_with_manifest(loaded.raw, &manifest)?;
    let ds = dataset(&clean, &loaded.topology, lookback, ckpt.horizon, &ckpt.spectral, ckpt.speed_floor_mph)?;
    if ds.series().feature_count() != ckpt.params.config().features {
        return Err(Error::Config("pipeline manifest and checkpoint disagree on feature count".into()));
    }
    let mut inputs = vec![a.ckpt.clone(), pipeline_path];
    inputs.extend(loaded.inputs);
    Ok(Restored {
        ckpt,
        manifest,
        ds,
        days: loaded.days,
        inputs,
        out_dir: a.out_dir.clone().unwrap_or(dir),
    })
}

fn evaluate_restored(r: &Restored) -> Result<(crate::metrics::EvaluationReport, crate::metrics::TestPredictions, Vec<usize>)> {
    let train_days = r.manifest.train_end_minute / MINUTES_PER_DAY;
    let split = split_train_test(&r.ds, train_days, r.days)?;
    let ha = HistoricalAverage::fit(r.ds.series(), r.manifest.train_end_minute)?;
    let (report, preds) = evaluate(&r.ds, &split.test, &r.ckpt.params, &ha)?;
    Ok((report, preds, split.test))
}

fn cmd_evaluate(ctx: &Context, a: &CkptArgs) -> Result<()> {
    let cfg = base_config(ctx)?.finish()?;
    let r = restore(a, cfg.pipeline.gap_limit)?;
    ctx.write_manifest("evaluate", &r.out_dir, &cfg, &r.inputs)?;
    let (report, _, _) = evaluate_restored(&r)?;
    write(&r.out_dir.join("report.txt"), &report.to_table())?;
    write(&r.out_dir.join("report.jsonl"), &report.to_jsonl())?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_predict(ctx: &Context, a: &PredictArgs) -> Result<()> {
    let cfg = base_config(ctx)?.finish()?;
    let r = restore(&a.ckpt, cfg.pipeline.gap_limit)?;
    ctx.write_manifest("predict", &r.out_dir, &cfg, &r.inputs)?;
    let series = r.ds.series();
    let lookback = r.ds.lookback();
    let last = series.first_minute() + series.len() - 1;
    let minute = a.minute.unwrap_or(last);
    let end = series
        .index_of(minute)
        .filter(|&e| e + 1 >= lookback)
        .ok_or_else(|| Error::InvalidInput(format!("minute {minute} has no full {lookback}-minute history in the data")))?;
    let start = end + 1 - lookback;
    let (pred, _) = forward(
        &series.laplacians[start..=end],
        &series.snapshots[start..=end],
        &r.ckpt.params,
        Mode::Eval,
    )?;
    let raw = series.scaling.denormalize(pred.view());
    let target = minute + r.ckpt.horizon;
    let header: Vec<String> = (0..MOVEMENTS).map(|j| format!("count_{}", movement_name(j))).collect();
    let mut csv = format!("intersection_id,target_minute,{}\n", header.join(","));
    for (v, id) in series.node_ids.iter().enumerate() {
        let vals: Vec<String> = raw.row(v).iter().map(|x| format!("{x:.4}")).collect();
        csv.push_str(&format!("{id},{target},{}\n", vals.join(",")));
    }
    write(&r.out_dir.join("predictions.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_export(ctx: &Context, a: &ExportArgs) -> Result<()> {
    let cfg = base_config(ctx)?.finish()?;
    let name = a.movement.clone().unwrap_or_else(|| "EB_T".into());
    let movement = (0..MOVEMENTS)
        .find(|&j| movement_name(j) == name)
        .ok_or_else(|| Error::Config(format!("unknown movement {name:?}; expected e.g. EB_T or NB_L")))?;
    let r = restore(&a.ckpt, cfg.pipeline.gap_limit)?;
    ctx.write_manifest("export-plot-data", &r.out_dir, &cfg, &r.inputs)?;
    let (_, preds, _) = evaluate_restored(&r)?;
    for (v, id) in r.ds.series().node_ids.iter().enumerate() {
        let truth: Vec<f64> = preds.truth.iter().map(|t| t[[v, movement]]).collect();
        let pred: Vec<f64> = preds.model.iter().map(|p| p[[v, movement]]).collect();
        let path = r.out_dir.join(format!("series_{id}_{name}.csv"));
        export_series(&preds.minutes, &truth, &pred, &path)?;
    }
    println!(
        "wrote {} series of {} minutes to {}",
        r.ds.series().node_count(),
        preds.minutes.len(),
        r.out_dir.display()
    );
    Ok(())
}

fn sweep_common(
    ctx: &Context,
    command: &str,
    data: &DataArgs,
    pipeline: &PipelineArgs,
    hyper: &HyperArgs,
    out_dir: &Path,
    tweak: impl FnOnce(&mut RunConfig),
) -> Result<(RunConfig, Arc<crate::dataset::SnapshotSeries>, Experiment)> {
    let mut cfg = base_config(ctx)?;
    cfg.apply_pipeline(pipeline);
    cfg.apply_hyper(hyper)?;
    tweak(&mut cfg);
    let cfg = cfg.finish()?;
    let loaded = load_data(data, cfg.pipeline.gap_limit)?;
    ctx.write_manifest(command, out_dir, &cfg, &loaded.inputs)?;
    let prepared = prepare(loaded.raw, &cfg.pipeline)?;
    let series = Arc::new(assemble_series(
        &prepared.series,
        &loaded.topology,
        &cfg.spectral,
        cfg.speed_floor_mph,
    )?);
    let exp = Experiment {
        model: cfg.model_config(series.feature_count(), cfg.lookback),
        train: cfg.train.clone(),
        train_days: cfg.pipeline.train_days,
        total_days: loaded.days,
    };
    Ok((cfg, series, exp))
}

fn write_sweep(out_dir: &Path, stem: &str, report: &crate::metrics::SweepReport) -> Result<()> {
    let text = format!(
        "{}\n{}",
        report.to_table(UnitSpace::Raw),
        report.to_table(UnitSpace::Normalized)
    );
    write(&out_dir.join(format!("{stem}.txt")), &text)?;
    write(&out_dir.join(format!("{stem}.jsonl")), &report.to_jsonl())?;
    print!("{text}");
    Ok(())
}

fn cmd_sweep_lookback(ctx: &Context, a: &SweepLookbackArgs) -> Result<()> {
    let (cfg, series, exp) = sweep_common(ctx, "sweep-lookback", &a.data, &a.pipeline, &a.hyper, &a.out_dir, |c| {
        if let Some(n) = a.horizon {
            c.horizon = n;
        }
        if let Some(l) = &a.lookbacks {
            c.lookbacks = l.clone();
        }
    })?;
    let base = WindowDataset::new(series, cfg.lookbacks[0], cfg.horizon)?;
    let report = sweep_lookback(&base, &cfg.lookbacks, cfg.horizon, &exp)?;
    write_sweep(&a.out_dir, "sweep_lookback", &report)
}

fn cmd_sweep_horizon(ctx: &Context, a: &SweepHorizonArgs) -> Result<()> {
    let (cfg, series, exp) = sweep_common(ctx, "sweep-horizon", &a.data, &a.pipeline, &a.hyper, &a.out_dir, |c| {
        if let Some(m) = a.lookback {
            c.lookback = m;
        }
        if let Some(h) = &a.horizons {
            c.horizons = h.clone();
        }
    })?;
    let base = WindowDataset::new(series, cfg.lookback, cfg.horizons[0])?;
    let report = sweep_horizon(&base, cfg.lookback, &cfg.horizons, &exp)?;
    write_sweep(&a.out_dir, "sweep_horizon", &report)
}

fn cmd_replay(a: &ReplayArgs) -> Result<i32> {
    let manifest = RunManifest::load(&a.manifest)?;
    for input in &manifest.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(Error::InvalidInput(format!(
                "{} changed since the recorded run (sha256 {} != {})",
                input.path.display(),
                now,
                input.sha256
            )));
        }
    }
    let mut args: Vec<String> = Vec::with_capacity(manifest.args.len() + 3);
    let mut skip = false;
    for arg in &manifest.args {
        if skip {
            skip = false;
            continue;
        }
        if a.out_dir.is_some() && arg == "--out-dir" {
            skip = true;
            continue;
        }
        if a.out_dir.is_some() && arg.starts_with("--out-dir=") {
            continue;
        }
        args.push(arg.clone());
    }
    if let Some(dir) = &a.out_dir {
        args.push("--out-dir".into());
        args.push(dir.display().to_string());
    }
    if !args.iter().any(|x| x == "--serial") {
        args.push("--serial".into());
    }
    let mut argv: Vec<OsString> = vec!["mgcnn".into()];
    argv.extend(args.into_iter().map(OsString::from));
    Ok(run(argv))
}

fn dispatch(ctx: &Context, command: &Command) -> Result<i32> {
    match command {
        Command::Synth(a) => cmd_synth(ctx, a),
        Command::Preprocess(a) => cmd_preprocess(ctx, a),
        Command::Train(a) => cmd_train(ctx, a),
        Command::Evaluate(a) => cmd_evaluate(ctx, a),
        Command::Predict(a) => cmd_predict(ctx, a),
        Command::SweepLookback(a) => cmd_sweep_lookback(ctx, a),
        Command::SweepHorizon(a) => cmd_sweep_horizon(ctx, a),
        Command::ExportPlotData(a) => cmd_export(ctx, a),
        Command::Replay(a) => return cmd_replay(a),
    }
    .map(|_| EXIT_OK)
}

/// Maps an error to its exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invariant(_) => EXIT_INTERNAL,
        _ => EXIT_INVALID,
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    let threads = if cli.serial { 1 } else { cli.threads.unwrap_or(0) };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return EXIT_INVALID;
        }
    };
    let ctx = Context {
        args: argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        config_path: cli.config.clone(),
        threads: pool.current_num_threads(),
        serial: cli.serial,
    };
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| pool.install(|| dispatch(&ctx, &cli.command))));
    match outcome {
        Ok(Ok(code)) => code,
        Ok(Err(e)) => {
            let code = exit_code(&e);
            if code == EXIT_INTERNAL {
                eprintln!("internal error: {e}\nthis is a bug; please report it with the command's manifest");
            } else {
                eprintln!("error: {e}");
            }
            code
        }
        Err(_) => {
            eprintln!("internal error: a worker panicked; please report it with the command's manifest");
            EXIT_INTERNAL
        }
    }
}
