//! Trains briefly, saves and reloads a checkpoint, then exports the EB_T
//! truth/prediction series of the first intersection for plotting.
//!
//! cargo run --release --example checkpoint_export -- [out-dir]

use std::path::PathBuf;

use mgcnn::checkpoint::Checkpoint;
use mgcnn::graph::DEFAULT_SPEED_FLOOR_MPH;
use mgcnn::metrics::{evaluate, export_series, HistoricalAverage};
use mgcnn::model::ModelConfig;
use mgcnn::pipeline::{assemble, movement_index, prepare, PipelineConfig};
use mgcnn::spectral::SpectralConfig;
use mgcnn::synth::{generate, SynthConfig};
use mgcnn::train::{split_train_test, train, TrainConfig};

fn main() -> mgcnn::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "export-out".into()));
    std::fs::create_dir_all(&out).map_err(|source| mgcnn::Error::Io { path: out.clone(), source })?;
    let days = 3;
    let data = generate(&SynthConfig { nodes: 3, days, ..SynthConfig::default() })?;
    let prepared = prepare(data.series, &PipelineConfig { train_days: days - 1, ..PipelineConfig::default() })?;
    let spectral = SpectralConfig::default();
    let ds = assemble(&prepared.series, &data.topology, 10, 5, &spectral, DEFAULT_SPEED_FLOOR_MPH)?;
    let split = split_train_test(&ds, days - 1, days)?;
    let model = ModelConfig::new(ds.series().feature_count(), 10);
    let (params, _) = train(&ds, &split.train, &model, &TrainConfig { epochs: 2, ..TrainConfig::default() })?;

    let ckpt = Checkpoint { nodes: 3, horizon: 5, spectral, speed_floor_mph: DEFAULT_SPEED_FLOOR_MPH, params };
    let path = out.join("model.ckpt");
    ckpt.save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    assert_eq!(loaded, ckpt);
    println!("checkpoint round trip ok ({} parameters)", loaded.params.parameter_count());

    let ha = HistoricalAverage::fit(ds.series(), (days - 1) * 1440)?;
    let (_, preds) = evaluate(&ds, &split.test, &loaded.params, &ha)?;
    let eb_t = movement_index(2, 1);
    let truth: Vec<f64> = preds.truth.iter().map(|t| t[[0, eb_t]]).collect();
    let pred: Vec<f64> = preds.model.iter().map(|p| p[[0, eb_t]]).collect();
    let file = out.join("series_I01_EB_T.csv");
    export_series(&preds.minutes, &truth, &pred, &file)?;
    println!("wrote {} rows to {}", truth.len(), file.display());
    Ok(())
}
