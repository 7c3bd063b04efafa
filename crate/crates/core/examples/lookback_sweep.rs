//! Short lookback and horizon sweeps on a small corridor.
//!
//! cargo run --release --example lookback_sweep -- [epochs]

use std::sync::Arc;

use mgcnn::dataset::WindowDataset;
use mgcnn::graph::DEFAULT_SPEED_FLOOR_MPH;
use mgcnn::metrics::{sweep_horizon, sweep_lookback, Experiment, UnitSpace, HORIZONS, LOOKBACKS};
use mgcnn::model::ModelConfig;
use mgcnn::pipeline::{assemble_series, prepare, PipelineConfig};
use mgcnn::spectral::SpectralConfig;
use mgcnn::synth::{generate, SynthConfig};
use mgcnn::train::TrainConfig;

fn main() -> mgcnn::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let days = 4;
    let data = generate(&SynthConfig { nodes: 4, days, ..SynthConfig::default() })?;
    let prepared = prepare(data.series, &PipelineConfig { train_days: days - 1, ..PipelineConfig::default() })?;
    let series = assemble_series(&prepared.series, &data.topology, &SpectralConfig::default(), DEFAULT_SPEED_FLOOR_MPH)?;
    let base = WindowDataset::new(Arc::new(series), 10, 5)?;
    let exp = Experiment {
        model: ModelConfig::new(base.series().feature_count(), 10),
        train: TrainConfig { epochs, ..TrainConfig::default() },
        train_days: days - 1,
        total_days: days,
    };
    println!("{}", sweep_lookback(&base, &LOOKBACKS, 5, &exp)?.to_table(UnitSpace::Raw));
    println!("{}", sweep_horizon(&base, 10, &HORIZONS, &exp)?.to_table(UnitSpace::Raw));
    Ok(())
}
