//! Scores the persistence and historical-average baselines against an
//! untrained model on the last synthetic day.

use mgcnn::graph::DEFAULT_SPEED_FLOOR_MPH;
use mgcnn::metrics::{evaluate, HistoricalAverage};
use mgcnn::model::{ModelConfig, ModelParams};
use mgcnn::pipeline::{assemble, prepare, PipelineConfig};
use mgcnn::spectral::SpectralConfig;
use mgcnn::synth::{generate, SynthConfig};
use mgcnn::train::split_train_test;

fn main() -> mgcnn::Result<()> {
    let days = 8;
    let data = generate(&SynthConfig { nodes: 4, days, ..SynthConfig::default() })?;
    let prepared = prepare(data.series, &PipelineConfig { train_days: days - 1, ..PipelineConfig::default() })?;
    let ds = assemble(&prepared.series, &data.topology, 10, 5, &SpectralConfig::default(), DEFAULT_SPEED_FLOOR_MPH)?;
    let split = split_train_test(&ds, days - 1, days)?;
    let params = ModelParams::init(&ModelConfig::new(ds.series().feature_count(), 10), 1)?;
    let ha = HistoricalAverage::fit(ds.series(), (days - 1) * 1440)?;
    let (report, _) = evaluate(&ds, &split.test, &params, &ha)?;
    println!("{}", report.to_table());
    Ok(())
}
