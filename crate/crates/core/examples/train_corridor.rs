//! Generates the default synthetic corridor, preprocesses it, trains the
//! network on the first 19 days and scores it on day 20 against the
//! persistence and historical-average baselines.
//!
//! cargo run --release --example train_corridor -- [epochs] [nodes] [days]

use mgcnn::metrics::{evaluate, HistoricalAverage};
use mgcnn::model::ModelConfig;
use mgcnn::pipeline::{assemble, prepare, PipelineConfig};
use mgcnn::spectral::SpectralConfig;
use mgcnn::synth::{generate, SynthConfig};
use mgcnn::train::{split_train_test, train_with_progress, TrainConfig};
use mgcnn::graph::DEFAULT_SPEED_FLOOR_MPH;

fn main() -> mgcnn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let epochs = args.first().copied().unwrap_or(50);
    let nodes = args.get(1).copied().unwrap_or(10);
    let days = args.get(2).copied().unwrap_or(20);

    let started = std::time::Instant::now();
    let synth = SynthConfig { nodes, days, seed: 7, ..SynthConfig::default() };
    let data = generate(&synth)?;
    let pipeline = PipelineConfig { train_days: days - 1, ..PipelineConfig::default() };
    let prepared = prepare(data.series, &pipeline)?;
    println!("kept {} features: {:?}", prepared.manifest.kept_attribute_ids.len(), prepared.manifest.feature_names());
    let ds = assemble(&prepared.series, &data.topology, 10, 5, &SpectralConfig::default(), DEFAULT_SPEED_FLOOR_MPH)?;
    let split = split_train_test(&ds, days - 1, days)?;
    println!("{} train / {} test windows ({:.1}s)", split.train.len(), split.test.len(), started.elapsed().as_secs_f64());

    let model = ModelConfig::new(ds.series().feature_count(), 10);
    let cfg = TrainConfig { epochs, seed: 7, ..TrainConfig::default() };
    let (params, history) = train_with_progress(&ds, &split.train, &model, &cfg, |e| {
        println!("epoch {:>2} loss {:.5} lr {:.1e} {:.1}s", e.epoch + 1, e.loss, e.lr, e.seconds)
    })?;
    let ha = HistoricalAverage::fit(ds.series(), (days - 1) * 1440)?;
    let (report, _) = evaluate(&ds, &split.test, &params, &ha)?;
    println!("{}", report.to_table());
    println!("epochs run: {}, total {:.1}s", history.epochs.len(), started.elapsed().as_secs_f64());
    Ok(())
}
