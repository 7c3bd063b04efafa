//! Runs the preprocessing pipeline on synthetic data and reports what each
//! stage did.

use mgcnn::pipeline::{drop_occupancy, iqr_fences, prepare, PipelineConfig};
use mgcnn::synth::{generate, SynthConfig};

fn main() -> mgcnn::Result<()> {
    let data = generate(&SynthConfig { nodes: 3, days: 4, outlier_rate: 0.0005, ..SynthConfig::default() })?;
    let first = &data.series[0];
    println!("{}: {} attributes x {} minutes", first.intersection_id, first.attributes.nrows(), first.len());
    println!("after occupancy drop: {} attributes", drop_occupancy(first.clone())?.attributes.nrows());

    if let Some(o) = data.outliers.first() {
        let row = data.series[o.node].attributes.row(o.movement).to_vec();
        let (lo, hi, median) = iqr_fences(&row);
        println!("outlier {} at minute {} vs fences [{lo:.1}, {hi:.1}], median {median}", o.value, o.minute);
    }

    let prepared = prepare(data.series, &PipelineConfig { train_days: 3, ..PipelineConfig::default() })?;
    let m = &prepared.manifest;
    println!("kept {} of 85 attributes", m.kept_attribute_ids.len());
    println!("{}", m.feature_names().join(" "));
    for (id, stats) in &m.stats {
        let flagged = stats.passthrough.iter().filter(|&&p| p).count();
        println!("{id}: fitted before minute {}, {flagged} constant attribute(s)", stats.train_end_minute);
    }
    Ok(())
}
