//! Generates a small synthetic corridor, writes it as CSV and prints the
//! diurnal shape of one movement.
//!
//! cargo run --release --example synth_corridor -- [out-dir]

use mgcnn::pipeline::{movement_index, movement_name};
use mgcnn::synth::{generate, ground_truth_profile, SynthConfig};

fn main() -> mgcnn::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth-out".into());
    let cfg = SynthConfig { nodes: 4, days: 3, outlier_rate: 0.001, ..SynthConfig::default() };
    let data = generate(&cfg)?;
    let files = data.write_to(out.as_ref())?;
    println!("wrote {} files to {out}", files.len());
    println!("{} injected outliers", data.outliers.len());

    let eb_t = movement_index(2, 1);
    let class = cfg.day_class(0);
    println!("expected {} counts per minute on day 0 ({class:?}):", movement_name(eb_t));
    for hour in (0..24).step_by(2) {
        let v = ground_truth_profile(&cfg, hour * 60, eb_t, class);
        println!("{hour:02}:00 {v:6.2} {}", "#".repeat((v * 2.0).round() as usize));
    }
    Ok(())
}
