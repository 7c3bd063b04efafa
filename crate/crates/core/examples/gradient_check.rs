//! Compares the hand-derived gradients with central finite differences on
//! a tiny random model and prints the worst discrepancy per tensor.

use mgcnn::graph::GraphSnapshot;
use mgcnn::model::{dropout_mask, forward_with_mask, gradients, ModelConfig, ModelParams};
use mgcnn::spectral::{prepare_laplacian, SpectralConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mgcnn::Result<()> {
    let (n, f, m) = (3, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut laps = Vec::new();
    let mut snaps = Vec::new();
    for t in 0..m {
        let weights = Array2::from_shape_fn((n, n), |(i, j)| if i != j { rng.random_range(5.0..60.0) } else { 0.0 });
        laps.push(prepare_laplacian(weights.view(), Some(t), &SpectralConfig::default())?);
        let node_features = Array2::from_shape_simple_fn((n, f), || rng.random_range(-1.0..1.0));
        snaps.push(GraphSnapshot { timestep: t, weights, node_features });
    }
    let cfg = ModelConfig { hidden1: 4, hidden2: 4, ..ModelConfig::new(f, m) };
    let params = ModelParams::init(&cfg, 2)?;
    let target = Array2::from_shape_simple_fn((n, 12), || rng.random_range(-1.0..1.0));
    let mask = dropout_mask((n, cfg.hidden2), cfg.dropout_rate, 3);

    let loss = |p: &ModelParams| -> mgcnn::Result<f64> {
        let trace = forward_with_mask(&laps, &snaps, p, &mask)?;
        Ok((&trace.predictions - &target).mapv(|v| v * v).mean().unwrap_or(0.0))
    };
    let trace = forward_with_mask(&laps, &snaps, &params, &mask)?;
    let grads = gradients(&laps, &snaps, &params, target.view(), Some(&trace))?;

    let h = 1e-5;
    let names = ["layer1.theta", "layer2.theta", "temporal", "dense.weight", "dense.bias"];
    for (ti, g) in grads.tensors().iter().enumerate() {
        let (mut worst, mut largest) = (0.0f64, 0.0f64);
        for (i, &a) in g.iter().enumerate() {
            let (mut plus, mut minus) = (params.clone(), params.clone());
            plus.tensors_mut()[ti][i] += h;
            minus.tensors_mut()[ti][i] -= h;
            let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * h);
            worst = worst.max((a - fd).abs());
            largest = largest.max(a.abs());
        }
        println!("{:<13} {:>4} params, largest |grad| {largest:.3e}, worst |analytic - numeric| {worst:.2e}", names[ti], g.len());
    }
    Ok(())
}
