//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::sync::Arc;

use mgcnn::dataset::{CountScaling, DayClass, SnapshotSeries, WindowDataset};
use mgcnn::graph::{build_snapshot, CorridorTopology, GraphSnapshot};
use mgcnn::model::{forward_with_mask, ModelConfig, ModelParams};
use mgcnn::spectral::{prepare_laplacian, ScaledLaplacian, SpectralConfig};
use mgcnn::MOVEMENTS;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random nonnegative zero-diagonal weights; about `density` of the
/// off-diagonal entries are nonzero and the result may be asymmetric.
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize, density: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && rng.random::<f64>() < density {
            rng.random_range(0.01..100.0)
        } else {
            0.0
        }
    })
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// A random window of `m` snapshots with `f` features on `n` nodes.
pub fn random_window(
    rng: &mut ChaCha8Rng,
    n: usize,
    f: usize,
    m: usize,
) -> (Vec<ScaledLaplacian>, Vec<GraphSnapshot>) {
    let mut laps = Vec::with_capacity(m);
    let mut snaps = Vec::with_capacity(m);
    for t in 0..m {
        let weights = random_weights(rng, n, 0.6);
        let node_features = random_matrix(rng, n, f);
        laps.push(prepare_laplacian(weights.view(), Some(t), &SpectralConfig::default()).unwrap());
        snaps.push(GraphSnapshot {
            timestep: t,
            weights,
            node_features,
        });
    }
    (laps, snaps)
}

/// Training-loss value with a fixed dropout mask.
pub fn masked_loss(
    laps: &[ScaledLaplacian],
    snaps: &[GraphSnapshot],
    params: &ModelParams,
    target: ArrayView2<f64>,
    mask: &Array2<f64>,
) -> f64 {
    let trace = forward_with_mask(laps, snaps, params, mask).unwrap();
    let d = &trace.predictions - &target;
    d.mapv(|v| v * v).mean().unwrap()
}

/// Small random model with the given shape.
pub fn toy_params(rng: &mut ChaCha8Rng, f: usize, m: usize, k: usize, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        cheb_k: k,
        hidden1: rng.random_range(2..=4),
        hidden2: rng.random_range(2..=4),
        outputs: MOVEMENTS,
        dropout_rate: 0.35,
        ..ModelConfig::new(f, m)
    };
    ModelParams::init(&cfg, seed).unwrap()
}

/// Chain corridor whose node features are the twelve movement counts.
pub fn count_series(
    n: usize,
    minutes: usize,
    count: impl Fn(usize, usize, usize) -> f64,
) -> SnapshotSeries {
    let ids: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let topo = CorridorTopology::chain(ids.clone(), &vec![0.25; n - 1]).unwrap();
    let mut snaps = Vec::with_capacity(minutes);
    let mut counts = Vec::with_capacity(minutes);
    for t in 0..minutes {
        let c = Array2::from_shape_fn((n, MOVEMENTS), |(v, j)| count(t, v, j));
        let speeds = vec![25.0; topo.edges().len()];
        snaps.push(build_snapshot(&topo, t, &speeds, c.clone(), 1.0).unwrap());
        counts.push(c);
    }
    SnapshotSeries::new(
        ids,
        snaps,
        counts,
        vec![DayClass::Weekday; minutes],
        CountScaling::identity(n),
        &SpectralConfig::default(),
    )
    .unwrap()
}

pub fn count_dataset(
    n: usize,
    minutes: usize,
    lookback: usize,
    horizon: usize,
    count: impl Fn(usize, usize, usize) -> f64,
) -> WindowDataset {
    WindowDataset::new(Arc::new(count_series(n, minutes, count)), lookback, horizon).unwrap()
}

/// `|a - b| <= rel * max(|a|, |b|)`, or within the absolute floor.
pub fn close(a: f64, b: f64, rel: f64, abs_floor: f64) -> bool {
    let d = (a - b).abs();
    d <= abs_floor || d <= rel * a.abs().max(b.abs())
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub failures: Vec<String>,
}

/// Central differences with step `h` on every parameter of a random toy
/// model (n <= 3, F <= 4, m <= 4, K <= 3).
pub fn gradient_check(seed: u64, h: f64, rel: f64, abs_floor: f64) -> GradCheck {
    use mgcnn::model::{dropout_mask, gradients, Gradients};
    use rand::SeedableRng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3);
    let f = rng.random_range(1..=4);
    let m = rng.random_range(1..=4);
    let k = rng.random_range(1..=3);
    let (laps, snaps) = random_window(&mut rng, n, f, m);
    let params = toy_params(&mut rng, f, m, k, seed ^ 0xa5a5);
    let target = random_matrix(&mut rng, n, MOVEMENTS);
    let mask = dropout_mask((n, params.layer2.outputs()), params.dropout_rate, seed);
    let trace = forward_with_mask(&laps, &snaps, &params, &mask).unwrap();
    let analytic: Gradients = gradients(&laps, &snaps, &params, target.view(), Some(&trace)).unwrap();

    let names = ["layer1.theta", "layer2.theta", "temporal", "dense.weight", "dense.bias"];
    let mut out = GradCheck::default();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
    for (ti, g) in grads.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[ti][i] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][i] -= h;
            let fd = (masked_loss(&laps, &snaps, &plus, target.view(), &mask)
                - masked_loss(&laps, &snaps, &minus, target.view(), &mask))
                / (2.0 * h);
            out.checked += 1;
            if !close(a, fd, rel, abs_floor) {
                out.failures.push(format!(
                    "seed {seed} (n={n} F={f} m={m} K={k}) {}[{i}]: analytic {a:e} vs numeric {fd:e}",
                    names[ti]
                ));
            }
        }
    }
    out
}
