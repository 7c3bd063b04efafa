//! The MGCNN forward network and its analytic gradients.
//!
//! Per timestep `τ` of the lookback window:
//!
//! ```text
//! X_τ --cheb_conv(θ1)--> ReLU --cheb_conv(θ2)--> ReLU --+
//!                                                        | stack over τ
//!      temporal_fuse --> dropout --> dense --> n x 12 <--+
//! ```
//!
//! Both graph convolutions use the scaled Laplacian of their own snapshot;
//! `θ` is shared across timesteps. Internally the `m` timesteps are stacked
//! row-wise (`m·n` rows) so each layer is a single matrix product.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphSnapshot;
use crate::spectral::{chebyshev_adjoint, chebyshev_into, ScaledLaplacian};
use crate::MOVEMENTS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Node feature count `F` after preprocessing.
    pub features: usize,
    /// Snapshots per window `m`.
    pub lookback: usize,
    /// Chebyshev order `K` of both graph convolutions.
    pub cheb_k: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Dense output width `s`.
    pub outputs: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn new(features: usize, lookback: usize) -> Self {
        Self {
            features,
            lookback,
            cheb_k: 3,
            hidden1: 32,
            hidden2: 32,
            outputs: MOVEMENTS,
            dropout_rate: 0.35,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("features", self.features),
            ("lookback", self.lookback),
            ("cheb_k", self.cheb_k),
            ("hidden1", self.hidden1),
            ("hidden2", self.hidden2),
            ("outputs", self.outputs),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Chebyshev filter coefficients, `K x c_in x c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub theta: Array3<f64>,
}

impl LayerParams {
    pub fn order(&self) -> usize {
        self.theta.dim().0
    }

    pub fn inputs(&self) -> usize {
        self.theta.dim().1
    }

    pub fn outputs(&self) -> usize {
        self.theta.dim().2
    }

    /// `θ` as a `(K·c_in) x c_out` matrix matching the stacked basis layout.
    fn flat(&self) -> ArrayView2<'_, f64> {
        let (k, ci, co) = self.theta.dim();
        self.theta
            .view()
            .into_shape_with_order((k * ci, co))
            .expect("theta is contiguous")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layer1: LayerParams,
    pub layer2: LayerParams,
    /// `c2 x m`: one fusion kernel over the lookback axis per channel.
    pub temporal: Array2<f64>,
    /// `c2 x s`.
    pub dense_w: Array2<f64>,
    pub dense_b: Array1<f64>,
    pub dropout_rate: f64,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> impl FnMut() -> f64 + '_ {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    move || rng.random_range(-limit..limit)
}

impl ModelParams {
    /// Glorot-uniform filters and dense weights, uniform `1/m` fusion
    /// kernels, zero bias.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ModelConfig {
            features: f,
            lookback: m,
            cheb_k: k,
            hidden1: c1,
            hidden2: c2,
            outputs: s,
            dropout_rate,
        } = *config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta1 = {
            let mut g = glorot(&mut rng, k * f, c1);
            Array3::from_shape_simple_fn((k, f, c1), &mut g)
        };
        let theta2 = {
            let mut g = glorot(&mut rng, k * c1, c2);
            Array3::from_shape_simple_fn((k, c1, c2), &mut g)
        };
        let dense_w = {
            let mut g = glorot(&mut rng, c2, s);
            Array2::from_shape_simple_fn((c2, s), &mut g)
        };
        Ok(Self {
            layer1: LayerParams { theta: theta1 },
            layer2: LayerParams { theta: theta2 },
            temporal: Array2::from_elem((c2, m), 1.0 / m as f64),
            dense_w,
            dense_b: Array1::zeros(s),
            dropout_rate,
        })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            features: self.layer1.inputs(),
            lookback: self.temporal.ncols(),
            cheb_k: self.layer1.order(),
            hidden1: self.layer1.outputs(),
            hidden2: self.layer2.outputs(),
            outputs: self.dense_b.len(),
            dropout_rate: self.dropout_rate,
        }
    }

    /// Checks the tensors are mutually consistent and finite.
    pub fn validate(&self) -> Result<()> {
        let cfg = self.config();
        cfg.validate()?;
        if self.layer2.order() != cfg.cheb_k || self.layer2.inputs() != cfg.hidden1 {
            return Err(Error::shape(
                "layer2 theta",
                format!("{}x{}x_", cfg.cheb_k, cfg.hidden1),
                format!("{:?}", self.layer2.theta.dim()),
            ));
        }
        if self.temporal.nrows() != cfg.hidden2 {
            return Err(Error::shape("temporal weights rows", cfg.hidden2, self.temporal.nrows()));
        }
        if self.dense_w.dim() != (cfg.hidden2, cfg.outputs) {
            return Err(Error::shape(
                "dense weights",
                format!("{}x{}", cfg.hidden2, cfg.outputs),
                format!("{:?}", self.dense_w.dim()),
            ));
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("non-finite model parameter".into()));
        }
        Ok(())
    }

    /// Parameter tensors in a fixed order: θ1, θ2, temporal, dense W, dense b.
    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            self.layer1.theta.as_slice().expect("standard layout"),
            self.layer2.theta.as_slice().expect("standard layout"),
            self.temporal.as_slice().expect("standard layout"),
            self.dense_w.as_slice().expect("standard layout"),
            self.dense_b.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.layer1.theta.as_slice_mut().expect("standard layout"),
            self.layer2.theta.as_slice_mut().expect("standard layout"),
            self.temporal.as_slice_mut().expect("standard layout"),
            self.dense_w.as_slice_mut().expect("standard layout"),
            self.dense_b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the bit patterns.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Gradient of the loss with respect to every [`ModelParams`] tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layer1: Array3<f64>,
    pub layer2: Array3<f64>,
    pub temporal: Array2<f64>,
    pub dense_w: Array2<f64>,
    pub dense_b: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            layer1: Array3::zeros(p.layer1.theta.raw_dim()),
            layer2: Array3::zeros(p.layer2.theta.raw_dim()),
            temporal: Array2::zeros(p.temporal.raw_dim()),
            dense_w: Array2::zeros(p.dense_w.raw_dim()),
            dense_b: Array1::zeros(p.dense_b.raw_dim()),
        }
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            self.layer1.as_slice().expect("standard layout"),
            self.layer2.as_slice().expect("standard layout"),
            self.temporal.as_slice().expect("standard layout"),
            self.dense_w.as_slice().expect("standard layout"),
            self.dense_b.as_slice().expect("standard layout"),
        ]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.layer1 += &other.layer1;
        self.layer2 += &other.layer2;
        self.temporal += &other.temporal;
        self.dense_w += &other.dense_w;
        self.dense_b += &other.dense_b;
    }

    pub fn scale(&mut self, factor: f64) {
        self.layer1 *= factor;
        self.layer2 *= factor;
        self.temporal *= factor;
        self.dense_w *= factor;
        self.dense_b *= factor;
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active; the mask is drawn from `seed`.
    Train { seed: u64 },
}

/// Cached activations of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `m·n x K·F` Chebyshev basis of the inputs.
    basis1: Array2<f64>,
    /// `m·n x c1` pre-activation of layer 1.
    pre1: Array2<f64>,
    /// `m·n x K·c1` Chebyshev basis of the layer-1 activations.
    basis2: Array2<f64>,
    /// `m·n x c2` pre-activation of layer 2.
    pre2: Array2<f64>,
    /// `n x c2` after dropout.
    dropped: Array2<f64>,
    /// Inverted-dropout multipliers (`0` or `1/(1-p)`), `n x c2`.
    pub mask: Array2<f64>,
    pub predictions: Array2<f64>,
    fingerprint: u64,
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn check_sequence(
    laplacians: &[ScaledLaplacian],
    snapshots: &[GraphSnapshot],
    params: &ModelParams,
) -> Result<usize> {
    let m = params.temporal.ncols();
    if snapshots.len() != m || laplacians.len() != m {
        return Err(Error::shape(
            "forward window length",
            m,
            format!("{} snapshots / {} Laplacians", snapshots.len(), laplacians.len()),
        ));
    }
    let n = snapshots[0].node_count();
    let f = params.layer1.inputs();
    for (snap, lt) in snapshots.iter().zip(laplacians) {
        if snap.node_features.dim() != (n, f) {
            return Err(Error::shape(
                "forward node features",
                format!("{n}x{f}"),
                format!("{:?}", snap.node_features.dim()),
            ));
        }
        if lt.size() != n {
            return Err(Error::shape("forward Laplacian", n, lt.size()));
        }
    }
    Ok(n)
}

/// Pre-activation of one Chebyshev graph convolution.
pub fn cheb_conv_linear(lt: &ScaledLaplacian, x: ArrayView2<f64>, params: &LayerParams) -> Result<Array2<f64>> {
    let (k, ci, _) = params.theta.dim();
    if x.ncols() != ci || x.nrows() != lt.size() {
        return Err(Error::shape(
            "cheb_conv input",
            format!("{}x{}", lt.size(), ci),
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    let mut basis = Array2::zeros((x.nrows(), k * ci));
    chebyshev_into(lt.matrix.view(), x, k, basis.view_mut());
    Ok(basis.dot(&params.flat()))
}

/// `ReLU(Σ_k T_k(L̃) X θ_k)`.
pub fn cheb_conv(lt: &ScaledLaplacian, x: ArrayView2<f64>, params: &LayerParams) -> Result<Array2<f64>> {
    cheb_conv_linear(lt, x, params).map(|z| relu(&z))
}

/// Weighted sum over the lookback axis per channel.
///
/// `stack[τ]` is `n x c`; `weights` is `c x m`.
pub fn temporal_fuse(stack: &[Array2<f64>], weights: ArrayView2<f64>) -> Result<Array2<f64>> {
    let first = stack
        .first()
        .ok_or_else(|| Error::InvalidInput("temporal_fuse on an empty stack".into()))?;
    let (n, c) = first.dim();
    if weights.dim() != (c, stack.len()) {
        return Err(Error::shape(
            "temporal weights",
            format!("{}x{}", c, stack.len()),
            format!("{:?}", weights.dim()),
        ));
    }
    let mut out = Array2::zeros((n, c));
    for (tau, slice) in stack.iter().enumerate() {
        if slice.dim() != (n, c) {
            return Err(Error::shape("temporal stack slice", format!("{n}x{c}"), format!("{:?}", slice.dim())));
        }
        Zip::from(&mut out)
            .and(slice)
            .and_broadcast(&weights.column(tau))
            .for_each(|o, &x, &w| *o += w * x);
    }
    Ok(out)
}

/// Inverted-dropout multipliers: each entry is `0` with probability `rate`,
/// else `1 / (1 - rate)`. Drawn row-major from a ChaCha8 stream.
pub fn dropout_mask(shape: (usize, usize), rate: f64, seed: u64) -> Array2<f64> {
    if rate == 0.0 {
        return Array2::ones(shape);
    }
    let keep = 1.0 / (1.0 - rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

pub fn dropout(x: ArrayView2<f64>, rate: f64, seed: u64, training: bool) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    let mask = if training {
        dropout_mask(x.dim(), rate, seed)
    } else {
        Array2::ones(x.dim())
    };
    Ok((&x * &mask, mask))
}

/// Node-wise dense map `X W + b`.
pub fn dense(x: ArrayView2<f64>, w: ArrayView2<f64>, b: &Array1<f64>) -> Result<Array2<f64>> {
    if x.ncols() != w.nrows() || w.ncols() != b.len() {
        return Err(Error::shape(
            "dense",
            format!("x: _x{}, b: {}", w.nrows(), w.ncols()),
            format!("x: _x{}, b: {}", x.ncols(), b.len()),
        ));
    }
    Ok(x.dot(&w) + b)
}

/// Runs the network on one window. In training mode the returned trace
/// holds everything [`gradients`] needs.
pub fn forward(
    laplacians: &[ScaledLaplacian],
    snapshots: &[GraphSnapshot],
    params: &ModelParams,
    mode: Mode,
) -> Result<(Array2<f64>, Option<ForwardTrace>)> {
    let n = check_sequence(laplacians, snapshots, params)?;
    match mode {
        Mode::Eval => {
            let trace = run(laplacians, snapshots, params, Array2::ones((n, params.layer2.outputs())));
            Ok((trace.predictions, None))
        }
        Mode::Train { seed } => {
            let mask = dropout_mask((n, params.layer2.outputs()), params.dropout_rate, seed);
            let trace = run(laplacians, snapshots, params, mask);
            Ok((trace.predictions.clone(), Some(trace)))
        }
    }
}

/// Training-mode forward pass with a caller-supplied dropout mask.
pub fn forward_with_mask(
    laplacians: &[ScaledLaplacian],
    snapshots: &[GraphSnapshot],
    params: &ModelParams,
    mask: &Array2<f64>,
) -> Result<ForwardTrace> {
    let n = check_sequence(laplacians, snapshots, params)?;
    if mask.dim() != (n, params.layer2.outputs()) {
        return Err(Error::shape(
            "dropout mask",
            format!("{}x{}", n, params.layer2.outputs()),
            format!("{:?}", mask.dim()),
        ));
    }
    Ok(run(laplacians, snapshots, params, mask.clone()))
}

fn run(
    laplacians: &[ScaledLaplacian],
    snapshots: &[GraphSnapshot],
    params: &ModelParams,
    mask: Array2<f64>,
) -> ForwardTrace {
    let m = snapshots.len();
    let n = snapshots[0].node_count();
    let k = params.layer1.order();
    let f = params.layer1.inputs();
    let c1 = params.layer1.outputs();
    let c2 = params.layer2.outputs();

    let mut basis1 = Array2::zeros((m * n, k * f));
    for (tau, (snap, lt)) in snapshots.iter().zip(laplacians).enumerate() {
        chebyshev_into(
            lt.matrix.view(),
            snap.node_features.view(),
            k,
            basis1.slice_mut(s![tau * n..(tau + 1) * n, ..]),
        );
    }
    let pre1 = basis1.dot(&params.layer1.flat());
    let h1 = relu(&pre1);

    let k2 = params.layer2.order();
    let mut basis2 = Array2::zeros((m * n, k2 * c1));
    for (tau, lt) in laplacians.iter().enumerate() {
        chebyshev_into(
            lt.matrix.view(),
            h1.slice(s![tau * n..(tau + 1) * n, ..]),
            k2,
            basis2.slice_mut(s![tau * n..(tau + 1) * n, ..]),
        );
    }
    let pre2 = basis2.dot(&params.layer2.flat());

    let mut fused = Array2::zeros((n, c2));
    for tau in 0..m {
        let block = pre2.slice(s![tau * n..(tau + 1) * n, ..]);
        Zip::from(&mut fused)
            .and(&block)
            .and_broadcast(&params.temporal.column(tau))
            .for_each(|o, &z, &w| *o += w * z.max(0.0));
    }
    let dropped = &fused * &mask;
    let predictions = dropped.dot(&params.dense_w) + &params.dense_b;

    ForwardTrace {
        basis1,
        pre1,
        basis2,
        pre2,
        dropped,
        mask,
        predictions,
        fingerprint: params.fingerprint(),
    }
}

/// Exact gradient of `mean((pred - target)²)` over the `n x s` window with
/// respect to every parameter, reusing the trace's dropout mask.
pub fn gradients(
    laplacians: &[ScaledLaplacian],
    snapshots: &[GraphSnapshot],
    params: &ModelParams,
    target: ArrayView2<f64>,
    trace: Option<&ForwardTrace>,
) -> Result<Gradients> {
    let trace = trace.ok_or_else(|| Error::InvalidInput("gradients need a training-mode trace".into()))?;
    let n = check_sequence(laplacians, snapshots, params)?;
    if trace.fingerprint != params.fingerprint() || trace.predictions.nrows() != n {
        return Err(Error::InvalidInput("stale forward trace: parameters changed since the forward pass".into()));
    }
    if target.dim() != trace.predictions.dim() {
        return Err(Error::shape(
            "gradient target",
            format!("{:?}", trace.predictions.dim()),
            format!("{:?}", target.dim()),
        ));
    }

    let m = snapshots.len();
    let k1 = params.layer1.order();
    let k2 = params.layer2.order();
    let c1 = params.layer1.outputs();
    let c2 = params.layer2.outputs();
    let elems = trace.predictions.len() as f64;

    let d_pred = (&trace.predictions - &target) * (2.0 / elems);
    let dense_b = d_pred.sum_axis(Axis(0));
    let dense_w = trace.dropped.t().dot(&d_pred);
    let d_fused = d_pred.dot(&params.dense_w.t()) * &trace.mask;

    let mut temporal = Array2::zeros((c2, m));
    let mut d_pre2 = Array2::zeros((m * n, c2));
    for tau in 0..m {
        let rows = s![tau * n..(tau + 1) * n, ..];
        let pre = trace.pre2.slice(rows);
        let mut dz = d_pre2.slice_mut(rows);
        let w = params.temporal.column(tau);
        for ch in 0..c2 {
            let mut acc = 0.0;
            for v in 0..n {
                let z = pre[[v, ch]];
                let g = d_fused[[v, ch]];
                acc += g * z.max(0.0);
                if z > 0.0 {
                    dz[[v, ch]] = g * w[ch];
                }
            }
            temporal[[ch, tau]] = acc;
        }
    }

    let layer2_flat = trace.basis2.t().dot(&d_pre2);
    let d_basis2 = d_pre2.dot(&params.layer2.flat().t());

    let mut d_pre1 = Array2::zeros((m * n, c1));
    for (tau, lt) in laplacians.iter().enumerate() {
        let rows = s![tau * n..(tau + 1) * n, ..];
        let dh = chebyshev_adjoint(lt.matrix.view(), d_basis2.slice(rows), k2);
        let pre = trace.pre1.slice(rows);
        Zip::from(d_pre1.slice_mut(rows))
            .and(&dh)
            .and(&pre)
            .for_each(|o, &g, &z| *o = if z > 0.0 { g } else { 0.0 });
    }
    let layer1_flat = trace.basis1.t().dot(&d_pre1);

    let f = params.layer1.inputs();
    Ok(Gradients {
        layer1: layer1_flat
            .into_shape_with_order((k1, f, c1))
            .expect("flat gradient is contiguous"),
        layer2: layer2_flat
            .into_shape_with_order((k2, c1, c2))
            .expect("flat gradient is contiguous"),
        temporal,
        dense_w,
        dense_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{prepare_laplacian, SpectralConfig};
    use ndarray::array;

    fn two_node_lt() -> ScaledLaplacian {
        ScaledLaplacian {
            matrix: array![[0.0, -1.0], [-1.0, 0.0]],
            lambda_max: 2.0,
        }
    }

    #[test]
    fn cheb_conv_examples() {
        let lt = two_node_lt();
        let x = array![[1.5], [-2.0]];
        let id = LayerParams {
            theta: Array3::from_elem((1, 1, 1), 1.0),
        };
        assert_eq!(cheb_conv(&lt, x.view(), &id).unwrap(), array![[1.5], [0.0]]);

        let p = LayerParams {
            theta: Array3::from_shape_vec((2, 1, 1), vec![0.0, 1.0]).unwrap(),
        };
        let x = array![[1.0], [0.0]];
        assert_eq!(cheb_conv_linear(&lt, x.view(), &p).unwrap(), array![[0.0], [-1.0]]);
        assert_eq!(cheb_conv(&lt, x.view(), &p).unwrap(), array![[0.0], [0.0]]);

        let bad = array![[1.0, 2.0], [0.0, 1.0]];
        assert!(cheb_conv(&lt, bad.view(), &p).is_err());
    }

    #[test]
    fn temporal_fuse_examples() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let b = array![[5.0, 6.0], [7.0, 8.0]];
        let c = array![[-1.0, 0.0], [9.0, 2.0]];
        let one = temporal_fuse(std::slice::from_ref(&a), Array2::ones((2, 1)).view()).unwrap();
        assert_eq!(one, a);

        let third = Array2::from_elem((2, 3), 1.0 / 3.0);
        let mean = temporal_fuse(&[a.clone(), b.clone(), c.clone()], third.view()).unwrap();
        let expected = (&a + &b + &c) / 3.0;
        assert!(mean.iter().zip(expected.iter()).all(|(x, y)| (x - y).abs() < 1e-12));

        let select = array![[0.0, 1.0], [0.0, 1.0]];
        assert_eq!(temporal_fuse(&[a.clone(), b.clone()], select.view()).unwrap(), b);
        assert!(temporal_fuse(&[a.clone(), b], Array2::ones((2, 3)).view()).is_err());
        assert!(temporal_fuse(&[], Array2::ones((2, 0)).view()).is_err());
    }

    #[test]
    fn dropout_modes() {
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64);
        let (y, mask) = dropout(x.view(), 0.0, 1, true).unwrap();
        assert_eq!(y, x);
        assert!(mask.iter().all(|&v| v == 1.0));
        let (y, _) = dropout(x.view(), 0.35, 1, false).unwrap();
        assert_eq!(y, x);
        assert!(dropout(x.view(), 1.0, 1, true).is_err());
    }

    #[test]
    fn dropout_rate_concentration() {
        let n = 100_000usize;
        let p = 0.35;
        let (_, mask) = dropout(Array2::ones((1, n)).view(), p, 7, true).unwrap();
        let zeros = mask.iter().filter(|&&v| v == 0.0).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((zeros - n as f64 * p).abs() <= 3.0 * sigma, "{zeros}");
        let keep = 1.0 / (1.0 - p);
        assert!(mask.iter().all(|&v| v == 0.0 || v == keep));
    }

    #[test]
    fn dense_examples() {
        let x = array![[1.0, 2.0]];
        let w = Array2::eye(2);
        let b = array![1.0, 1.0];
        assert_eq!(dense(x.view(), w.view(), &b).unwrap(), array![[2.0, 3.0]]);
        let z = Array2::zeros((3, 2));
        let y = dense(z.view(), w.view(), &b).unwrap();
        assert!(y.rows().into_iter().all(|r| r == b));
        let x12 = Array2::from_shape_fn((2, 12), |(i, j)| (i + j) as f64);
        let id = dense(x12.view(), Array2::eye(12).view(), &Array1::zeros(12)).unwrap();
        assert_eq!(id, x12);
        assert!(dense(x.view(), Array2::eye(3).view(), &Array1::zeros(3)).is_err());
    }

    fn toy_inputs(n: usize, f: usize, m: usize, seed: u64) -> (Vec<ScaledLaplacian>, Vec<GraphSnapshot>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut laps = Vec::new();
        let mut snaps = Vec::new();
        for t in 0..m {
            let mut w = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        w[[i, j]] = rng.random_range(5.0..60.0);
                    }
                }
            }
            laps.push(prepare_laplacian(w.view(), Some(t), &SpectralConfig::default()).unwrap());
            snaps.push(GraphSnapshot {
                timestep: t,
                weights: w,
                node_features: Array2::from_shape_simple_fn((n, f), || rng.random_range(-1.0..1.0)),
            });
        }
        (laps, snaps)
    }

    #[test]
    fn zero_features_give_bias_rows() {
        let cfg = ModelConfig {
            features: 3,
            lookback: 4,
            ..ModelConfig::new(3, 4)
        };
        let mut params = ModelParams::init(&cfg, 3).unwrap();
        params.dense_b = Array1::from_shape_fn(12, |j| j as f64 - 4.0);
        let (laps, mut snaps) = toy_inputs(2, 3, 4, 1);
        for s in &mut snaps {
            s.node_features.fill(0.0);
        }
        let (pred, trace) = forward(&laps, &snaps, &params, Mode::Eval).unwrap();
        assert!(trace.is_none());
        for row in pred.rows() {
            assert_eq!(row, params.dense_b);
        }
    }

    #[test]
    fn eval_is_deterministic_and_shaped() {
        let cfg = ModelConfig::new(63, 10);
        let params = ModelParams::init(&cfg, 9).unwrap();
        let (laps, snaps) = toy_inputs(10, 63, 10, 2);
        let (a, _) = forward(&laps, &snaps, &params, Mode::Eval).unwrap();
        let (b, _) = forward(&laps, &snaps, &params, Mode::Eval).unwrap();
        assert_eq!(a.dim(), (10, 12));
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn dense_bias_gradient_closed_form() {
        let cfg = ModelConfig {
            dropout_rate: 0.0,
            ..ModelConfig::new(2, 3)
        };
        let mut params = ModelParams::init(&cfg, 4).unwrap();
        params.layer1.theta.fill(0.0);
        params.layer2.theta.fill(0.0);
        params.temporal.fill(0.0);
        params.dense_w.fill(0.0);
        params.dense_b = Array1::from_shape_fn(12, |j| 0.5 * j as f64 - 1.0);
        let n = 3;
        let (laps, snaps) = toy_inputs(n, 2, 3, 8);
        let target = Array2::zeros((n, 12));
        let (_, trace) = forward(&laps, &snaps, &params, Mode::Train { seed: 1 }).unwrap();
        let g = gradients(&laps, &snaps, &params, target.view(), trace.as_ref()).unwrap();
        for j in 0..12 {
            let expected = 2.0 * params.dense_b[j] / 12.0;
            assert!((g.dense_b[j] - expected).abs() < 1e-14);
        }
        assert!(g.layer1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_need_a_fresh_trace() {
        let cfg = ModelConfig::new(2, 2);
        let mut params = ModelParams::init(&cfg, 4).unwrap();
        let (laps, snaps) = toy_inputs(2, 2, 2, 3);
        let target = Array2::zeros((2, 12));
        assert!(gradients(&laps, &snaps, &params, target.view(), None).is_err());
        let (_, trace) = forward(&laps, &snaps, &params, Mode::Train { seed: 1 }).unwrap();
        params.dense_b[0] += 1.0;
        assert!(gradients(&laps, &snaps, &params, target.view(), trace.as_ref()).is_err());
    }

    #[test]
    fn zero_rate_gradients_ignore_seed() {
        let cfg = ModelConfig {
            dropout_rate: 0.0,
            hidden1: 4,
            hidden2: 3,
            ..ModelConfig::new(3, 2)
        };
        let params = ModelParams::init(&cfg, 21).unwrap();
        let (laps, snaps) = toy_inputs(3, 3, 2, 5);
        let target = Array2::from_elem((3, 12), 0.3);
        let grads = |seed| {
            let (_, t) = forward(&laps, &snaps, &params, Mode::Train { seed }).unwrap();
            gradients(&laps, &snaps, &params, target.view(), t.as_ref()).unwrap()
        };
        assert_eq!(grads(1), grads(99));
    }

    #[test]
    fn rejects_mismatched_windows() {
        let params = ModelParams::init(&ModelConfig::new(3, 4), 1).unwrap();
        let (laps, snaps) = toy_inputs(2, 3, 3, 1);
        assert!(forward(&laps, &snaps, &params, Mode::Eval).is_err());
        let (laps, snaps) = toy_inputs(2, 5, 4, 1);
        assert!(forward(&laps, &snaps, &params, Mode::Eval).is_err());
    }
}
