//! Per-minute corridor snapshots with cached scaled Laplacians, and the
//! lookback windows cut from them.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{stack_window, window_count, GraphSnapshot, MultiGraphWindow};
use crate::spectral::{prepare_laplacian, ScaledLaplacian, SpectralConfig};
use crate::MOVEMENTS;

/// Weekday/weekend label carried by the `class` attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DayClass {
    Weekend = 0,
    Weekday = 1,
}

impl DayClass {
    pub fn from_value(v: f64) -> Self {
        if v >= 0.5 {
            DayClass::Weekday
        } else {
            DayClass::Weekend
        }
    }
}

/// Per-node affine map between raw movement counts and the normalized
/// targets the model is trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct CountScaling {
    /// `n x 12`.
    pub mean: Array2<f64>,
    /// `n x 12`; `1.0` for passthrough attributes.
    pub std: Array2<f64>,
}

impl CountScaling {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: Array2::zeros((n, MOVEMENTS)),
            std: Array2::ones((n, MOVEMENTS)),
        }
    }

    pub fn normalize(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        (&raw - &self.mean) / &self.std
    }

    pub fn denormalize(&self, normalized: ArrayView2<f64>) -> Array2<f64> {
        &normalized * &self.std + &self.mean
    }
}

/// The minute-indexed series everything else is cut from.
#[derive(Debug)]
pub struct SnapshotSeries {
    pub node_ids: Vec<String>,
    pub snapshots: Vec<GraphSnapshot>,
    pub laplacians: Vec<ScaledLaplacian>,
    /// Normalized `n x 12` counts per minute.
    pub targets: Vec<Array2<f64>>,
    /// Cleaned raw `n x 12` counts per minute.
    pub raw_counts: Vec<Array2<f64>>,
    pub day_class: Vec<DayClass>,
    pub scaling: CountScaling,
}

impl SnapshotSeries {
    pub fn new(
        node_ids: Vec<String>,
        snapshots: Vec<GraphSnapshot>,
        raw_counts: Vec<Array2<f64>>,
        day_class: Vec<DayClass>,
        scaling: CountScaling,
        spectral: &SpectralConfig,
    ) -> Result<Self> {
        let t = snapshots.len();
        if raw_counts.len() != t || day_class.len() != t {
            return Err(Error::shape(
                "snapshot series",
                format!("{t} minutes"),
                format!("{} count rows / {} classes", raw_counts.len(), day_class.len()),
            ));
        }
        let n = node_ids.len();
        if let Some(s) = snapshots.iter().find(|s| s.node_count() != n) {
            return Err(Error::shape("snapshot nodes", n, s.node_count()));
        }
        if let Some(c) = raw_counts.iter().find(|c| c.dim() != (n, MOVEMENTS)) {
            return Err(Error::shape("raw counts", format!("{n}x{MOVEMENTS}"), format!("{:?}", c.dim())));
        }
        if scaling.mean.dim() != (n, MOVEMENTS) || scaling.std.dim() != (n, MOVEMENTS) {
            return Err(Error::shape("count scaling", format!("{n}x{MOVEMENTS}"), format!("{:?}", scaling.mean.dim())));
        }
        for pair in snapshots.windows(2) {
            if pair[1].timestep != pair[0].timestep + 1 {
                return Err(Error::InvalidInput(format!(
                    "snapshots not consecutive at minute {}",
                    pair[0].timestep
                )));
            }
        }
        let laplacians = snapshots
            .par_iter()
            .map(|s| prepare_laplacian(s.weights.view(), Some(s.timestep), spectral))
            .collect::<Result<Vec<_>>>()?;
        let targets = raw_counts.iter().map(|c| scaling.normalize(c.view())).collect();
        Ok(Self {
            node_ids,
            snapshots,
            laplacians,
            targets,
            raw_counts,
            day_class,
            scaling,
        })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn first_minute(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.timestep)
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn feature_count(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.feature_count())
    }

    /// Index into the per-minute vectors for an absolute minute.
    pub fn index_of(&self, minute: usize) -> Option<usize> {
        minute
            .checked_sub(self.first_minute())
            .filter(|&i| i < self.len())
    }
}

/// One training/evaluation example, borrowed from a [`WindowDataset`].
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub laplacians: &'a [ScaledLaplacian],
    pub snapshots: &'a [GraphSnapshot],
    /// Normalized `n x 12` counts at `target_minute`.
    pub target: ArrayView2<'a, f64>,
    pub target_minute: usize,
}

/// Stride-1 lookback windows over a shared [`SnapshotSeries`].
#[derive(Debug, Clone)]
pub struct WindowDataset {
    series: Arc<SnapshotSeries>,
    lookback: usize,
    horizon: usize,
}

impl WindowDataset {
    pub fn new(series: Arc<SnapshotSeries>, lookback: usize, horizon: usize) -> Result<Self> {
        if lookback == 0 || horizon == 0 {
            return Err(Error::Config(format!(
                "lookback and horizon must be at least 1 (got {lookback}, {horizon})"
            )));
        }
        if window_count(series.len(), lookback, horizon) == 0 {
            log::warn!(
                "{} minutes cannot hold a lookback of {} plus horizon {}; dataset is empty",
                series.len(),
                lookback,
                horizon
            );
        }
        Ok(Self {
            series,
            lookback,
            horizon,
        })
    }

    /// Same minutes, different windowing.
    pub fn rewindow(&self, lookback: usize, horizon: usize) -> Result<Self> {
        Self::new(Arc::clone(&self.series), lookback, horizon)
    }

    pub fn series(&self) -> &SnapshotSeries {
        &self.series
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        window_count(self.series.len(), self.lookback, self.horizon)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All windows, via [`stack_window`].
    pub fn windows(&self) -> Result<Vec<MultiGraphWindow<'_>>> {
        stack_window(&self.series.snapshots, self.lookback, self.horizon, &self.series.targets)
    }

    fn end_index(&self, i: usize) -> usize {
        assert!(i < self.len(), "window {i} out of range {}", self.len());
        i + self.lookback - 1
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        let end = self.end_index(i);
        let start = end + 1 - self.lookback;
        let target = end + self.horizon;
        Sample {
            laplacians: &self.series.laplacians[start..=end],
            snapshots: &self.series.snapshots[start..=end],
            target: self.series.targets[target].view(),
            target_minute: self.series.snapshots[target].timestep,
        }
    }

    pub fn window(&self, i: usize) -> MultiGraphWindow<'_> {
        let s = self.sample(i);
        MultiGraphWindow {
            snapshots: s.snapshots,
            target: s.target,
            target_minute: s.target_minute,
            horizon: self.horizon,
            lookback: self.lookback,
        }
    }

    pub fn target_minute(&self, i: usize) -> usize {
        self.series.first_minute() + self.end_index(i) + self.horizon
    }

    /// Raw counts at the window's target minute.
    pub fn raw_target(&self, i: usize) -> ArrayView2<'_, f64> {
        self.series.raw_counts[self.end_index(i) + self.horizon].view()
    }

    /// Raw counts at the window's last observed minute.
    pub fn raw_last_observed(&self, i: usize) -> ArrayView2<'_, f64> {
        self.series.raw_counts[self.end_index(i)].view()
    }

    pub fn target_class(&self, i: usize) -> DayClass {
        self.series.day_class[self.end_index(i) + self.horizon]
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::toy_series;
    use super::*;

    #[test]
    fn samples_line_up_with_windows() {
        let series = Arc::new(toy_series(3, 40, |t, v, j| (t * 100 + v * 12 + j) as f64));
        let ds = WindowDataset::new(series, 6, 2).unwrap();
        assert_eq!(ds.len(), 40 - 6 - 2 + 1);
        let windows = ds.windows().unwrap();
        assert_eq!(windows.len(), ds.len());
        for (i, w) in windows.iter().enumerate() {
            let s = ds.sample(i);
            assert_eq!(s.target_minute, w.target_minute);
            assert_eq!(ds.target_minute(i), w.target_minute);
            assert_eq!(s.snapshots.len(), 6);
            assert_eq!(s.laplacians.len(), 6);
            assert_eq!(s.target, w.target);
            assert_eq!(ds.raw_target(i)[[0, 0]], (w.target_minute * 100) as f64);
            assert_eq!(ds.raw_last_observed(i)[[0, 0]], (w.end_minute() * 100) as f64);
        }
    }

    #[test]
    fn scaling_round_trip() {
        let s = CountScaling {
            mean: Array2::from_elem((2, MOVEMENTS), 3.5),
            std: Array2::from_elem((2, MOVEMENTS), 0.7),
        };
        let raw = Array2::from_shape_fn((2, MOVEMENTS), |(i, j)| (i * 13 + j) as f64);
        let back = s.denormalize(s.normalize(raw.view()).view());
        assert!(back.iter().zip(raw.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn too_short_is_empty() {
        let ds = WindowDataset::new(Arc::new(toy_series(2, 10, |_, _, _| 1.0)), 8, 3).unwrap();
        assert!(ds.is_empty());
        assert!(ds.windows().unwrap().is_empty());
    }
}
