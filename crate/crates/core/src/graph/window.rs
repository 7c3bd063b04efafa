use ndarray::{Array2, ArrayView2};

use super::GraphSnapshot;
use crate::error::{Error, Result};

/// A stack of consecutive per-minute snapshots over the lookback window plus
/// the turning-movement target `horizon` minutes after the last one.
#[derive(Debug, Clone, Copy)]
pub struct MultiGraphWindow<'a> {
    pub snapshots: &'a [GraphSnapshot],
    /// `n x 12` movement counts at `target_minute`.
    pub target: ArrayView2<'a, f64>,
    pub target_minute: usize,
    pub horizon: usize,
    pub lookback: usize,
}

impl MultiGraphWindow<'_> {
    /// Minute of the last observed snapshot.
    pub fn end_minute(&self) -> usize {
        self.target_minute - self.horizon
    }

    pub fn last(&self) -> &GraphSnapshot {
        self.snapshots.last().expect("windows are never empty")
    }
}

/// Number of windows a stream of `len` minutes yields.
pub fn window_count(len: usize, lookback: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(lookback + horizon)
}

/// Slides a stride-1 window over the snapshot stream.
///
/// `targets[k]` must be the movement counts at the minute of `snapshots[k]`.
/// A stream shorter than `lookback + horizon` yields no windows and logs a
/// warning.
pub fn stack_window<'a>(
    snapshots: &'a [GraphSnapshot],
    lookback: usize,
    horizon: usize,
    targets: &'a [Array2<f64>],
) -> Result<Vec<MultiGraphWindow<'a>>> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::Config(format!(
            "lookback and horizon must be at least 1 minute (got {lookback}, {horizon})"
        )));
    }
    if targets.len() != snapshots.len() {
        return Err(Error::shape(
            "stack_window targets",
            snapshots.len(),
            targets.len(),
        ));
    }
    for pair in snapshots.windows(2) {
        if pair[1].timestep != pair[0].timestep + 1 {
            return Err(Error::InvalidInput(format!(
                "snapshots not consecutive: minute {} followed by {}",
                pair[0].timestep, pair[1].timestep
            )));
        }
    }
    if targets.iter().any(|t| t.iter().any(|v| v.is_nan())) {
        return Err(Error::InvalidInput("NaN in target stream".into()));
    }

    let count = window_count(snapshots.len(), lookback, horizon);
    if count == 0 {
        log::warn!(
            "stream of {} minutes is shorter than lookback {} + horizon {}; no windows",
            snapshots.len(),
            lookback,
            horizon
        );
        return Ok(Vec::new());
    }

    Ok((0..count)
        .map(|start| {
            let end = start + lookback - 1;
            let target_idx = end + horizon;
            MultiGraphWindow {
                snapshots: &snapshots[start..=end],
                target: targets[target_idx].view(),
                target_minute: snapshots[target_idx].timestep,
                horizon,
                lookback,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(len: usize) -> (Vec<GraphSnapshot>, Vec<Array2<f64>>) {
        let snaps = (0..len)
            .map(|t| GraphSnapshot {
                timestep: 100 + t,
                weights: Array2::zeros((2, 2)),
                node_features: Array2::from_elem((2, 1), t as f64),
            })
            .collect();
        let targets = (0..len).map(|t| Array2::from_elem((2, 12), t as f64)).collect();
        (snaps, targets)
    }

    #[test]
    fn window_counts_at_boundaries() {
        let (s, t) = stream(100);
        let w = stack_window(&s, 10, 5, &t).unwrap();
        assert_eq!(w.len(), 86);
        assert_eq!(w[0].snapshots.len(), 10);
        assert_eq!(w[0].end_minute(), 109);
        assert_eq!(w[0].target_minute, 114);
        assert_eq!(w.last().unwrap().target_minute, 199);

        let (s, t) = stream(15);
        assert_eq!(stack_window(&s, 10, 5, &t).unwrap().len(), 1);
        let (s, t) = stream(14);
        assert!(stack_window(&s, 10, 5, &t).unwrap().is_empty());
    }

    #[test]
    fn target_comes_from_end_plus_horizon() {
        let (s, t) = stream(30);
        for w in stack_window(&s, 4, 3, &t).unwrap() {
            let end_idx = w.end_minute() - 100;
            assert_eq!(w.target[[0, 0]], (end_idx + 3) as f64);
            assert_eq!(w.last().timestep, w.end_minute());
            assert!(w.snapshots.windows(2).all(|p| p[1].timestep == p[0].timestep + 1));
        }
    }

    #[test]
    fn rejects_gaps_and_zero_sizes() {
        let (mut s, t) = stream(20);
        s[7].timestep += 1;
        assert!(stack_window(&s, 3, 1, &t).is_err());
        let (s, t) = stream(20);
        assert!(stack_window(&s, 0, 1, &t).is_err());
        assert!(stack_window(&s, 1, 0, &t).is_err());
        assert!(stack_window(&s, 3, 1, &t[..19]).is_err());
    }

    proptest! {
        #[test]
        fn window_count_formula(m in 1usize..20, n in 1usize..10, extra in 0usize..40) {
            let len = m + n - 1 + extra;
            let (s, t) = stream(len);
            let w = stack_window(&s, m, n, &t).unwrap();
            prop_assert_eq!(w.len(), len + 1 - m - n);
            prop_assert_eq!(w.len(), window_count(len, m, n));
        }
    }
}
