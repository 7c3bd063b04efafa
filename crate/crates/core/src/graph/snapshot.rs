use ndarray::Array2;

use super::CorridorTopology;
use crate::error::{Error, Result};

pub const DEFAULT_SPEED_FLOOR_MPH: f64 = 1.0;

/// Travel time in seconds over a link, with speed floored so stopped
/// traffic still yields a finite weight.
pub fn edge_weight(length_miles: f64, speed_mph: f64, speed_floor_mph: f64) -> f64 {
    3600.0 * length_miles / speed_mph.max(speed_floor_mph)
}

/// One minute of the corridor: travel-time weights and node features.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub timestep: usize,
    /// `n x n` travel times in seconds; zero where there is no edge.
    pub weights: Array2<f64>,
    /// `n x F` preprocessed node features.
    pub node_features: Array2<f64>,
}

impl GraphSnapshot {
    pub fn node_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn feature_count(&self) -> usize {
        self.node_features.ncols()
    }
}

/// Builds the snapshot for minute `timestep`.
///
/// `speeds[k]` is the speed in mph on `topology.edges()[k]`; directions may
/// differ, so the resulting weight matrix is generally asymmetric.
pub fn build_snapshot(
    topology: &CorridorTopology,
    timestep: usize,
    speeds: &[f64],
    features: Array2<f64>,
    speed_floor_mph: f64,
) -> Result<GraphSnapshot> {
    let n = topology.node_count();
    let edges = topology.edges();
    if speeds.len() != edges.len() {
        return Err(Error::InvalidInput(format!(
            "minute {timestep}: {} speeds for {} edges",
            speeds.len(),
            edges.len()
        )));
    }
    if features.nrows() != n {
        return Err(Error::shape("build_snapshot features", format!("{n} rows"), features.nrows()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "minute {timestep}: non-finite node feature"
        )));
    }
    if !(speed_floor_mph.is_finite() && speed_floor_mph > 0.0) {
        return Err(Error::Config(format!("speed floor must be positive, got {speed_floor_mph}")));
    }

    let mut weights = Array2::zeros((n, n));
    for (edge, &speed) in edges.iter().zip(speeds) {
        if speed.is_nan() {
            let ids = topology.node_ids();
            return Err(Error::InvalidInput(format!(
                "minute {timestep}: missing speed for edge {} -> {}",
                ids[edge.from], ids[edge.to]
            )));
        }
        weights[[edge.from, edge.to]] = edge_weight(edge.length_miles, speed, speed_floor_mph);
    }

    Ok(GraphSnapshot {
        timestep,
        weights,
        node_features: features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn pair() -> CorridorTopology {
        CorridorTopology::chain(vec!["a".into(), "b".into()], &[0.12]).unwrap()
    }

    #[test]
    fn edge_weight_cases() {
        assert!((edge_weight(0.12, 36.0, 1.0) - 12.0).abs() < 1e-12);
        assert!((edge_weight(0.12, 0.0, 1.0) - 432.0).abs() < 1e-12);
        assert!((edge_weight(0.25, 30.0, 1.0) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_directional_snapshots() {
        let topo = pair();
        let f = Array2::zeros((2, 3));
        let s = build_snapshot(&topo, 0, &[36.0, 36.0], f.clone(), 1.0).unwrap();
        assert!((&s.weights - &array![[0.0, 12.0], [12.0, 0.0]]).iter().all(|d| d.abs() < 1e-12));

        // edges()[0] is a -> b (eastbound), edges()[1] is b -> a
        let s = build_snapshot(&topo, 0, &[36.0, 18.0], f, 1.0).unwrap();
        assert!((&s.weights - &array![[0.0, 12.0], [24.0, 0.0]]).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn uniform_speed_on_ten_node_corridor() {
        let ids: Vec<String> = (0..10).map(|i| format!("n{i}")).collect();
        let lens: Vec<f64> = (0..9).map(|i| 0.1 + 0.037 * i as f64).collect();
        let topo = CorridorTopology::chain(ids, &lens).unwrap();
        let speeds = vec![30.0; topo.edges().len()];
        let s = build_snapshot(&topo, 5, &speeds, Array2::zeros((10, 4)), 1.0).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let w = s.weights[[i, j]];
                match topo.link_length(i, j) {
                    Some(len) => assert!((w - 120.0 * len).abs() < 1e-12),
                    None => assert_eq!(w, 0.0),
                }
            }
        }
    }

    #[test]
    fn rejects_missing_speed_and_bad_features() {
        let topo = pair();
        assert!(build_snapshot(&topo, 0, &[36.0], Array2::zeros((2, 1)), 1.0).is_err());
        assert!(build_snapshot(&topo, 0, &[36.0, f64::NAN], Array2::zeros((2, 1)), 1.0).is_err());
        assert!(build_snapshot(&topo, 0, &[36.0, 36.0], Array2::zeros((3, 1)), 1.0).is_err());
        let mut bad = Array2::zeros((2, 1));
        bad[[1, 0]] = f64::INFINITY;
        assert!(build_snapshot(&topo, 0, &[36.0, 36.0], bad, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn edge_weight_monotone_and_linear(
            len in 0.01f64..2.0,
            s1 in 0.0f64..80.0,
            ds in 0.0f64..20.0,
            scale in 0.1f64..10.0,
        ) {
            let w1 = edge_weight(len, s1, 1.0);
            let w2 = edge_weight(len, s1 + ds, 1.0);
            prop_assert!(w1.is_finite() && w1 > 0.0);
            prop_assert!(w2 <= w1);
            let scaled = edge_weight(len * scale, s1, 1.0);
            prop_assert!((scaled - scale * w1).abs() <= 1e-9 * scaled.abs());
        }

        #[test]
        fn sparsity_matches_edge_set(speeds in proptest::collection::vec(0.0f64..70.0, 8)) {
            let ids: Vec<String> = (0..5).map(|i| i.to_string()).collect();
            let topo = CorridorTopology::chain(ids, &[0.1, 0.2, 0.3, 0.4]).unwrap();
            let s = build_snapshot(&topo, 0, &speeds, Array2::zeros((5, 2)), 1.0).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    let present = topo.edge_index(i, j).is_some();
                    prop_assert_eq!(s.weights[[i, j]] > 0.0, present);
                    prop_assert!(s.weights[[i, j]].is_finite());
                }
            }
        }
    }
}
