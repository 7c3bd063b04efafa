mod common;

use mgcnn::metrics::{compute_metrics, persistence_baseline, UnitSpace};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..100).prop_flat_map(|n| {
        (prop::collection::vec(-1e4f64..1e4, n), prop::collection::vec(-1e4f64..1e4, n))
    })
}

proptest! {
    #[test]
    fn rmse_squared_is_mse_and_mae_bounded_by_rmse((p, t) in pair()) {
        let m = compute_metrics(&p, &t, UnitSpace::Raw).unwrap();
        prop_assert!((m.rmse * m.rmse - m.mse).abs() <= 1e-12 * m.mse.max(1.0));
        prop_assert!(m.mae <= m.rmse * (1.0 + 1e-12));
        prop_assert_eq!(m.sample_count, p.len());
    }

    #[test]
    fn metrics_ignore_sample_order((p, t) in pair(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let p2: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let t2: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
        let a = compute_metrics(&p, &t, UnitSpace::Raw).unwrap();
        let b = compute_metrics(&p2, &t2, UnitSpace::Raw).unwrap();
        prop_assert!((a.mse - b.mse).abs() <= 1e-9 * a.mse.max(1.0));
        prop_assert!((a.mae - b.mae).abs() <= 1e-9 * a.mae.max(1.0));
        prop_assert_eq!(a.excluded_zero_count, b.excluded_zero_count);
    }
}

#[test]
fn mape_skips_zero_truths() {
    let m = compute_metrics(&[1.0, 5.0, 3.0], &[0.0, 4.0, 2.0], UnitSpace::Raw).unwrap();
    assert_eq!(m.excluded_zero_count, 1);
    assert!((m.mape.unwrap() - 100.0 * (0.25 + 0.5) / 2.0).abs() < 1e-12);
    assert_eq!(compute_metrics(&[1.0], &[0.0], UnitSpace::Raw).unwrap().mape, None);
}

#[test]
fn persistence_is_exact_on_constant_traffic() {
    let ds = common::count_dataset(3, 40, 5, 2, |_, v, j| (v * 12 + j) as f64);
    let cols: Vec<usize> = (0..12).collect();
    for i in 0..ds.len() {
        let w = ds.window(i);
        let pred = persistence_baseline(&w, &cols).unwrap();
        assert_eq!(pred, w.target.to_owned());
    }
}
