mod common;

use mgcnn::pipeline::{correlation_matrix, iqr_fences, iqr_outlier_replace, prune_collinear, NormalizationStats};
use ndarray::{Array2, Axis};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-50.0f64..50.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #[test]
    fn iqr_stays_within_fences_and_leaves_inliers_alone(series in prop::collection::vec(-1e3f64..1e3, 4..80)) {
        let (lo, hi, _) = iqr_fences(&series);
        let out = iqr_outlier_replace(&series);
        prop_assert_eq!(out.len(), series.len());
        for (o, s) in out.iter().zip(&series) {
            prop_assert!(*o >= lo && *o <= hi);
            if *s >= lo && *s <= hi {
                prop_assert_eq!(o.to_bits(), s.to_bits());
            }
        }
    }

    #[test]
    fn constant_series_pass_iqr_unchanged(v in -1e3f64..1e3, len in 4usize..50) {
        let series = vec![v; len];
        prop_assert_eq!(iqr_outlier_replace(&series), series);
    }

    #[test]
    fn pruning_leaves_no_collinear_predictor_pair(
        (x, targets, threshold) in (2usize..10).prop_flat_map(|f| (matrix(f, 30), 0..f, 0.3f64..0.99))
    ) {
        // Duplicate and rescale rows so that collinear pairs actually occur.
        let mut x = x;
        let f = x.nrows();
        let extra = x.row(0).mapv(|v| 2.0 * v + 1.0);
        x.push_row(extra.view()).unwrap();
        let is_target = |i: usize| i < targets && i < f;
        let first = prune_collinear(x.view(), is_target, threshold).unwrap();
        let kept = x.select(Axis(0), &first.kept);
        let r = correlation_matrix(kept.view()).unwrap().r;
        for (a, &ia) in first.kept.iter().enumerate() {
            for (b, &ib) in first.kept.iter().enumerate().skip(a + 1) {
                if !is_target(ia) && !is_target(ib) {
                    prop_assert!(r[[a, b]].abs() < threshold);
                }
            }
        }
        for t in (0..x.nrows()).filter(|&i| is_target(i)) {
            prop_assert!(first.kept.contains(&t));
        }
        let again = prune_collinear(kept.view(), |i| is_target(first.kept[i]), threshold).unwrap();
        prop_assert_eq!(again.kept, (0..kept.nrows()).collect::<Vec<_>>());
    }

    #[test]
    fn normalization_round_trips(x in matrix(4, 40), split in 2usize..39) {
        let stats = NormalizationStats::fit(x.view(), 100, 100..100 + split, 100 + split).unwrap();
        let back = stats.denormalize(stats.normalize(x.view()).unwrap().view()).unwrap();
        for (a, b) in back.iter().zip(x.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn normalization_ignores_test_minutes(x in matrix(3, 40), noise in matrix(3, 40), split in 2usize..39) {
        let stats = NormalizationStats::fit(x.view(), 0, 0..split, split).unwrap();
        let mut perturbed = x.clone();
        for j in split..40 {
            for i in 0..3 {
                perturbed[[i, j]] += 1e4 * noise[[i, j]];
            }
        }
        prop_assert_eq!(stats, NormalizationStats::fit(perturbed.view(), 0, 0..split, split).unwrap());
        prop_assert!(NormalizationStats::fit(x.view(), 0, 0..split + 1, split).is_err());
    }
}
