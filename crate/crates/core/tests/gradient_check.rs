mod common;

use common::gradient_check;

#[test]
fn gradients_match_central_differences() {
    for seed in 1000..1040 {
        let r = gradient_check(seed, 1e-5, 1e-4, 1e-7);
        assert!(r.checked > 0);
        assert!(r.failures.is_empty(), "{:#?}", r.failures);
    }
}

#[test]
fn batch_gradient_is_mean_of_window_gradients() {
    use mgcnn::model::{forward, gradients, Gradients, Mode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = common::toy_params(&mut rng, 3, 2, 2, 9);
    let windows: Vec<_> = (0..3).map(|_| common::random_window(&mut rng, 3, 3, 2)).collect();
    let target = common::random_matrix(&mut rng, 3, 12);
    let mut total = Gradients::zeros_like(&params);
    let mut grads = Vec::new();
    for (laps, snaps) in &windows {
        let (_, trace) = forward(laps, snaps, &params, Mode::Train { seed: 1 }).unwrap();
        let g = gradients(laps, snaps, &params, target.view(), trace.as_ref()).unwrap();
        total.add_assign(&g);
        grads.push(g);
    }
    total.scale(1.0 / 3.0);
    for (ti, t) in total.tensors().iter().enumerate() {
        for (i, v) in t.iter().enumerate() {
            let mean = grads.iter().map(|g| g.tensors()[ti][i]).sum::<f64>() / 3.0;
            assert!((v - mean).abs() < 1e-15);
        }
    }
}
