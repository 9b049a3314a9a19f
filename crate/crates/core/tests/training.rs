//! Trainer and sensitivity sampler against closed-form and Monte Carlo oracles.

use privaudit_core::accounting::sensitivity_bound;
use privaudit_core::data::{DataSource, SourceParams};
use privaudit_core::nn::{self, Activation, LabeledExample, ModelSpec, ParamVector};
use privaudit_core::rng::Stream;
use privaudit_core::sensitivity::{sample_key, sample_sensitivity};
use privaudit_core::trainer::{clip_gradient, smoothed_gradient, Schedule, TrainConfig, Trainer};
use proptest::prelude::*;

fn blobs(dims: usize, seed: u64) -> DataSource {
    DataSource::new(
        SourceParams::GaussianBlobs {
            classes: 3,
            dims,
            separation: 1.0,
            std: 1.0,
        },
        seed,
    )
    .unwrap()
}

/// Softmax-regression gradient of one example, written out directly.
fn softmax_regression_grad(theta: &[f64], dim: usize, classes: usize, ex: &LabeledExample) -> Vec<f64> {
    let x = match &ex.features {
        nn::Input::Vector(v) => v.clone(),
        _ => unreachable!(),
    };
    let logits: Vec<f64> = (0..classes)
        .map(|r| {
            let w = &theta[r * dim..(r + 1) * dim];
            w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + theta[classes * dim + r]
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let mut g = vec![0.0; theta.len()];
    for r in 0..classes {
        let d = (logits[r] - max).exp() / z - if r == ex.label { 1.0 } else { 0.0 };
        for c in 0..dim {
            g[r * dim + c] = d * x[c];
        }
        g[classes * dim + r] = d;
    }
    g
}

fn clip(g: &[f64], c: f64) -> Vec<f64> {
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s = if n > c { c / n } else { 1.0 };
    g.iter().map(|v| v * s).collect()
}

#[test]
fn one_step_full_batch_sensitivity_matches_closed_form() {
    let (dim, classes, big_n) = (4, 3, 10);
    let spec = ModelSpec::feedforward(vec![dim, classes], Activation::Tanh);
    let (eta, c) = (0.7, 0.9);
    let cfg = TrainConfig::plain(eta, 1, big_n, 5)
        .with_dp_sgd(c, 0.0)
        .with_init_scale(0.3);
    let source = blobs(dim, 3);
    let report = sample_sensitivity(&spec, &cfg, &source, big_n, 8).unwrap();
    let theta0 = Trainer::new(&spec, &cfg).unwrap().initial_params();
    for (i, d) in report.distances.iter().enumerate() {
        let (d1, d2) = source.draw_adjacent_pair(big_n, sample_key(i)).unwrap();
        let g1 = clip(&softmax_regression_grad(theta0.as_slice(), dim, classes, &d1[big_n - 1]), c);
        let g2 = clip(&softmax_regression_grad(theta0.as_slice(), dim, classes, &d2[big_n - 1]), c);
        let expected = eta / big_n as f64
            * g1.iter().zip(&g2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!((d - expected).abs() < 1e-10, "sample {i}: {d} vs {expected}");
    }
}

#[test]
fn adjacent_pairs_share_all_but_one_record() {
    let source = blobs(2, 4);
    for i in 0..5 {
        let (a, b) = source.draw_adjacent_pair(12, sample_key(i)).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(b.len(), 12);
        assert_eq!(a[..11], b[..11]);
        assert_ne!(a[11], b[11]);
    }
}

#[test]
fn smoothed_clipped_distances_respect_analytic_bound() {
    let spec = ModelSpec::feedforward(vec![2, 6, 3], Activation::Tanh);
    let (eta, t, m, c, sigma_s) = (0.1, 20, 8, 1.0, 0.05);
    let cfg = TrainConfig::plain(eta, t, m, 2)
        .with_smoothing(c, sigma_s, 4)
        .with_init_scale(0.5);
    let report = sample_sensitivity(&spec, &cfg, &blobs(2, 5), 32, 10).unwrap();
    let beta = report.smoothness_estimate(sigma_s);
    let bound = sensitivity_bound(eta, beta, t, m, c).unwrap();
    assert!(report.distances.iter().all(|d| *d <= bound), "{:?} > {bound}", report.distances);
    assert!(report.s_bar > 0.0);
}

#[test]
fn smoothed_gradient_is_unbiased_for_small_smoothing() {
    let spec = ModelSpec::feedforward(vec![2, 4, 2], Activation::Tanh);
    let mut s = Stream::new(1);
    let params = ParamVector::new(
        &spec,
        (0..spec.param_count()).map(|_| s.uniform(-1.0, 1.0)).collect(),
    )
    .unwrap();
    let ex = blobs(2, 6).record(0, 0);
    let ex = LabeledExample::new(ex.features, ex.label % 2);
    let exact = nn::grad(&spec, &params, std::slice::from_ref(&ex)).unwrap();
    let streams = 2000;
    let samples: Vec<ParamVector> = (0..streams)
        .map(|k| smoothed_gradient(&spec, &params, &ex, 0.005, 1, &mut Stream::new(100 + k)).unwrap())
        .collect();
    for j in 0..params.len() {
        let vals: Vec<f64> = samples.iter().map(|g| g.as_slice()[j]).collect();
        let mean = vals.iter().sum::<f64>() / streams as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (streams - 1) as f64;
        let se = (var / streams as f64).sqrt();
        let target = exact.as_slice()[j];
        // Curvature bias is O(sigma_s^2) while the standard error is
        // O(sigma_s), so at this sigma_s the bias is well inside 3 SE.
        assert!((mean - target).abs() <= 3.0 * se, "coord {j}: {mean} vs {target} (se {se})");
    }
}

#[test]
fn dp_sgd_degenerates_to_plain_over_full_trajectory() {
    let spec = ModelSpec::recurrent(3, 4, 2);
    let source = DataSource::new(
        SourceParams::SyntheticSequences {
            vocab: 3,
            classes: 2,
            min_len: 2,
            max_len: 5,
            noise_std: 0.1,
        },
        2,
    )
    .unwrap();
    let data = source.draw(30, 0);
    let plain = TrainConfig::plain(0.2, 40, 7, 11);
    let dp = plain.clone().with_dp_sgd(1e9, 0.0);
    let mut a = Vec::new();
    let mut b = Vec::new();
    Trainer::new(&spec, &plain)
        .unwrap()
        .run_observed(&data, &data, |_, p| a.push(p.clone()))
        .unwrap();
    Trainer::new(&spec, &dp)
        .unwrap()
        .run_observed(&data, &data, |_, p| b.push(p.clone()))
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn sequential_schedule_trains_each_batch() {
    let spec = ModelSpec::feedforward(vec![2, 3], Activation::Tanh);
    let data = blobs(2, 7).draw(20, 0);
    let cfg = TrainConfig::plain(0.1, 3, 5, 0);
    let out = Trainer::new(&spec, &cfg)
        .unwrap()
        .schedule(Schedule::Sequential { batches: 4 })
        .run(&data, &[])
        .unwrap();
    assert_eq!(out.steps, 12);
}

proptest! {
    #[test]
    fn clipping_bounds_norm_and_keeps_direction(
        values in proptest::collection::vec(-100.0f64..100.0, 4),
        c in 0.01f64..50.0,
    ) {
        let spec = ModelSpec::feedforward(vec![1, 2], Activation::Tanh);
        let g = ParamVector::new(&spec, values).unwrap();
        let out = clip_gradient(&g, c);
        prop_assert!(out.norm() <= c * (1.0 + 1e-12));
        if g.norm() <= c {
            prop_assert_eq!(&out, &g);
        } else {
            let scale = out.norm() / g.norm();
            for (a, b) in out.as_slice().iter().zip(g.as_slice()) {
                prop_assert!((a - scale * b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn permutations_are_bijections(seed in any::<u64>(), n in 0usize..200) {
        let mut p = Stream::new(seed).permutation(n);
        p.sort_unstable();
        prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn predictions_sum_to_one(seed in any::<u64>()) {
        let spec = ModelSpec::feedforward(vec![3, 4, 5], Activation::Relu);
        let mut s = Stream::new(seed);
        let params = ParamVector::new(
            &spec,
            (0..spec.param_count()).map(|_| s.uniform(-3.0, 3.0)).collect(),
        )
        .unwrap();
        let x = nn::Input::Vector((0..3).map(|_| 10.0 * s.gaussian()).collect());
        let p = nn::forward(&spec, &params, &x).unwrap();
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.as_slice().iter().all(|v| *v >= 0.0));
    }
}
