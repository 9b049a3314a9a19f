//! Sampled sensitivity of a training pipeline.
//!
//! For each sample `i` the sampler draws `N + 1` records, trains once on
//! `d_1..d_N` and once on the same list with position `N` replaced by
//! `d_{N+1}`, and records the Euclidean distance between the two final
//! parameter vectors. Both runs share the trainer seed, so the distance
//! isolates the effect of the swapped record.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::DataSource;
use crate::error::{Error, Result};
use crate::nn::ModelSpec;
use crate::rng;
use crate::trainer::{TrainConfig, Trainer, LIPSCHITZ_SAFETY};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    /// Number of adjacent pairs sampled.
    pub n: usize,
    /// Training-set size.
    #[serde(rename = "N")]
    pub big_n: usize,
    pub distances: Vec<f64>,
    pub s_bar: f64,
    /// Safety factor times the largest per-example gradient norm seen in any
    /// of the `2n` training runs.
    pub lipschitz_estimate: f64,
    pub trainer_fingerprint: String,
    pub source_fingerprint: String,
}

impl SensitivityReport {
    /// Smoothness estimate `L / σ_s` for smoothed-clipped training.
    pub fn smoothness_estimate(&self, smoothing_std: f64) -> f64 {
        self.lipschitz_estimate / smoothing_std
    }
}

/// Data key for sample `i`; the records of sample `i` depend only on the
/// source seed and `i`.
pub fn sample_key(i: usize) -> u64 {
    rng::derive(rng::label("sensitivity"), &[i as u64])
}

/// Runs the sampler. Samples are processed on the current rayon pool; the
/// report does not depend on its size.
pub fn sample_sensitivity(
    spec: &ModelSpec,
    config: &TrainConfig,
    source: &DataSource,
    big_n: usize,
    n: usize,
) -> Result<SensitivityReport> {
    if n == 0 {
        return Err(Error::config("sensitivity.n", "must be at least 1"));
    }
    if big_n < 2 {
        return Err(Error::config("sensitivity.N", "must be at least 2"));
    }
    let trainer = Trainer::new(spec, config)?.without_history();

    let results: Vec<Result<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (d1, d2) = source.draw_adjacent_pair(big_n, sample_key(i))?;
            let a = trainer.run(&d1, &[])?;
            let b = trainer.run(&d2, &[])?;
            let grad_norm = a.max_example_grad_norm.max(b.max_example_grad_norm);
            let d = a.params.distance(&b.params);
            if !d.is_finite() {
                return Err(Error::NonFinite("parameter distance"));
            }
            Ok((d, grad_norm))
        })
        .collect();

    let mut distances = Vec::with_capacity(n);
    let mut max_grad: f64 = 0.0;
    let mut first_failure = None;
    let mut completed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((d, g)) => {
                distances.push(d);
                max_grad = max_grad.max(g);
                completed.push((i, d));
            }
            Err(e) => {
                if first_failure.is_none() {
                    first_failure = Some((i, e.to_string()));
                }
            }
        }
    }
    if let Some((sample, reason)) = first_failure {
        return Err(Error::SamplerAborted {
            sample,
            completed,
            reason,
        });
    }

    let s_bar = distances.iter().copied().fold(0.0, f64::max);
    Ok(SensitivityReport {
        n,
        big_n,
        distances,
        s_bar,
        lipschitz_estimate: LIPSCHITZ_SAFETY * max_grad,
        trainer_fingerprint: config.fingerprint(spec),
        source_fingerprint: source.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SourceParams;
    use crate::nn::Activation;

    fn blobs() -> DataSource {
        DataSource::new(
            SourceParams::GaussianBlobs {
                classes: 2,
                dims: 2,
                separation: 1.0,
                std: 1.0,
            },
            11,
        )
        .unwrap()
    }

    #[test]
    fn data_independent_trainer_has_zero_sensitivity() {
        let spec = ModelSpec::feedforward(vec![2, 4, 2], Activation::Tanh);
        let cfg = TrainConfig::plain(0.1, 0, 4, 3);
        let r = sample_sensitivity(&spec, &cfg, &blobs(), 10, 5).unwrap();
        assert_eq!(r.distances, vec![0.0; 5]);
        assert_eq!(r.s_bar, 0.0);
    }

    #[test]
    fn report_is_max_and_prefix_monotone() {
        let spec = ModelSpec::feedforward(vec![2, 4, 2], Activation::Tanh);
        let cfg = TrainConfig::plain(0.2, 6, 4, 3);
        let small = sample_sensitivity(&spec, &cfg, &blobs(), 12, 3).unwrap();
        let large = sample_sensitivity(&spec, &cfg, &blobs(), 12, 6).unwrap();
        assert_eq!(&large.distances[..3], &small.distances[..]);
        assert!(large.s_bar >= small.s_bar);
        assert_eq!(large.s_bar, large.distances.iter().copied().fold(0.0, f64::max));
        assert!(large.distances.iter().all(|d| *d > 0.0));
    }

    #[test]
    fn independent_of_pool_size() {
        let spec = ModelSpec::feedforward(vec![2, 4, 2], Activation::Tanh);
        let cfg = TrainConfig::plain(0.2, 5, 4, 3).with_dp_sgd(1.0, 0.5);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| sample_sensitivity(&spec, &cfg, &blobs(), 9, 7).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn argument_validation() {
        let spec = ModelSpec::feedforward(vec![2, 2], Activation::Tanh);
        let cfg = TrainConfig::plain(0.1, 1, 1, 0);
        assert!(sample_sensitivity(&spec, &cfg, &blobs(), 1, 3).is_err());
        assert!(sample_sensitivity(&spec, &cfg, &blobs(), 4, 0).is_err());
    }

    #[test]
    fn divergence_aborts_with_partial_report() {
        let spec = ModelSpec::feedforward(vec![2, 2], Activation::Tanh);
        let cfg = TrainConfig::plain(1e300, 3, 2, 0);
        match sample_sensitivity(&spec, &cfg, &blobs(), 4, 3) {
            Err(Error::SamplerAborted { sample, .. }) => assert_eq!(sample, 0),
            other => panic!("expected abort, got {other:?}"),
        }
    }
}
