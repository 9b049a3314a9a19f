//! Closed-form privacy accounting.
//!
//! Covers the Gaussian mechanism's exact `(ε, δ)` curve, its inverse at a
//! fixed `δ`, naive sequential composition, the random-DP confidence derived
//! from the number of sensitivity samples, and the analytic sensitivity bound
//! for smoothed, clipped SGD.

mod lambert;
mod normal;

pub use lambert::lambert_w_minus1;
pub use normal::std_normal_cdf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper end of the ε bisection bracket. Anything larger is reported as
/// `f64::INFINITY`.
pub const EPSILON_MAX: f64 = 200.0;

/// Absolute tolerance of the ε bisection.
pub const EPSILON_TOLERANCE: f64 = 1e-9;

/// Label attached to every DP-SGD budget computed by composing per-step
/// Gaussian budgets additively.
pub const NAIVE_COMPOSITION: &str = "naive-composition";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    /// `epsilon` may be `+inf` (vacuous guarantee); `delta` must be in `[0, 1]`.
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::Domain(format!("epsilon must be >= 0, got {epsilon}")));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::Domain(format!("delta must be in [0, 1], got {delta}")));
        }
        Ok(PrivacyBudget { epsilon, delta })
    }
}

/// δ of the Gaussian mechanism with sensitivity-to-noise ratio `mu` at `epsilon`:
///
/// `δ = Φ(-ε/μ + μ/2) - e^ε Φ(-ε/μ - μ/2)`, clamped to `[0, 1]`, and `0` for `μ = 0`.
pub fn gaussian_delta(mu: f64, epsilon: f64) -> f64 {
    assert!(mu >= 0.0 && epsilon >= 0.0, "gaussian_delta({mu}, {epsilon})");
    if mu == 0.0 {
        return 0.0;
    }
    let a = -epsilon / mu;
    let head = std_normal_cdf(a + mu / 2.0);
    let tail = std_normal_cdf(a - mu / 2.0);
    // e^ε overflows long after the tail term has underflowed to zero.
    let weighted = if tail == 0.0 { 0.0 } else { epsilon.exp() * tail };
    (head - weighted).clamp(0.0, 1.0)
}

/// Smallest ε ≥ 0 with `gaussian_delta(mu, ε) <= delta`, by bisection on
/// `[0, EPSILON_MAX]`. Returns `f64::INFINITY` (with a warning) when even
/// `EPSILON_MAX` does not reach `delta`.
pub fn gaussian_epsilon(mu: f64, delta: f64) -> Result<f64> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Domain(format!("mu must be positive and finite, got {mu}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must be in (0, 1), got {delta}")));
    }
    if gaussian_delta(mu, 0.0) <= delta {
        return Ok(0.0);
    }
    if gaussian_delta(mu, EPSILON_MAX) > delta {
        log::warn!("epsilon above {EPSILON_MAX} for mu={mu}, delta={delta}: privacy is vacuous");
        return Ok(f64::INFINITY);
    }
    let (mut lo, mut hi) = (0.0_f64, EPSILON_MAX);
    while hi - lo > EPSILON_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if gaussian_delta(mu, mid) <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Random-DP confidence for a sensitivity estimate built from `n` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdpConfidence {
    pub rho: f64,
    pub gamma: f64,
}

/// `ρ = exp(W_{-1}(-1/(4n)) / 2)` and `γ = ρ + sqrt(ln(1/ρ) / (2n))`.
pub fn rdp_confidence(n: usize) -> Result<RdpConfidence> {
    if n == 0 {
        return Err(Error::Domain("sample count must be at least 1".into()));
    }
    let nf = n as f64;
    let w = lambert_w_minus1(-1.0 / (4.0 * nf))?;
    let rho = (0.5 * w).exp();
    let gamma = rho + ((1.0 / rho).ln() / (2.0 * nf)).sqrt();
    Ok(RdpConfidence { rho, gamma })
}

/// Analytic sensitivity bound for SGD with per-example clipping at `clip`
/// and `beta`-smooth loss after `iterations` steps of batch size `batch`:
///
/// `2 ((1 + ηβ)^T - 1) C / ((m - 1) β)`.
pub fn sensitivity_bound(
    learning_rate: f64,
    beta: f64,
    iterations: usize,
    batch: usize,
    clip: f64,
) -> Result<f64> {
    if !(learning_rate > 0.0 && beta > 0.0 && clip > 0.0) {
        return Err(Error::Domain(format!(
            "sensitivity bound needs positive eta, beta, C (got {learning_rate}, {beta}, {clip})"
        )));
    }
    if batch < 2 {
        return Err(Error::Domain("sensitivity bound needs minibatch size m >= 2".into()));
    }
    let growth = (iterations as f64 * (learning_rate * beta).ln_1p()).exp_m1();
    Ok(2.0 * growth * clip / ((batch - 1) as f64 * beta))
}

/// Naive composition of `k` releases: `(kε, min(kδ, 1))`.
pub fn compose(k: usize, budget: PrivacyBudget) -> Result<PrivacyBudget> {
    if k == 0 {
        return Err(Error::Domain("composition needs k >= 1".into()));
    }
    let kf = k as f64;
    Ok(PrivacyBudget {
        epsilon: kf * budget.epsilon,
        delta: (kf * budget.delta).min(1.0),
    })
}

/// Per-release budget of one DP-SGD step with noise multiplier `sigma`:
/// clipped sensitivity `C` against noise std `Cσ` gives `μ = 1/σ`.
pub fn dp_sgd_step_budget(noise_multiplier: f64, delta: f64) -> Result<PrivacyBudget> {
    if noise_multiplier == 0.0 {
        return PrivacyBudget::new(f64::INFINITY, delta);
    }
    let epsilon = gaussian_epsilon(1.0 / noise_multiplier, delta)?;
    PrivacyBudget::new(epsilon, delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_examples() {
        assert_eq!(gaussian_delta(0.0, 1.5), 0.0);
        assert!((gaussian_delta(1.0, 0.0) - 0.382925).abs() < 1e-6);
        assert!((gaussian_delta(1.0, 1.0) - 0.126936).abs() < 1e-6);
    }

    #[test]
    fn epsilon_examples() {
        let eps = gaussian_epsilon(1.0, 0.126936).unwrap();
        assert!((eps - 1.0).abs() < 1e-5, "{eps}");
        let exact = gaussian_epsilon(1.0, gaussian_delta(1.0, 1.0)).unwrap();
        assert!((exact - 1.0).abs() < 1e-6);
        assert_eq!(gaussian_epsilon(1.0, 0.5).unwrap(), 0.0);

        let eps = gaussian_epsilon(2.0, 1e-4).unwrap();
        let d = gaussian_delta(2.0, eps);
        assert!((1e-4 - 1e-9..=1e-4).contains(&d), "{d}");
    }

    #[test]
    fn epsilon_domain_and_vacuous() {
        assert!(gaussian_epsilon(0.0, 0.1).is_err());
        assert!(gaussian_epsilon(1.0, 0.0).is_err());
        assert!(gaussian_epsilon(1.0, 1.0).is_err());
        assert_eq!(gaussian_epsilon(500.0, 1e-10).unwrap(), f64::INFINITY);
    }

    #[test]
    fn confidence_examples() {
        let c = rdp_confidence(500).unwrap();
        assert!((c.rho - 0.00710).abs() < 5e-5, "{c:?}");
        assert!((c.gamma - 0.0774).abs() < 5e-4, "{c:?}");
        assert!(c.gamma < 0.08);
        assert!(rdp_confidence(5000).unwrap().gamma < c.gamma);
        let one = rdp_confidence(1).unwrap();
        // A single sample gives no usable confidence: gamma exceeds 1.
        assert!(one.rho > 0.0 && one.rho < 1.0 && one.gamma > 1.0);
        assert!(rdp_confidence(0).is_err());
    }

    #[test]
    fn bound_examples() {
        assert_eq!(sensitivity_bound(0.1, 1.0, 0, 2, 1.0).unwrap(), 0.0);
        assert!((sensitivity_bound(0.1, 1.0, 1, 2, 1.0).unwrap() - 0.2).abs() < 1e-15);
        let b = sensitivity_bound(0.1, 2.0, 3, 5, 0.5).unwrap();
        assert!((b - 2.0 * (1.2f64.powi(3) - 1.0) * 0.5 / 8.0).abs() < 1e-15);
        assert!((b - 0.0910).abs() < 1e-4);
        assert!(matches!(sensitivity_bound(0.1, 1.0, 3, 1, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn composition_examples() {
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let c = compose(3, b).unwrap();
        assert_eq!(c.epsilon, 3.0);
        assert_eq!(c.delta, 3.0 * 1e-5);
        assert!((c.delta - 3e-5).abs() <= f64::EPSILON * 3e-5);
        assert_eq!(compose(1, b).unwrap(), b);
        let big = compose(1_000_000, PrivacyBudget::new(0.1, 1e-2).unwrap()).unwrap();
        assert!((big.epsilon - 1e5).abs() < 1e-6);
        assert_eq!(big.delta, 1.0);
        assert!(compose(0, b).is_err());
    }

    #[test]
    fn dp_sgd_step() {
        let b = dp_sgd_step_budget(1.0, 1e-5).unwrap();
        assert!((gaussian_delta(1.0, b.epsilon) - 1e-5).abs() < 1e-9);
        assert_eq!(dp_sgd_step_budget(0.0, 1e-5).unwrap().epsilon, f64::INFINITY);
    }
}
