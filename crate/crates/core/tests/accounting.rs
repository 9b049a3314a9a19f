//! Privacy accounting against an independent normal-CDF oracle.

use privaudit_core::accounting::{
    compose, gaussian_delta, gaussian_epsilon, lambert_w_minus1, rdp_confidence, sensitivity_bound,
    PrivacyBudget,
};
use proptest::prelude::*;

/// erfc by an all-positive series below 2.5 and a continued fraction above,
/// so both regions keep relative precision.
fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    if x < 2.5 {
        // erf(x) = 2/sqrt(pi) e^{-x^2} sum_n 2^n x^{2n+1} / (2n+1)!!
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term > 1e-17 * sum {
            n += 1.0;
            term *= 2.0 * x * x / (2.0 * n + 1.0);
            sum += term;
        }
        1.0 - 2.0 * inv_sqrt_pi * (-x * x).exp() * sum
    } else {
        let mut t = 0.0;
        for k in (1..=300).rev() {
            t = (k as f64 / 2.0) / (x + t);
        }
        inv_sqrt_pi * (-x * x).exp() / (x + t)
    }
}

fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn oracle_delta(mu: f64, eps: f64) -> f64 {
    let tail = phi(-eps / mu - mu / 2.0);
    let weighted = if tail == 0.0 { 0.0 } else { eps.exp() * tail };
    (phi(-eps / mu + mu / 2.0) - weighted).clamp(0.0, 1.0)
}

#[test]
fn oracle_sanity() {
    assert!((phi(0.0) - 0.5).abs() < 1e-16);
    assert!((phi(1.959963984540054) - 0.975).abs() < 1e-15);
    assert!((erfc(3.0) - 2.209049699858544e-5).abs() < 1e-19);
    assert!((erfc(2.4) - 6.885138966450789e-4).abs() < 1e-15);
}

#[test]
fn delta_matches_oracle_on_grid() {
    for i in 0..40 {
        let mu = 0.01 * 1000f64.powf(i as f64 / 39.0);
        for j in 0..25 {
            let eps = 20.0 * j as f64 / 24.0;
            let (a, b) = (gaussian_delta(mu, eps), oracle_delta(mu, eps));
            assert!((a - b).abs() <= 1e-9, "mu={mu} eps={eps}: {a} vs {b}");
        }
    }
}

#[test]
fn compose_example_is_exact() {
    let total = compose(3, PrivacyBudget::new(1.0, 1e-5).unwrap()).unwrap();
    assert_eq!(total.epsilon, 3.0);
    assert_eq!(total.delta, 3.0 * 1e-5);
}

#[test]
fn confidence_at_500_samples() {
    let c = rdp_confidence(500).unwrap();
    assert!(c.gamma > 0.0770 && c.gamma < 0.0800, "{c:?}");
}

proptest! {
    #[test]
    fn delta_decreases_in_epsilon(mu in 0.01f64..10.0, e1 in 0.0f64..20.0, e2 in 0.0f64..20.0) {
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(gaussian_delta(mu, hi) <= gaussian_delta(mu, lo) + 1e-15);
    }

    #[test]
    fn delta_increases_in_mu(m1 in 0.01f64..10.0, m2 in 0.01f64..10.0, eps in 0.0f64..20.0) {
        let (lo, hi) = if m1 < m2 { (m1, m2) } else { (m2, m1) };
        prop_assert!(gaussian_delta(mu_clamp(lo), eps) <= gaussian_delta(mu_clamp(hi), eps) + 1e-15);
    }

    #[test]
    fn delta_is_a_probability(mu in 0.0f64..50.0, eps in 0.0f64..300.0) {
        let d = gaussian_delta(mu, eps);
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn epsilon_round_trips(mu in 0.05f64..10.0, eps in 0.0f64..20.0) {
        let delta = oracle_delta(mu, eps);
        prop_assume!(delta > 1e-10 && delta < 1.0 - 1e-10);
        let back = gaussian_epsilon(mu, delta).unwrap();
        prop_assert!((back - eps).abs() < 1e-6, "{} vs {}", back, eps);
        prop_assert!((gaussian_delta(mu, back) - delta).abs() < 1e-9);
    }

    #[test]
    fn lambert_residual(t in 0.0f64..1.0) {
        let x = -(-1.0f64).exp() * (1.0 - t) - 1e-300 * t;
        let x = x.min(-1e-300);
        let w = lambert_w_minus1(x).unwrap();
        prop_assert!(w <= -1.0);
        prop_assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs());
    }

    #[test]
    fn confidence_shrinks_with_samples(n in 2usize..100_000) {
        let a = rdp_confidence(n).unwrap();
        let b = rdp_confidence(n * 2).unwrap();
        prop_assert!(b.gamma < a.gamma);
        prop_assert!(a.rho > 0.0 && a.rho < 1.0);
    }

    #[test]
    fn bound_grows_with_iterations(t in 0usize..200, eta in 1e-3f64..1.0, beta in 1e-3f64..10.0) {
        let a = sensitivity_bound(eta, beta, t, 8, 1.0).unwrap();
        let b = sensitivity_bound(eta, beta, t + 1, 8, 1.0).unwrap();
        prop_assert!(b > a);
        // First-order term: each step adds at least 2 eta C / (m - 1).
        prop_assert!(b - a >= 2.0 * eta / 7.0 * (1.0 - 1e-12));
    }
}

fn mu_clamp(mu: f64) -> f64 {
    mu.max(0.01)
}
