use std::f64::consts::SQRT_2;

use statrs::function::erf::erfc;

/// Standard normal CDF, `Φ(z) = erfc(-z / √2) / 2`.
///
/// Going through `erfc` keeps full relative precision in the lower tail,
/// which matters once `Φ` is multiplied by `e^ε` in the Gaussian-mechanism
/// privacy curve.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}
