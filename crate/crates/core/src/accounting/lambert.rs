//! Lower real branch of the Lambert W function.

use std::f64::consts::E;

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 64;

/// Above this the branch-point series seeds Halley instead of the
/// logarithmic asymptote, which is poor close to `-1/e`.
const BRANCH_SERIES_LIMIT: f64 = -0.25;

/// `W_{-1}(x)` for `-1/e <= x < 0`, the solution `w <= -1` of `w e^w = x`.
pub fn lambert_w_minus1(x: f64) -> Result<f64> {
    let branch_point = -1.0 / E;
    if !(x.is_finite() && x < 0.0 && x >= branch_point) {
        return Err(Error::Domain(format!(
            "W_-1 is defined on [-1/e, 0), got {x}"
        )));
    }
    if x == branch_point {
        return Ok(-1.0);
    }

    let mut w = if x < BRANCH_SERIES_LIMIT {
        // w = -1 - p - p^2/3 - 11 p^3/72 with p = sqrt(2 (1 + e x)).
        let p = (2.0 * (1.0 + E * x)).max(0.0).sqrt();
        -1.0 - p - p * p / 3.0 - 11.0 * p * p * p / 72.0
    } else {
        let l1 = (-x).ln();
        l1 - (-l1).ln()
    };

    for _ in 0..MAX_ITERATIONS {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        let next = (w - step).min(-1.0);
        if (next - w).abs() <= 4.0 * f64::EPSILON * w.abs() {
            w = next;
            break;
        }
        w = next;
    }
    Ok(w)
}
