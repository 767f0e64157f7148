//! Entropy bounds for the scalar quantization noise `U1 - U2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpiSandwich {
    pub lower: f64,
    pub estimate: f64,
    pub upper: f64,
}

impl EpiSandwich {
    pub fn ordered(&self) -> bool {
        self.lower <= self.estimate && self.estimate <= self.upper
    }
}

/// Width of a centered uniform with variance `q`.
pub fn uniform_width(q: f64) -> f64 {
    (12.0 * q).sqrt()
}

/// Differential entropy in bits of the trapezoidal density of `U1 - U2`,
/// by composite Simpson over `panels` panels per sloped edge.
///
/// On each edge the density is `t / (w1 w2)` for `t` in `[0, w2]`; the
/// substitution `t = w2 s^2` removes the derivative singularity at `t = 0`.
pub fn trapezoid_entropy(w1: f64, w2: f64, panels: usize) -> f64 {
    let (w1, w2) = if w1 >= w2 { (w1, w2) } else { (w2, w1) };
    let flat = (w1 - w2) / w1 * w1.log2();
    let f = |s: f64| {
        let t = w2 * s * s;
        let p = t / (w1 * w2);
        if p <= 0.0 {
            0.0
        } else {
            -p * p.log2() * 2.0 * w2 * s
        }
    };
    let m = panels.max(2).next_multiple_of(2);
    let h = 1.0 / m as f64;
    let mut acc = f(0.0) + f(1.0);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    flat + 2.0 * acc * h / 3.0
}

/// Entropy power lower bound, numeric estimate and Gaussian upper bound for
/// `e = U1 - U2`, `Var(U_i) = q_i`, all in bits.
pub fn epi_entropy_sandwich(q1: f64, q2: f64, panels: usize) -> Result<EpiSandwich> {
    if !(q1 > 0.0 && q2 > 0.0) || !q1.is_finite() || !q2.is_finite() {
        return Err(Error::NonPositiveQ { q1, q2 });
    }
    if panels < 2 {
        return Err(Error::InvalidArgument("at least 2 integration panels required".into()));
    }
    let (w1, w2) = (uniform_width(q1), uniform_width(q2));
    let two_pi_e = 2.0 * std::f64::consts::PI * std::f64::consts::E;
    Ok(EpiSandwich {
        lower: 0.5 * (w1 * w1 + w2 * w2).log2(),
        estimate: trapezoid_entropy(w1, w2, panels),
        upper: 0.5 * (two_pi_e * (q1 + q2)).log2(),
    })
}

pub const DEFAULT_PANELS: usize = 20_000;
