//! Gaussian special functions and truncated-normal moments.
//!
//! Everything here works on the standard normal; callers shift and scale.
//! Probabilities that can get small are carried in log space.

use libm::erfc;

use crate::quadrature::GaussLegendre;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Distance into a tail beyond which moments come from tail quadrature.
const TAIL_SWITCH: f64 = 8.0;

pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn log_norm_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Log-density of N(mean, var) at x.
pub fn log_gauss(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / var - 0.5 * var.ln() - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal survival function 1 - Phi(x), accurate in the upper tail.
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

/// Mills ratio (1 - Phi(x)) / phi(x) for x >= 0, by continued fraction past 5.
pub fn mills_ratio(x: f64) -> f64 {
    if x < 5.0 {
        return norm_sf(x) / norm_pdf(x);
    }
    // Lentz-free backward evaluation: R = 1/(x + 1/(x + 2/(x + 3/(x + ...))))
    let mut tail = 0.0;
    for k in (1..=60).rev() {
        tail = k as f64 / (x + tail);
    }
    1.0 / (x + tail)
}

/// log(1 - Phi(x)).
pub fn log_norm_sf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x > 5.0 {
        log_norm_pdf(x) + mills_ratio(x).ln()
    } else if x < -5.0 {
        (-norm_cdf(x)).ln_1p()
    } else {
        norm_sf(x).ln()
    }
}

pub fn log_norm_cdf(x: f64) -> f64 {
    log_norm_sf(-x)
}

/// log(exp(a) + exp(b)) without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Moments of a standard normal restricted to an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments {
    /// log P(a < Z < b)
    pub log_mass: f64,
    pub mean: f64,
    pub var: f64,
}

/// Moments of Z ~ N(0,1) conditioned on a < Z < b. Bounds may be infinite.
pub fn truncated_std_normal(a: f64, b: f64) -> TruncatedMoments {
    debug_assert!(a < b, "empty interval ({a}, {b})");
    if a >= TAIL_SWITCH {
        return upper_tail_moments(a, b);
    }
    if b <= -TAIL_SWITCH {
        let m = upper_tail_moments(-b, -a);
        return TruncatedMoments { mean: -m.mean, ..m };
    }
    if b - a < 1.0 {
        return narrow_moments(a, b);
    }

    let (log_mass, mass) = if a > 0.0 {
        let sa = norm_sf(a);
        let sb = norm_sf(b);
        let m = sa - sb;
        (m.ln(), m)
    } else if b < 0.0 {
        let m = norm_cdf(b) - norm_cdf(a);
        (m.ln(), m)
    } else {
        let m = 1.0 - norm_cdf(a) - norm_sf(b);
        (m.ln(), m)
    };
    let pa = if a.is_finite() { norm_pdf(a) } else { 0.0 };
    let pb = if b.is_finite() { norm_pdf(b) } else { 0.0 };
    let apa = if a.is_finite() { a * pa } else { 0.0 };
    let bpb = if b.is_finite() { b * pb } else { 0.0 };
    let mean = (pa - pb) / mass;
    let var = (1.0 + (apa - bpb) / mass - mean * mean).max(0.0);
    TruncatedMoments { log_mass, mean, var }
}

/// Interval entirely beyond `TAIL_SWITCH`: write Z = a + s and integrate the
/// tilted density exp(-a s - s^2/2) on s in [0, b - a].
fn upper_tail_moments(a: f64, b: f64) -> TruncatedMoments {
    let rule = GaussLegendre::shared(24);
    let width = b - a;
    let edges = [0.0, 1.0 / a, 3.0 / a, 8.0 / a, 20.0 / a, 45.0 / a];
    let (mut i0, mut i1, mut i2) = (0.0, 0.0, 0.0);
    for pair in edges.windows(2) {
        let lo = pair[0];
        if lo >= width {
            break;
        }
        let hi = pair[1].min(width);
        for (s, w) in rule.nodes_on(lo, hi) {
            let g = w * (-a * s - 0.5 * s * s).exp();
            i0 += g;
            i1 += g * s;
            i2 += g * s * s;
        }
    }
    let ms = i1 / i0;
    TruncatedMoments { log_mass: log_norm_pdf(a) + i0.ln(), mean: a + ms, var: (i2 / i0 - ms * ms).max(0.0) }
}

/// Short finite interval: direct quadrature around the midpoint.
fn narrow_moments(a: f64, b: f64) -> TruncatedMoments {
    let rule = GaussLegendre::shared(24);
    let mid = 0.5 * (a + b);
    let (mut i0, mut i1, mut i2) = (0.0, 0.0, 0.0);
    for (x, w) in rule.nodes_on(a, b) {
        let s = x - mid;
        let g = w * (-mid * s - 0.5 * s * s).exp();
        i0 += g;
        i1 += g * s;
        i2 += g * s * s;
    }
    let ms = i1 / i0;
    TruncatedMoments { log_mass: log_norm_pdf(mid) + i0.ln(), mean: mid + ms, var: (i2 / i0 - ms * ms).max(0.0) }
}
