//! Tilted-distribution moments for the supported prior families.
//!
//! Each kernel takes a univariate Gaussian cavity `N(mu, var)` and returns
//! the mean, variance, and log-normalizer of the cavity multiplied by the
//! prior factor:
//!
//! - interval: indicator of `[lo, hi]`;
//! - sparse: `s delta(x) + (1-s) * uniform[lo, hi]`;
//! - binary: `s delta(x) + (1-s) delta(x-1)`;
//! - difference: `rho delta(x) + (1-rho) exp(-lambda x^2 / 2)` (the slab is
//!   used unnormalized exactly as written, so rescaling `lambda` shifts the
//!   effective spike weight).
//!
//! Gaussian masses are evaluated through `erfc`; when both standardized
//! bounds fall at least [`FAR_TAIL_Z`] deviations into the same tail, the
//! Phi-difference formulas become 0/0 and the kernel switches to an
//! exponentially tilted integral anchored at the near bound, which stays
//! conditioned arbitrarily deep into the tail.

use crate::error::{Error, Result};

/// Returned variances are floored here; the EP site update divides by them.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Standardized-bound magnitude beyond which the far-tail path is used.
const FAR_TAIL_Z: f64 = 8.0;

const LN_SQRT_TAU: f64 = 0.918938533204672741780329736406; // ln sqrt(2 pi)

/// Moments and log-normalizer of a tilted distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedMoments {
    pub mean: f64,
    pub variance: f64,
    pub log_norm: f64,
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Log-density of `N(x; mu, var)`.
fn ln_normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    let d = x - mu;
    -0.5 * d * d / var - 0.5 * var.ln() - LN_SQRT_TAU
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Adaptive Simpson integration, used only by the far-tail branch where the
/// integrand is smooth, positive, and well scaled.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(fa, fm, fb, b - a);
    recurse(f, a, b, fa, fm, fb, whole, tol.max(1e-300), 52)
}

/// Mean, variance, and log-mass of `N(mu, var)` truncated to `[lo, hi]`.
pub fn truncated_normal_moments(mu: f64, var: f64, lo: f64, hi: f64) -> Result<TiltedMoments> {
    if !(var > 0.0) {
        return Err(Error::invalid(format!("cavity variance {var} must be positive")));
    }
    if !(lo < hi) {
        return Err(Error::invalid(format!("bounds [{lo}, {hi}] must be ordered")));
    }
    let sigma = var.sqrt();
    let alpha = (lo - mu) / sigma;
    let beta = (hi - mu) / sigma;

    let far_right = alpha >= FAR_TAIL_Z;
    let far_left = beta <= -FAR_TAIL_Z;
    let (mean, variance, ln_mass) = if far_right || far_left {
        // flip the left-tail case onto the right tail
        let (a, b) = if far_right { (alpha, beta) } else { (-beta, -alpha) };
        let (off, var_z, ln_mass) = tail_moments(a, b);
        let mean = if far_right { lo + sigma * off } else { hi - sigma * off };
        (mean, var * var_z, ln_mass)
    } else {
        let mass = phi_interval_mass(alpha, beta);
        let (pa, pb) = (normal_pdf(alpha), normal_pdf(beta));
        let ratio = (pa - pb) / mass;
        let upper = if beta.is_finite() { beta * pb } else { 0.0 };
        let lower = if alpha.is_finite() { alpha * pa } else { 0.0 };
        let var_z = 1.0 + (lower - upper) / mass - ratio * ratio;
        (mu + sigma * ratio, var * var_z, mass.ln())
    };

    Ok(TiltedMoments {
        mean: mean.clamp(lo, hi),
        variance: variance.max(VARIANCE_FLOOR),
        log_norm: ln_mass,
    })
}

/// `Phi(beta) - Phi(alpha)` evaluated on whichever tail keeps the erfc
/// arguments well conditioned.
fn phi_interval_mass(alpha: f64, beta: f64) -> f64 {
    let s = std::f64::consts::SQRT_2;
    if alpha >= 0.0 {
        0.5 * (libm::erfc(alpha / s) - libm::erfc(beta / s))
    } else if beta <= 0.0 {
        0.5 * (libm::erfc(-beta / s) - libm::erfc(-alpha / s))
    } else {
        0.5 * (libm::erf(beta / s) - libm::erf(alpha / s))
    }
}

/// Standard normal truncated to `[a, b]` with `a >= FAR_TAIL_Z`.
/// Substituting `z = a + u` gives an integrand `u^k exp(-a u - u^2/2)` on
/// `[0, b-a]`; returns `(E[u], Var[z], ln mass)`.
fn tail_moments(a: f64, b: f64) -> (f64, f64, f64) {
    let width = if b.is_finite() { b - a } else { f64::INFINITY };
    let cutoff = 45.0 / a; // exp(-45) is below any useful relative tolerance
    let upper = width.min(cutoff);
    let weight = |u: f64| (-a * u - 0.5 * u * u).exp();
    let i0 = adaptive_simpson(&|u| weight(u), 0.0, upper, 1e-14 / a);
    let i1 = adaptive_simpson(&|u| u * weight(u), 0.0, upper, 1e-14 / (a * a));
    let i2 = adaptive_simpson(&|u| u * u * weight(u), 0.0, upper, 1e-14 / (a * a * a));
    let e1 = i1 / i0;
    let e2 = i2 / i0;
    (e1, e2 - e1 * e1, i0.ln() - 0.5 * a * a - LN_SQRT_TAU)
}

/// Interval prior: cavity truncated to `[lo, hi]`.
/// `log_norm` is the log Gaussian mass of the interval.
pub fn interval_moments(mu: f64, var: f64, lo: f64, hi: f64) -> Result<TiltedMoments> {
    truncated_normal_moments(mu, var, lo, hi)
}

/// Shared spike-and-slab combination: spike at zero with log-weight `l0`,
/// slab moments `(m1, v1)` with log-weight `l1`.
fn mix_spike_slab(l0: f64, l1: f64, m1: f64, v1: f64) -> TiltedMoments {
    let ln_z = log_sum_exp(l0, l1);
    let w1 = (l1 - ln_z).exp();
    let mean = w1 * m1;
    // law of total variance with a point mass at zero
    let variance = w1 * v1 + w1 * (1.0 - w1) * m1 * m1;
    TiltedMoments { mean, variance: variance.max(VARIANCE_FLOOR), log_norm: ln_z }
}

/// Sparse (spike-and-slab) prior with the spike fixed at zero and a uniform
/// slab on `[lo, hi]`; `s` is the spike weight.
pub fn sparse_moments(mu: f64, var: f64, s: f64, lo: f64, hi: f64) -> Result<TiltedMoments> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::invalid(format!("sparseness {s} must lie in (0,1)")));
    }
    if !(lo <= 0.0 && 0.0 <= hi) {
        return Err(Error::invalid(format!(
            "sparse prior support [{lo}, {hi}] must contain the spike at 0"
        )));
    }
    let slab = truncated_normal_moments(mu, var, lo, hi)?;
    let l0 = s.ln() + ln_normal_pdf(0.0, mu, var);
    let l1 = (1.0 - s).ln() + slab.log_norm - (hi - lo).ln();
    Ok(mix_spike_slab(l0, l1, slab.mean, slab.variance))
}

/// Binary prior on `{0, 1}`; `s` is the weight of 0.
pub fn binary_moments(mu: f64, var: f64, s: f64) -> Result<TiltedMoments> {
    if !(var > 0.0) {
        return Err(Error::invalid(format!("cavity variance {var} must be positive")));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::invalid(format!("sparseness {s} must lie in (0,1)")));
    }
    let l0 = s.ln() + ln_normal_pdf(0.0, mu, var);
    let l1 = (1.0 - s).ln() + ln_normal_pdf(1.0, mu, var);
    let ln_z = log_sum_exp(l0, l1);
    let mean = (l1 - ln_z).exp();
    Ok(TiltedMoments {
        mean,
        variance: (mean * (1.0 - mean)).max(VARIANCE_FLOOR),
        log_norm: ln_z,
    })
}

/// Difference-variable prior: spike at zero plus an unnormalized Gaussian
/// slab `exp(-lambda x^2 / 2)`; `rho` is the spike weight.
pub fn difference_moments(mu: f64, var: f64, rho: f64, lambda: f64) -> Result<TiltedMoments> {
    if !(var > 0.0) {
        return Err(Error::invalid(format!("cavity variance {var} must be positive")));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("spike weight {rho} must lie in [0,1]")));
    }
    if lambda < 0.0 {
        return Err(Error::invalid(format!("slab precision {lambda} must be >= 0")));
    }
    let denom = 1.0 + lambda * var;
    let slab_mean = mu / denom;
    let slab_var = var / denom;
    let l0 = if rho > 0.0 { rho.ln() + ln_normal_pdf(0.0, mu, var) } else { f64::NEG_INFINITY };
    let l1 = if rho < 1.0 {
        (1.0 - rho).ln() - 0.5 * denom.ln() - 0.5 * lambda * mu * mu / denom
    } else {
        f64::NEG_INFINITY
    };
    Ok(mix_spike_slab(l0, l1, slab_mean, slab_var))
}

/// One prior factor attached to a coordinate of the EP system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SitePrior {
    Interval { lo: f64, hi: f64 },
    Sparse { weight: f64, lo: f64, hi: f64 },
    Binary { weight: f64 },
    Difference { spike: f64, slab_precision: f64 },
}

impl SitePrior {
    pub fn tilted_moments(&self, cavity_mean: f64, cavity_var: f64) -> Result<TiltedMoments> {
        match *self {
            SitePrior::Interval { lo, hi } => interval_moments(cavity_mean, cavity_var, lo, hi),
            SitePrior::Sparse { weight, lo, hi } => {
                sparse_moments(cavity_mean, cavity_var, weight, lo, hi)
            }
            SitePrior::Binary { weight } => binary_moments(cavity_mean, cavity_var, weight),
            SitePrior::Difference { spike, slab_precision } => {
                difference_moments(cavity_mean, cavity_var, spike, slab_precision)
            }
        }
    }

    /// `d log_norm / d weight` for the families with a mixing weight
    /// (`s` for sparse/binary, `rho` for difference); `None` for interval.
    pub fn d_log_norm_d_weight(&self, cavity_mean: f64, cavity_var: f64) -> Result<Option<f64>> {
        let (l0_unit, l1_unit) = match *self {
            SitePrior::Interval { .. } => return Ok(None),
            SitePrior::Sparse { lo, hi, .. } => {
                let slab = truncated_normal_moments(cavity_mean, cavity_var, lo, hi)?;
                (
                    ln_normal_pdf(0.0, cavity_mean, cavity_var),
                    slab.log_norm - (hi - lo).ln(),
                )
            }
            SitePrior::Binary { .. } => (
                ln_normal_pdf(0.0, cavity_mean, cavity_var),
                ln_normal_pdf(1.0, cavity_mean, cavity_var),
            ),
            SitePrior::Difference { slab_precision, .. } => {
                let denom = 1.0 + slab_precision * cavity_var;
                (
                    ln_normal_pdf(0.0, cavity_mean, cavity_var),
                    -0.5 * denom.ln() - 0.5 * slab_precision * cavity_mean * cavity_mean / denom,
                )
            }
        };
        let w = match *self {
            SitePrior::Sparse { weight, .. } | SitePrior::Binary { weight } => weight,
            SitePrior::Difference { spike, .. } => spike,
            SitePrior::Interval { .. } => unreachable!(),
        };
        // Z = w C0 + (1-w) C1;  dlogZ/dw = (C0 - C1)/Z
        let ln_z = log_sum_exp(
            if w > 0.0 { w.ln() + l0_unit } else { f64::NEG_INFINITY },
            if w < 1.0 { (1.0 - w).ln() + l1_unit } else { f64::NEG_INFINITY },
        );
        Ok(Some((l0_unit - ln_z).exp() - (l1_unit - ln_z).exp()))
    }

    /// Closed support hull of the prior (tilted means always lie inside).
    pub fn support_hull(&self) -> (f64, f64) {
        match *self {
            SitePrior::Interval { lo, hi } | SitePrior::Sparse { lo, hi, .. } => (lo, hi),
            SitePrior::Binary { .. } => (0.0, 1.0),
            SitePrior::Difference { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}
