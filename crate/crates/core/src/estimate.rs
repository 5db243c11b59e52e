//! Hyperparameter inference inside the EP loop: EM fixed-point updates for
//! the noise precision and smoothness weight, and free-energy gradient steps
//! for the sparsity weights.

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Saturation cap for the EM fixed points (a vanishing residual or a
/// constant image would otherwise send them to infinity).
pub const EM_CAP: f64 = 1e12;

/// Sparsity-like weights are kept inside this open interval.
pub const WEIGHT_MIN: f64 = 1e-4;
pub const WEIGHT_MAX: f64 = 1.0 - 1e-4;

/// Largest per-update move of a sparsity weight. A full free-energy gradient
/// scales with the site count, so an uncapped first step would slam the
/// weight into its clamp bounds.
pub const WEIGHT_TRUST_STEP: f64 = 0.1;

/// Hyperparameters of the posterior, with saturation flags for diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct HyperState {
    /// Noise precision `beta` (`beta1` of the augmented model).
    pub beta: f64,
    /// Laplacian smoothness weight `J` (pixel model only).
    pub smoothness: f64,
    /// Sparseness `s` of the binary/sparse priors.
    pub sparsity: f64,
    /// Spike weight `rho` of the difference prior.
    pub spike: f64,
    /// Slab precision `lambda` of the difference prior.
    pub slab_precision: f64,
    /// Gradient step size for the sparsity updates.
    pub eta: f64,
    pub beta_saturated: bool,
    pub smoothness_saturated: bool,
}

impl Default for HyperState {
    fn default() -> Self {
        HyperState {
            beta: 1.0,
            smoothness: 1.0,
            sparsity: 0.5,
            spike: 0.5,
            slab_precision: 1.0,
            eta: 1e-2,
            beta_saturated: false,
            smoothness_saturated: false,
        }
    }
}

/// EM fixed point for the noise precision: `beta* = M / ||A x - p||^2`
/// evaluated at the current EP mean. Returns the capped value and a
/// saturation flag.
pub fn em_update_beta(a: &SparseMatrix, x_ep: &[f64], p: &[f64]) -> Result<(f64, bool)> {
    if p.len() != a.nrows() {
        return Err(Error::dims("measurement count != matrix rows"));
    }
    let residual = a.matvec(x_ep)?;
    let ss: f64 = residual.iter().zip(p).map(|(r, q)| (r - q) * (r - q)).sum();
    let m = a.nrows() as f64;
    let beta = m / ss;
    if beta.is_finite() && beta < EM_CAP {
        Ok((beta, false))
    } else {
        Ok((EM_CAP, true))
    }
}

/// EM fixed point for the smoothness weight: `J* = N / (x^T L x)`.
pub fn em_update_smoothness(x_ep: &[f64], laplacian: &SparseMatrix) -> Result<(f64, bool)> {
    let n = laplacian.nrows() as f64;
    let quad = laplacian.quadratic_form(x_ep)?;
    let j = n / quad;
    if j.is_finite() && j < EM_CAP {
        Ok((j, false))
    } else {
        Ok((EM_CAP, true))
    }
}

/// One gradient-descent step on the EP free energy for a sparsity-like
/// weight: `w <- w - eta dF/dw`, trust-capped and clamped into
/// `[WEIGHT_MIN, WEIGHT_MAX]`.
pub fn descend_weight(weight: f64, df_dw: f64, eta: f64) -> f64 {
    let step = (-eta * df_dw).clamp(-WEIGHT_TRUST_STEP, WEIGHT_TRUST_STEP);
    (weight + step).clamp(WEIGHT_MIN, WEIGHT_MAX)
}
