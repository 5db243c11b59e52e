//! Shared test oracles, independent of the library's computation paths:
//! adaptive quadrature over the original x-space integrands (atoms handled
//! analytically), naive dense linear algebra, and deterministic parameter
//! draws.

#![allow(dead_code)]

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform_in(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

/// Adaptive Simpson quadrature with absolute tolerance.
pub fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn go(
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
            go(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + go(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    go(f, a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), tol.max(1e-306), 60)
}

/// Zeroth, first, and second moments of `g(x) = exp(-(x-mu)^2 / (2 var))`
/// restricted to `[lo, hi]`, scaled by `g(x*)^-1` at the in-interval maximum
/// so the integrand is O(1): returns `(ln scale, i0, i1, i2)` with the true
/// integrals being `scale * i_k / sqrt(2 pi var)` for the normal density.
pub fn scaled_gaussian_moments(mu: f64, var: f64, lo: f64, hi: f64) -> (f64, f64, f64, f64) {
    let anchor = mu.clamp(lo, hi);
    let ln_scale = -(anchor - mu) * (anchor - mu) / (2.0 * var);
    let h = |x: f64| (-(x - mu) * (x - mu) / (2.0 * var) - ln_scale).exp();
    let tol = 1e-13 * (hi - lo).min(10.0 * var.sqrt()).max(1e-8);
    let i0 = integrate(&|x| h(x), lo, hi, tol);
    let i1 = integrate(&|x| x * h(x), lo, hi, tol * (1.0 + anchor.abs()));
    let i2 = integrate(&|x| x * x * h(x), lo, hi, tol * (1.0 + anchor * anchor));
    (ln_scale, i0, i1, i2)
}

const LN_SQRT_TAU: f64 = 0.918938533204672741780329736406;

/// Oracle moments of the tilted distribution `psi(x) N(x; mu, var)` for each
/// prior family: `(mean, variance, log_norm)`.
pub struct OracleMoments {
    pub mean: f64,
    pub variance: f64,
    pub log_norm: f64,
}

fn ln_normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    -(x - mu) * (x - mu) / (2.0 * var) - 0.5 * var.ln() - LN_SQRT_TAU
}

fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Interval prior: indicator of `[lo, hi]`.
pub fn oracle_interval(mu: f64, var: f64, lo: f64, hi: f64) -> OracleMoments {
    let (ln_scale, i0, i1, i2) = scaled_gaussian_moments(mu, var, lo, hi);
    let mean = i1 / i0;
    let variance = i2 / i0 - mean * mean;
    let log_norm = ln_scale + i0.ln() - 0.5 * var.ln() - LN_SQRT_TAU;
    OracleMoments { mean, variance, log_norm }
}

/// Sparse prior: `s delta(x) + (1-s) uniform[lo, hi]`.
pub fn oracle_sparse(mu: f64, var: f64, s: f64, lo: f64, hi: f64) -> OracleMoments {
    let (ln_scale, i0, i1, i2) = scaled_gaussian_moments(mu, var, lo, hi);
    // spike term, expressed on the same scale as the slab integrals
    let l_spike = s.ln() + ln_normal_pdf(0.0, mu, var);
    let l_slab = (1.0 - s).ln() - (hi - lo).ln() + ln_scale + i0.ln() - 0.5 * var.ln() - LN_SQRT_TAU;
    let log_norm = logsumexp2(l_spike, l_slab);
    let w_slab = (l_slab - log_norm).exp();
    let slab_mean = i1 / i0;
    let slab_var = i2 / i0 - slab_mean * slab_mean;
    let mean = w_slab * slab_mean;
    let variance = w_slab * slab_var + w_slab * (1.0 - w_slab) * slab_mean * slab_mean;
    OracleMoments { mean, variance, log_norm }
}

/// Binary prior: two-point enumeration.
pub fn oracle_binary(mu: f64, var: f64, s: f64) -> OracleMoments {
    let l0 = s.ln() + ln_normal_pdf(0.0, mu, var);
    let l1 = (1.0 - s).ln() + ln_normal_pdf(1.0, mu, var);
    let log_norm = logsumexp2(l0, l1);
    let mean = (l1 - log_norm).exp();
    OracleMoments { mean, variance: mean * (1.0 - mean), log_norm }
}

/// Difference prior: `rho delta(x) + (1-rho) exp(-lambda x^2/2)`, slab
/// integrated by quadrature over the product-Gaussian support.
pub fn oracle_difference(mu: f64, var: f64, rho: f64, lambda: f64) -> OracleMoments {
    // product Gaussian: mean m1, variance v1
    let denom = 1.0 + lambda * var;
    let m1 = mu / denom;
    let v1 = var / denom;
    let sd = v1.sqrt();
    let (lo, hi) = (m1 - 14.0 * sd, m1 + 14.0 * sd);
    // integrand: exp(-lambda x^2/2) N(x; mu, var), scaled at its max m1
    let ln_scale = -lambda * m1 * m1 / 2.0 + ln_normal_pdf(m1, mu, var);
    let h = |x: f64| (-lambda * x * x / 2.0 + ln_normal_pdf(x, mu, var) - ln_scale).exp();
    let tol = 1e-13 * sd;
    let i0 = integrate(&|x| h(x), lo, hi, tol);
    let i1 = integrate(&|x| x * h(x), lo, hi, tol * (1.0 + m1.abs()));
    let i2 = integrate(&|x| x * x * h(x), lo, hi, tol * (1.0 + m1 * m1));

    let l_spike = if rho > 0.0 { rho.ln() + ln_normal_pdf(0.0, mu, var) } else { f64::NEG_INFINITY };
    let l_slab = if rho < 1.0 { (1.0 - rho).ln() + ln_scale + i0.ln() } else { f64::NEG_INFINITY };
    let log_norm = logsumexp2(l_spike, l_slab);
    let w_slab = (l_slab - log_norm).exp();
    let slab_mean = i1 / i0;
    let slab_var = i2 / i0 - slab_mean * slab_mean;
    let mean = w_slab * slab_mean;
    let variance = w_slab * slab_var + w_slab * (1.0 - w_slab) * slab_mean * slab_mean;
    OracleMoments { mean, variance, log_norm }
}

/// Naive Gauss-Jordan inverse of a small dense matrix (row-major), written
/// without any library routine so it is independent of the solver under test.
pub fn naive_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..n {
        // partial pivoting
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let d = m[col][col];
        assert!(d.abs() > 1e-300, "singular test matrix");
        for j in 0..n {
            m[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = m[i][col];
                for j in 0..n {
                    m[i][j] -= f * m[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

pub fn matvec_dense(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum()).collect()
}
