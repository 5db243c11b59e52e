//! Expectation Propagation over a multivariate Gaussian base with univariate
//! non-Gaussian sites.
//!
//! Each site `psi_i` is approximated by a Gaussian `N(a_i, b_i)`. One sweep
//! factors the full precision once, extracts every marginal, and then updates
//! all sites in parallel from their cavity distributions (the single-matrix-
//! inversion scheme), with damping on `a` and `1/b`. Hyperparameters are
//! re-estimated between sweeps after a warm-up.

mod model;

pub use model::{build_difference_base, build_pixel_base, GaussianBase, Marginals, SystemModel};

use crate::error::{Error, Result};
use crate::estimate::{self, HyperState};
use crate::priors::{SitePrior, TiltedMoments};

/// Initial site variance: sites start near-inactive so the first sweep sees
/// essentially the Gaussian base.
pub const SITE_VARIANCE_INIT: f64 = 1e8;

/// Negative site variances produced by non-log-concave tilted updates are
/// clipped to this cap (a weak but valid site).
pub const SITE_VARIANCE_CAP: f64 = 1e8;

/// A site whose cavity denominator `1 - marg_var/b` falls below this has a
/// cavity carrying (numerically) no information: the marginal is essentially
/// the site itself. Below the threshold the removal formula amplifies the
/// factorization's rounding into the cavity mean faster than f64 can pay, so
/// instead of evaluating it the sweep substitutes the flat-cavity limit, in
/// which the tilted distribution degenerates to the bare prior. This is
/// exact for coordinates the Gaussian base does not touch at all (pixels no
/// ray crosses, with zero smoothness).
pub const CAVITY_EPS: f64 = 1e-6;

/// Cavity variance standing in for the flat-cavity limit.
pub const CAVITY_LIMIT_VAR: f64 = 1e12;

const LN_TAU: f64 = 1.837877066409345483560659472811; // ln(2 pi)

/// Leave-one-out cavity parameters `(cavity_var, cavity_mean)` from the
/// current marginal and the site being removed. `None` signals a cavity
/// collapse; the caller skips the site's update for this sweep.
pub fn cavity_params(marg_var: f64, marg_mean: f64, a: f64, b: f64) -> Option<(f64, f64)> {
    if b.is_infinite() {
        return Some((marg_var, marg_mean));
    }
    let denom = 1.0 - marg_var / b;
    if denom <= CAVITY_EPS {
        return None;
    }
    Some((marg_var / denom, (marg_mean - (a / b) * marg_var) / denom))
}

/// Moment-matched site parameters from tilted and cavity moments.
#[derive(Debug, Clone, Copy)]
pub struct SiteUpdate {
    pub a: f64,
    pub b: f64,
    /// The raw update asked for a negative variance and was clipped.
    pub clipped: bool,
}

/// Solve the moment-matching conditions for `(a, b)`: the Gaussian site that,
/// combined with the cavity, reproduces the tilted mean and variance.
pub fn site_update(tilted: &TiltedMoments, cavity_var: f64, cavity_mean: f64) -> SiteUpdate {
    let inv_b = 1.0 / tilted.variance - 1.0 / cavity_var;
    if inv_b == 0.0 {
        // site vanishes: the tilted distribution equals the cavity
        return SiteUpdate { a: 0.0, b: f64::INFINITY, clipped: false };
    }
    if inv_b < 0.0 {
        // the tilted distribution is wider than the cavity (non-log-concave
        // sites do this); a negative-precision site is replaced by a weak one
        // centred on the tilted mean rather than scaling the mean by the
        // unbounded lever arm b/cavity_var
        return SiteUpdate { a: tilted.mean, b: SITE_VARIANCE_CAP, clipped: true };
    }
    let b = 1.0 / inv_b;
    let a = tilted.mean + (b / cavity_var) * (tilted.mean - cavity_mean);
    SiteUpdate { a, b, clipped: false }
}

/// Options of one EP run.
#[derive(Debug, Clone, Copy)]
pub struct EpOptions {
    pub max_iter: usize,
    /// Convergence: max absolute change of marginal means between sweeps.
    pub tol: f64,
    /// Damping factor on `a` and `1/b` (1 = undamped).
    pub damping: f64,
    pub infer_beta: bool,
    pub infer_smoothness: bool,
    /// Infer the sparsity weights (`s` of binary/sparse, `rho` of difference)
    /// by free-energy descent.
    pub infer_weights: bool,
    /// Hyperparameter updates start after this many sweeps. Starting EM
    /// too early freezes premature site configurations in place; eight
    /// settling sweeps measurably improve noiseless binary recovery.
    pub warmup: usize,
    /// Record a per-sweep diagnostics line.
    pub collect_trace: bool,
}

impl Default for EpOptions {
    fn default() -> Self {
        EpOptions {
            max_iter: 500,
            tol: 1e-6,
            damping: 0.5,
            infer_beta: false,
            infer_smoothness: false,
            infer_weights: false,
            warmup: 8,
            collect_trace: false,
        }
    }
}

/// One diagnostics line per sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepDiag {
    pub iteration: usize,
    pub free_energy: f64,
    pub max_delta: f64,
    pub negative_b: usize,
    pub skipped: usize,
    pub beta: f64,
    pub smoothness: f64,
    pub sparsity: f64,
    pub spike: f64,
}

/// Output of an EP run.
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    /// Tilted means of every coordinate (the point estimate). For the
    /// difference model the image is the first `n_pixels` entries.
    pub point: Vec<f64>,
    pub marginal_mean: Vec<f64>,
    pub marginal_var: Vec<f64>,
    pub hyper: HyperState,
    pub converged: bool,
    pub iterations: usize,
    pub free_energy: f64,
    pub negative_b_events: usize,
    pub skipped_site_events: usize,
    pub trace: Vec<SweepDiag>,
}

/// Result of one pass over the sites (with or without applying updates).
struct PassReport {
    free_energy: f64,
    entry_mean: Vec<f64>,
    tilted_mean: Vec<f64>,
    tilted_var: Vec<f64>,
    negative_b: usize,
    skipped: usize,
    /// Summed `d log Z_tilted / d weight` per weighted family.
    grad_sparsity: Option<f64>,
    grad_spike: Option<f64>,
}

/// The EP engine: system model, per-coordinate priors, and site state.
pub struct EpEngine {
    model: SystemModel,
    priors: Vec<Option<SitePrior>>,
    /// Site natural shift `a/b` per coordinate (0 when inactive).
    site_shift: Vec<f64>,
    /// Site precision `1/b` per coordinate (0 when inactive).
    site_prec: Vec<f64>,
    pub hyper: HyperState,
}

impl EpEngine {
    pub fn new(
        model: SystemModel,
        priors: Vec<Option<SitePrior>>,
        hyper: HyperState,
    ) -> Result<EpEngine> {
        let dim = model.dim();
        if priors.len() != dim {
            return Err(Error::dims(format!(
                "{} priors for a {dim}-dimensional system",
                priors.len()
            )));
        }
        let site_prec = priors
            .iter()
            .map(|p| if p.is_some() { 1.0 / SITE_VARIANCE_INIT } else { 0.0 })
            .collect();
        Ok(EpEngine {
            model,
            priors,
            site_shift: vec![0.0; dim],
            site_prec,
            hyper: HyperState { ..hyper },
        })
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    /// `(a, b)` of a site; `b` is infinite for inactive sites.
    pub fn site_params(&self, i: usize) -> (f64, f64) {
        let q = self.site_prec[i];
        if q == 0.0 {
            (0.0, f64::INFINITY)
        } else {
            (self.site_shift[i] / q, 1.0 / q)
        }
    }

    /// Replace the weight of every weighted prior (used by inference and by
    /// finite-difference tests).
    pub fn set_weights(&mut self, sparsity: Option<f64>, spike: Option<f64>) {
        for prior in self.priors.iter_mut().flatten() {
            match prior {
                SitePrior::Sparse { weight, .. } | SitePrior::Binary { weight } => {
                    if let Some(s) = sparsity {
                        *weight = s;
                    }
                }
                SitePrior::Difference { spike: rho, .. } => {
                    if let Some(r) = spike {
                        *rho = r;
                    }
                }
                SitePrior::Interval { .. } => {}
            }
        }
        if let Some(s) = sparsity {
            self.hyper.sparsity = s;
        }
        if let Some(r) = spike {
            self.hyper.spike = r;
        }
    }

    fn refresh(&self) -> Result<Marginals> {
        self.model.marginals(&self.hyper, &self.site_prec, &self.site_shift)
    }

    /// One pass: factor, per-site cavity/tilted/update computation, free
    /// energy of the entering state. `damping` in `(0, 1]` applies the staged
    /// updates; `None` leaves the state untouched (pure evaluation).
    fn pass(&mut self, damping: Option<f64>) -> Result<PassReport> {
        let marg = self.refresh()?;
        let dim = self.model.dim();
        let mut tilted_mean = marg.mean.clone();
        let mut tilted_var = marg.var.clone();
        let mut staged: Vec<(usize, f64, f64)> = Vec::new();
        let mut site_terms = 0.0;
        let mut negative_b = 0;
        let mut collapsed = 0;
        let mut grad_sparsity = None;
        let mut grad_spike = None;

        for i in 0..dim {
            let Some(prior) = self.priors[i] else { continue };
            let (a, b) = self.site_params(i);
            let (cv, cm) = match cavity_params(marg.var[i], marg.mean[i], a, b) {
                Some(pair) => pair,
                None => {
                    collapsed += 1;
                    (CAVITY_LIMIT_VAR, 0.0)
                }
            };
            let tilted = prior.tilted_moments(cm, cv)?;
            tilted_mean[i] = tilted.mean;
            tilted_var[i] = tilted.variance;

            // (ln Z_Q-site + ln Z_gauss)-combination, finite even as b -> inf
            site_terms += 0.5 * (b / (b + cv)).ln()
                + a * self.site_shift[i] / 2.0
                - (a - cm) * (a - cm) / (2.0 * (cv + b))
                - tilted.log_norm;

            if let Some(g) = prior.d_log_norm_d_weight(cm, cv)? {
                match prior {
                    SitePrior::Difference { .. } => {
                        *grad_spike.get_or_insert(0.0) += g;
                    }
                    _ => {
                        *grad_sparsity.get_or_insert(0.0) += g;
                    }
                }
            }

            let up = site_update(&tilted, cv, cm);
            if up.clipped {
                negative_b += 1;
            }
            let (r_new, q_new) = if up.b.is_infinite() {
                (0.0, 0.0)
            } else {
                (up.a / up.b, 1.0 / up.b)
            };
            staged.push((i, r_new, q_new));
        }

        let free_energy = site_terms - 0.5 * dim as f64 * LN_TAU + 0.5 * marg.ln_det_w
            - 0.5 * marg.shift_dot_mean;

        if std::env::var_os("TOMOEP_EP_DEBUG").is_some() {
            let max_mean = marg.mean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let min_b = self
                .site_prec
                .iter()
                .filter(|&&ib| ib > 0.0)
                .fold(0.0f64, |m, &ib| m.max(ib));
            let max_shift = self.site_shift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let max_a = (0..self.model.dim())
                .map(|i| self.site_params(i).0.abs())
                .fold(0.0f64, f64::max);
            eprintln!(
                "dbg: max|mean|={max_mean:.3e} min_b={:.3e} max|a|={max_a:.3e} max|a/b|={max_shift:.3e} neg_b={negative_b} skip={collapsed}",
                1.0 / min_b.max(1e-300)
            );
        }

        if let Some(gamma) = damping {
            // damping acts on the natural parameters (a/b, 1/b) so the pull
            // direction and strength of a site stay a coherent pair
            for (i, r_new, q_new) in staged {
                self.site_shift[i] = gamma * r_new + (1.0 - gamma) * self.site_shift[i];
                self.site_prec[i] = gamma * q_new + (1.0 - gamma) * self.site_prec[i];
            }
        }

        Ok(PassReport {
            free_energy,
            entry_mean: marg.mean,
            tilted_mean,
            tilted_var,
            negative_b,
            skipped: collapsed,
            grad_sparsity,
            grad_spike,
        })
    }

    /// EP free energy of the current state (no state change).
    pub fn free_energy(&mut self) -> Result<f64> {
        Ok(self.pass(None)?.free_energy)
    }

    /// `dF_EP/ds` and `dF_EP/drho` at the current state: minus the summed
    /// tilted log-normalizer gradients.
    pub fn weight_gradients(&mut self) -> Result<(Option<f64>, Option<f64>)> {
        let report = self.pass(None)?;
        Ok((report.grad_sparsity.map(|g| -g), report.grad_spike.map(|g| -g)))
    }

    /// Current marginals (factorizes the system).
    pub fn marginals(&self) -> Result<Marginals> {
        self.refresh()
    }

    /// Run damped sweeps until the marginal means settle.
    pub fn run(&mut self, opts: &EpOptions) -> Result<ReconstructionResult> {
        if !(opts.damping > 0.0 && opts.damping <= 1.0) {
            return Err(Error::invalid(format!("damping {} outside (0,1]", opts.damping)));
        }
        if (opts.infer_beta || opts.infer_smoothness) && self.model.measurement().is_none() {
            return Err(Error::invalid(
                "EM hyperparameter inference needs a measurement model",
            ));
        }
        if opts.infer_smoothness && self.model.laplacian().is_none() {
            return Err(Error::invalid(
                "smoothness inference needs the pixel model",
            ));
        }

        let mut prev_mean: Option<Vec<f64>> = None;
        let mut prev_free_energy = f64::INFINITY;
        let mut trace = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        let mut negative_b_events = 0;
        let mut skipped_site_events = 0;
        let mut last: Option<PassReport> = None;

        for iter in 1..=opts.max_iter {
            iterations = iter;
            let report = self.pass(Some(opts.damping))?;
            negative_b_events += report.negative_b;
            skipped_site_events += report.skipped;

            let max_delta = prev_mean
                .as_ref()
                .map(|pm| {
                    report
                        .entry_mean
                        .iter()
                        .zip(pm)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max)
                })
                .unwrap_or(f64::INFINITY);

            if opts.collect_trace {
                trace.push(SweepDiag {
                    iteration: iter,
                    free_energy: report.free_energy,
                    max_delta,
                    negative_b: report.negative_b,
                    skipped: report.skipped,
                    beta: self.hyper.beta,
                    smoothness: self.hyper.smoothness,
                    sparsity: self.hyper.sparsity,
                    spike: self.hyper.spike,
                });
            }

            if iter > opts.warmup {
                self.update_hypers(opts, &report)?;
                if report.free_energy > prev_free_energy {
                    self.hyper.eta /= 2.0;
                }
            }
            prev_free_energy = report.free_energy;
            prev_mean = Some(report.entry_mean.clone());
            let done = max_delta < opts.tol;
            last = Some(report);
            if done {
                converged = true;
                break;
            }
        }

        let report = last.expect("at least one sweep");
        Ok(ReconstructionResult {
            point: report.tilted_mean.clone(),
            marginal_mean: report.entry_mean,
            marginal_var: report.tilted_var,
            hyper: self.hyper,
            converged,
            iterations,
            free_energy: report.free_energy,
            negative_b_events,
            skipped_site_events,
            trace,
        })
    }

    fn update_hypers(&mut self, opts: &EpOptions, report: &PassReport) -> Result<()> {
        if opts.infer_beta {
            let (a, p) = self.model.measurement().expect("validated");
            let x = &report.tilted_mean[..self.model.n_pixels()];
            let (beta, saturated) = estimate::em_update_beta(a, x, p)?;
            self.hyper.beta = beta;
            self.hyper.beta_saturated = saturated;
        }
        if opts.infer_smoothness {
            let lap = self.model.laplacian().expect("validated");
            let x = &report.tilted_mean[..self.model.n_pixels()];
            let (j, saturated) = estimate::em_update_smoothness(x, lap)?;
            self.hyper.smoothness = j;
            self.hyper.smoothness_saturated = saturated;
        }
        if opts.infer_weights {
            let eta = self.hyper.eta;
            let new_s = report
                .grad_sparsity
                .map(|g| estimate::descend_weight(self.hyper.sparsity, -g, eta));
            let new_rho = report
                .grad_spike
                .map(|g| estimate::descend_weight(self.hyper.spike, -g, eta));
            self.set_weights(new_s, new_rho);
        }
        Ok(())
    }
}

/// Convenience wrapper: build an engine and run it.
pub fn run_ep(
    model: SystemModel,
    priors: Vec<Option<SitePrior>>,
    hyper: HyperState,
    opts: &EpOptions,
) -> Result<ReconstructionResult> {
    EpEngine::new(model, priors, hyper)?.run(opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::interval_moments;
    use crate::sparse::SparseMatrix;
    use faer::Mat;

    fn generic_model(p_diag: &[f64], shift: &[f64]) -> SystemModel {
        let n = p_diag.len();
        let mut precision = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            precision[(i, i)] = p_diag[i];
        }
        SystemModel::generic(GaussianBase { precision, shift: shift.to_vec() })
    }

    #[test]
    fn cavity_of_inactive_site_is_the_marginal() {
        let (cv, cm) = cavity_params(0.5, 0.2, 0.0, f64::INFINITY).unwrap();
        assert_eq!((cv, cm), (0.5, 0.2));
    }

    #[test]
    fn cavity_hand_example() {
        let (cv, cm) = cavity_params(0.5, 0.2, 0.0, 1.0).unwrap();
        assert!((cv - 1.0).abs() < 1e-14);
        assert!((cm - 0.4).abs() < 1e-14);
    }

    #[test]
    fn cavity_collapse_is_signalled() {
        assert!(cavity_params(1.0, 0.0, 0.0, 1.0).is_none());
        assert!(cavity_params(1.0 - 1e-12, 0.0, 0.0, 1.0).is_none());
    }

    #[test]
    fn cavity_matches_two_by_two_inversion() {
        // W_full = P + diag(1/b_0, 1/b_1); removing site 0 must reproduce the
        // marginal of P + diag(0, 1/b_1) on coordinate 0.
        let p = [[2.0, 0.7], [0.7, 1.5]];
        let (b0, b1) = (0.8, 1.3);
        let (a0, a1) = (0.4, -0.2);
        let h = [0.3, 0.9];
        let solve2 = |m: [[f64; 2]; 2], v: [f64; 2]| -> ([f64; 2], [[f64; 2]; 2]) {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let inv = [
                [m[1][1] / det, -m[0][1] / det],
                [-m[1][0] / det, m[0][0] / det],
            ];
            (
                [inv[0][0] * v[0] + inv[0][1] * v[1], inv[1][0] * v[0] + inv[1][1] * v[1]],
                inv,
            )
        };
        let w_full = [[p[0][0] + 1.0 / b0, p[0][1]], [p[1][0], p[1][1] + 1.0 / b1]];
        let eta_full = [h[0] + a0 / b0, h[1] + a1 / b1];
        let (mean_full, inv_full) = solve2(w_full, eta_full);

        // leave-one-out oracle
        let w_loo = [[p[0][0], p[0][1]], [p[1][0], p[1][1] + 1.0 / b1]];
        let eta_loo = [h[0], h[1] + a1 / b1];
        let (mean_loo, inv_loo) = solve2(w_loo, eta_loo);

        let (cv, cm) = cavity_params(inv_full[0][0], mean_full[0], a0, b0).unwrap();
        assert!((cv - inv_loo[0][0]).abs() < 1e-12);
        assert!((cm - mean_loo[0]).abs() < 1e-12);
    }

    #[test]
    fn site_update_examples() {
        // tilted equals cavity: site vanishes
        let up = site_update(
            &TiltedMoments { mean: 0.3, variance: 0.7, log_norm: 0.0 },
            0.7,
            0.3,
        );
        assert!(up.b.is_infinite());
        assert!(!up.clipped);

        // variance = cavity/2, mean = cavity mean: b = cavity_var, a = mean
        let up = site_update(
            &TiltedMoments { mean: 0.3, variance: 0.35, log_norm: 0.0 },
            0.7,
            0.3,
        );
        assert!((up.b - 0.7).abs() < 1e-14);
        assert!((up.a - 0.3).abs() < 1e-14);

        // negative variance request is clipped and flagged
        let up = site_update(
            &TiltedMoments { mean: 0.1, variance: 1.4, log_norm: 0.0 },
            0.7,
            0.0,
        );
        assert!(up.clipped);
        assert_eq!(up.b, SITE_VARIANCE_CAP);
    }

    #[test]
    fn site_update_moment_match_roundtrip() {
        // recombining N(a,b) with the cavity reproduces the tilted moments
        let (cv, cm) = (0.82, -0.37);
        let tilted = TiltedMoments { mean: 0.11, variance: 0.29, log_norm: 0.0 };
        let up = site_update(&tilted, cv, cm);
        let post_var = 1.0 / (1.0 / up.b + 1.0 / cv);
        let post_mean = post_var * (up.a / up.b + cm / cv);
        assert!((post_var - tilted.variance).abs() < 1e-12);
        assert!((post_mean - tilted.mean).abs() < 1e-12);
    }

    #[test]
    fn gaussian_only_run_is_exact_after_one_sweep() {
        let model = generic_model(&[2.0, 4.0, 1.0], &[1.0, -2.0, 0.5]);
        let mut engine = EpEngine::new(model, vec![None; 3], HyperState::default()).unwrap();
        let result = engine.run(&EpOptions::default()).unwrap();
        assert!(result.converged);
        // precision mu = shift componentwise for the diagonal system
        assert!((result.point[0] - 0.5).abs() < 1e-12);
        assert!((result.point[1] + 0.5).abs() < 1e-12);
        assert!((result.point[2] - 0.5).abs() < 1e-12);
        // and no site ever activates
        assert_eq!(result.negative_b_events, 0);
    }

    #[test]
    fn scalar_interval_run_reaches_the_analytic_fixed_point() {
        // scalar base precision p, shift h; interval prior on [0, 1]
        let (p, h) = (4.0, 1.2);
        let model = generic_model(&[p], &[h]);
        let priors = vec![Some(SitePrior::Interval { lo: 0.0, hi: 1.0 })];
        let mut engine = EpEngine::new(model, priors, HyperState::default()).unwrap();
        let opts = EpOptions { damping: 1.0, tol: 1e-12, ..Default::default() };
        let result = engine.run(&opts).unwrap();
        assert!(result.converged);

        // closed-form oracle: cavity is N(h/p, 1/p) independent of the site,
        // so the fixed point is the truncated-Gaussian mean.
        let oracle = interval_moments(h / p, 1.0 / p, 0.0, 1.0).unwrap();
        assert!((result.point[0] - oracle.mean).abs() < 1e-10);
        // moment matching at the fixed point: marginal mean = tilted mean
        assert!((result.marginal_mean[0] - oracle.mean).abs() < 1e-9);
    }

    #[test]
    fn permutation_equivariance() {
        // relabeling coordinates permutes the output identically
        let rows = vec![
            vec![(0, 1.0), (1, 0.4)],
            vec![(1, 1.3), (2, -0.6)],
            vec![(0, 0.2), (2, 0.8)],
        ];
        let a = SparseMatrix::from_rows(rows.clone(), 3).unwrap();
        let p = vec![0.7, 0.1, 0.4];
        let lap = SparseMatrix::from_rows(vec![Vec::new(); 3], 3).unwrap();
        let priors = vec![Some(SitePrior::Interval { lo: 0.0, hi: 1.0 }); 3];
        let opts = EpOptions { tol: 1e-10, ..Default::default() };
        let hyper = HyperState { beta: 2.0, smoothness: 0.0, ..Default::default() };

        let model = SystemModel::pixel(a, p.clone(), lap.clone()).unwrap();
        let base = run_ep(model, priors.clone(), hyper, &opts).unwrap();

        // permutation (0 1 2) -> (2 0 1) of the columns
        let perm = [2usize, 0, 1];
        let permuted_rows: Vec<Vec<(usize, f64)>> = rows
            .iter()
            .map(|row| row.iter().map(|&(c, v)| (perm[c], v)).collect())
            .collect();
        let a2 = SparseMatrix::from_rows(permuted_rows, 3).unwrap();
        let model2 = SystemModel::pixel(a2, p, lap).unwrap();
        let permuted = run_ep(model2, priors, hyper, &opts).unwrap();

        for i in 0..3 {
            assert!(
                (base.point[i] - permuted.point[perm[i]]).abs() < 1e-9,
                "coordinate {i}"
            );
        }
    }

    #[test]
    fn serial_reruns_are_bit_identical() {
        let rows = vec![vec![(0, 1.0), (1, 0.5)], vec![(1, 0.7), (2, 1.1)]];
        let a = SparseMatrix::from_rows(rows, 3).unwrap();
        let p = vec![0.9, 0.3];
        let lap = SparseMatrix::from_rows(vec![Vec::new(); 3], 3).unwrap();
        let priors = vec![Some(SitePrior::Binary { weight: 0.5 }); 3];
        let hyper = HyperState { beta: 5.0, smoothness: 0.0, ..Default::default() };
        let run = |_| {
            let model = SystemModel::pixel(a.clone(), p.clone(), lap.clone()).unwrap();
            run_ep(model, priors.clone(), hyper, &EpOptions::default()).unwrap()
        };
        let r1 = run(());
        let r2 = run(());
        assert_eq!(r1.point, r2.point);
        assert_eq!(r1.iterations, r2.iterations);
    }

    #[test]
    fn free_energy_is_minus_log_zq_without_sites() {
        // no active sites: F = -log Z_Q with
        // Z_Q = (2 pi)^{n/2} |P|^{-1/2} exp(h^T P^-1 h / 2)
        let model = generic_model(&[2.0, 5.0], &[1.0, -1.0]);
        let mut engine = EpEngine::new(model, vec![None, None], HyperState::default()).unwrap();
        let f = engine.free_energy().unwrap();
        let log_zq = 0.5 * 2.0 * LN_TAU - 0.5 * (2.0f64 * 5.0).ln()
            + 0.5 * (1.0 / 2.0 + 1.0 / 5.0);
        assert!((f + log_zq).abs() < 1e-12, "F = {f}, -logZq = {}", -log_zq);
    }
}
