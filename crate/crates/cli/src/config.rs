//! TOML experiment configuration. Command-line flags override file values.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::run::RunParams;

/// Knobs shared by `reconstruct` and the per-run section of `sweep`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunTable {
    pub damping: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub warmup: Option<usize>,
    pub beta: Option<f64>,
    pub infer_beta: Option<bool>,
    pub infer_smoothness: Option<bool>,
    pub infer_weights: Option<bool>,
    pub smoothness: Option<f64>,
    pub sparsity: Option<f64>,
    pub spike: Option<f64>,
    pub slab_precision: Option<f64>,
    pub beta2_ratio: Option<f64>,
    pub eta: Option<f64>,
    pub qp_weights: Option<Vec<f64>>,
    pub tv_weights: Option<Vec<f64>>,
    pub tv_residual_norm: Option<bool>,
}

impl RunTable {
    /// Overlay `self` onto defaults; `Some` fields win.
    pub fn apply(&self, params: &mut RunParams) {
        macro_rules! take {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { params.$target = v; })*
            };
        }
        take! {
            damping => damping,
            tol => tol,
            max_iter => max_iter,
            warmup => warmup,
            infer_beta => infer_beta,
            infer_smoothness => infer_smoothness,
            infer_weights => infer_weights,
            smoothness => smoothness_init,
            sparsity => sparsity_init,
            spike => spike_init,
            slab_precision => slab_precision,
            beta2_ratio => beta2_ratio,
            eta => eta,
            qp_weights => qp_weights,
            tv_weights => tv_weights,
            tv_residual_norm => tv_residual_norm,
        }
        if self.beta.is_some() {
            params.beta_init = self.beta;
        }
    }

    /// Merge another table on top of this one (its `Some` fields win).
    pub fn overlay(&mut self, other: &RunTable) {
        macro_rules! merge {
            ($($field:ident),* $(,)?) => {
                $(if other.$field.is_some() { self.$field = other.$field.clone(); })*
            };
        }
        merge! {
            damping, tol, max_iter, warmup, beta, infer_beta, infer_smoothness,
            infer_weights, smoothness, sparsity, spike, slab_precision,
            beta2_ratio, eta, qp_weights, tv_weights, tv_residual_norm,
        }
    }
}

/// Image source of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    Binary,
    Gray,
    SheppLogan,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Methods to run at every grid point.
    pub methods: Vec<String>,
    pub side: usize,
    pub image: ImageKind,
    /// Cluster parameter of the random phantoms (ignored for shepp_logan).
    pub clusters: Option<usize>,
    /// `length` or `indicator`; defaults to indicator for binary images.
    pub entry_mode: Option<String>,
    /// Sampling rates `M/N`.
    pub alphas: Vec<f64>,
    /// Noise-to-signal ratios `sigma/L` (0 = noiseless).
    pub sigma_over_side: Vec<f64>,
    /// Replications per grid point.
    pub replications: usize,
    pub seed_base: u64,
    pub threads: Option<usize>,
    #[serde(default)]
    pub run: RunTable,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<SweepConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading sweep config {path:?}"))?;
        let cfg: SweepConfig = toml::from_str(&text).context("parsing sweep config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            bail!("sweep needs at least one method");
        }
        if self.alphas.is_empty() || self.sigma_over_side.is_empty() {
            bail!("alpha and sigma_over_side grids must be nonempty");
        }
        if self.alphas.iter().any(|&a| a <= 0.0) {
            bail!("sampling rates must be positive");
        }
        if self.sigma_over_side.iter().any(|&s| s < 0.0) {
            bail!("noise ratios must be nonnegative");
        }
        if self.replications == 0 {
            bail!("replications must be >= 1");
        }
        if matches!(self.image, ImageKind::Binary | ImageKind::Gray) && self.clusters.is_none() {
            bail!("random phantoms need the clusters parameter");
        }
        Ok(())
    }
}

pub fn load_run_table(path: &Path) -> Result<RunTable> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading config {path:?}"))?;
    toml::from_str(&text).context("parsing run config")
}
