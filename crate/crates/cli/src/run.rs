//! One reconstruction run: method dispatch, priors, metrics.

use std::time::Instant;

use anyhow::{bail, Context, Result};

use tomoep_core::baseline::{
    qp_reconstruct, tv_reconstruct, ConvexProblem, NoiseMode, Regularizer, ResidualForm,
};
use tomoep_core::ep::{run_ep, EpOptions, SweepDiag, SystemModel};
use tomoep_core::estimate::HyperState;
use tomoep_core::geometry::{self, ProjectionSystem};
use tomoep_core::image::{l2_error, error_fraction, Domain, Image, Mask, Metric};
use tomoep_core::SitePrior;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    EpInt,
    EpBin,
    EpSparse,
    EpDiff,
    Qp,
    Tv,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        Ok(match s {
            "ep_int" => Method::EpInt,
            "ep_bin" => Method::EpBin,
            "ep_sparse" => Method::EpSparse,
            "ep_diff" => Method::EpDiff,
            "qp" => Method::Qp,
            "tv" => Method::Tv,
            other => bail!("unknown method {other:?} (ep_int|ep_bin|ep_sparse|ep_diff|qp|tv)"),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::EpInt => "ep_int",
            Method::EpBin => "ep_bin",
            Method::EpSparse => "ep_sparse",
            Method::EpDiff => "ep_diff",
            Method::Qp => "qp",
            Method::Tv => "tv",
        }
    }

    pub fn is_ep(&self) -> bool {
        matches!(self, Method::EpInt | Method::EpBin | Method::EpSparse | Method::EpDiff)
    }
}

/// Everything a reconstruction needs beyond the linear system.
#[derive(Debug, Clone)]
pub struct RunParams {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub warmup: usize,
    /// Noise level the data was simulated at (0 = noiseless); used for the
    /// baselines (known noise) and as the EP beta initializer.
    pub sigma: f64,
    pub beta_init: Option<f64>,
    pub infer_beta: bool,
    pub infer_smoothness: bool,
    pub infer_weights: bool,
    pub smoothness_init: f64,
    pub sparsity_init: f64,
    pub spike_init: f64,
    pub slab_precision: f64,
    pub beta2_ratio: f64,
    pub eta: f64,
    /// Candidate regularizer weights for the baselines; the best-metric run
    /// is reported (requires a truth image when the grid has several values).
    pub qp_weights: Vec<f64>,
    pub tv_weights: Vec<f64>,
    pub tv_residual_norm: bool,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            damping: 0.5,
            tol: 1e-6,
            max_iter: 500,
            warmup: 8,
            sigma: 0.0,
            beta_init: None,
            infer_beta: true,
            infer_smoothness: true,
            infer_weights: true,
            smoothness_init: 1.0,
            sparsity_init: 0.5,
            spike_init: 0.5,
            slab_precision: 1.0,
            beta2_ratio: 1e6,
            eta: 1e-2,
            qp_weights: vec![1.0],
            tv_weights: vec![0.1, 0.03, 0.01],
            tv_residual_norm: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub image: Image,
    pub metric: Option<Metric>,
    pub converged: bool,
    pub iterations: usize,
    pub wall_ms: u128,
    pub beta_hat: f64,
    pub smoothness_hat: f64,
    pub sparsity_hat: f64,
    pub spike_hat: f64,
    pub negative_b_events: usize,
    pub trace: Vec<SweepDiag>,
    /// Regularizer weight of the best baseline run (QP/TV only).
    pub chosen_weight: Option<f64>,
}

/// Compare against the truth with the metric its domain calls for: binary
/// truths count wrong pixels of the 0.5-thresholded estimate, continuous
/// truths use the L2 error.
pub fn metric_against(truth: &Image, estimate: &Image) -> Result<Metric> {
    let m = match truth.domain() {
        Domain::Binary => {
            let bin = if estimate.domain() == Domain::Binary {
                estimate.clone()
            } else {
                estimate.binarize(0.5).context("binarizing estimate")?
            };
            error_fraction(truth, &bin)?
        }
        Domain::Continuous => {
            let cont = if estimate.domain() == Domain::Continuous {
                estimate.clone()
            } else {
                estimate.to_continuous()
            };
            l2_error(truth, &cont)?
        }
    };
    Ok(m)
}

fn ep_initial_beta(params: &RunParams) -> f64 {
    if let Some(b) = params.beta_init {
        return b;
    }
    if params.sigma > 0.0 {
        1.0 / (params.sigma * params.sigma)
    } else {
        1.0
    }
}

/// Run one method on an assembled system.
pub fn run_method(
    method: Method,
    sys: &ProjectionSystem,
    p: &[f64],
    mask: &Mask,
    params: &RunParams,
    truth: Option<&Image>,
    collect_trace: bool,
) -> Result<RunOutput> {
    let start = Instant::now();
    let mut out = match method {
        Method::EpInt | Method::EpBin | Method::EpSparse => {
            run_pixel_ep(method, sys, p, mask, params, collect_trace)?
        }
        Method::EpDiff => run_diff_ep(sys, p, mask, params, collect_trace)?,
        Method::Qp | Method::Tv => run_baseline(method, sys, p, mask, params, truth)?,
    };
    out.wall_ms = start.elapsed().as_millis();
    if let Some(truth) = truth {
        out.metric = Some(metric_against(truth, &out.image)?);
    }
    Ok(out)
}

fn ep_options(params: &RunParams, method: Method, collect_trace: bool) -> EpOptions {
    EpOptions {
        max_iter: params.max_iter,
        tol: params.tol,
        damping: params.damping,
        infer_beta: params.infer_beta,
        infer_smoothness: params.infer_smoothness && method != Method::EpDiff,
        infer_weights: params.infer_weights && method != Method::EpInt,
        warmup: params.warmup,
        collect_trace,
    }
}

fn hyper_init(params: &RunParams) -> HyperState {
    HyperState {
        beta: ep_initial_beta(params),
        smoothness: params.smoothness_init,
        sparsity: params.sparsity_init,
        spike: params.spike_init,
        slab_precision: params.slab_precision,
        eta: params.eta,
        ..HyperState::default()
    }
}

fn run_pixel_ep(
    method: Method,
    sys: &ProjectionSystem,
    p: &[f64],
    mask: &Mask,
    params: &RunParams,
    collect_trace: bool,
) -> Result<RunOutput> {
    let n = mask.pixel_count();
    let prior = match method {
        Method::EpInt => SitePrior::Interval { lo: 0.0, hi: 1.0 },
        Method::EpBin => SitePrior::Binary { weight: params.sparsity_init },
        Method::EpSparse => {
            SitePrior::Sparse { weight: params.sparsity_init, lo: 0.0, hi: 1.0 }
        }
        _ => unreachable!(),
    };
    let lap = geometry::laplacian(mask);
    let model = SystemModel::pixel(sys.matrix.clone(), p.to_vec(), lap)?;
    let result = run_ep(
        model,
        vec![Some(prior); n],
        hyper_init(params),
        &ep_options(params, method, collect_trace),
    )?;
    let image = Image::from_masked_values_clamped(mask.clone(), &result.point[..n])?;
    Ok(RunOutput {
        image,
        metric: None,
        converged: result.converged,
        iterations: result.iterations,
        wall_ms: 0,
        beta_hat: result.hyper.beta,
        smoothness_hat: result.hyper.smoothness,
        sparsity_hat: result.hyper.sparsity,
        spike_hat: result.hyper.spike,
        negative_b_events: result.negative_b_events,
        trace: result.trace,
        chosen_weight: None,
    })
}

fn run_diff_ep(
    sys: &ProjectionSystem,
    p: &[f64],
    mask: &Mask,
    params: &RunParams,
    collect_trace: bool,
) -> Result<RunOutput> {
    let n = mask.pixel_count();
    let edges = geometry::neighbor_edges(mask);
    let e = edges.len();
    let model =
        SystemModel::difference(sys.matrix.clone(), p.to_vec(), edges, params.beta2_ratio)?;
    let mut priors: Vec<Option<SitePrior>> =
        vec![Some(SitePrior::Interval { lo: 0.0, hi: 1.0 }); n];
    priors.extend(vec![
        Some(SitePrior::Difference {
            spike: params.spike_init,
            slab_precision: params.slab_precision,
        });
        e
    ]);
    let result = run_ep(
        model,
        priors,
        hyper_init(params),
        &ep_options(params, Method::EpDiff, collect_trace),
    )?;
    let image = Image::from_masked_values_clamped(mask.clone(), &result.point[..n])?;
    Ok(RunOutput {
        image,
        metric: None,
        converged: result.converged,
        iterations: result.iterations,
        wall_ms: 0,
        beta_hat: result.hyper.beta,
        smoothness_hat: result.hyper.smoothness,
        sparsity_hat: result.hyper.sparsity,
        spike_hat: result.hyper.spike,
        negative_b_events: result.negative_b_events,
        trace: result.trace,
        chosen_weight: None,
    })
}

fn run_baseline(
    method: Method,
    sys: &ProjectionSystem,
    p: &[f64],
    mask: &Mask,
    params: &RunParams,
    truth: Option<&Image>,
) -> Result<RunOutput> {
    let weights = match method {
        Method::Qp => &params.qp_weights,
        Method::Tv => &params.tv_weights,
        _ => unreachable!(),
    };
    if weights.is_empty() {
        bail!("empty weight grid for {}", method.as_str());
    }
    if weights.len() > 1 && truth.is_none() {
        bail!("a weight grid needs a truth image to select the best run");
    }
    let noise_mode = if params.sigma > 0.0 {
        NoiseMode::Penalized { beta: 1.0 / (params.sigma * params.sigma) }
    } else {
        NoiseMode::Constrained
    };
    let mut best: Option<(f64, RunOutput)> = None;
    for &w in weights {
        let regularizer = match method {
            Method::Qp => Regularizer::Laplacian { weight: w },
            Method::Tv => Regularizer::Tv { weight: w },
            _ => unreachable!(),
        };
        let mut prob = ConvexProblem::new(
            sys.clone(),
            p.to_vec(),
            mask.clone(),
            regularizer,
            noise_mode,
        )
        .map_err(anyhow::Error::from)?;
        prob.residual_form = if params.tv_residual_norm {
            ResidualForm::Norm
        } else {
            ResidualForm::SquaredNorm
        };
        prob.opts.max_iter = params.max_iter.max(20_000);
        prob.opts.tol = 1e-8;
        let (image, info) = match method {
            Method::Qp => qp_reconstruct(&prob)?,
            Method::Tv => tv_reconstruct(&prob)?,
            _ => unreachable!(),
        };
        let out = RunOutput {
            image,
            metric: None,
            converged: info.converged,
            iterations: info.iterations,
            wall_ms: 0,
            beta_hat: f64::NAN,
            smoothness_hat: f64::NAN,
            sparsity_hat: f64::NAN,
            spike_hat: f64::NAN,
            negative_b_events: 0,
            trace: Vec::new(),
            chosen_weight: Some(w),
        };
        let score = match truth {
            Some(t) => metric_against(t, &out.image)?.value,
            None => 0.0,
        };
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, out));
        }
    }
    Ok(best.expect("nonempty grid").1)
}
