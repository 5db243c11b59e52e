//! Sweep harness: Cartesian grid of (method, alpha, sigma/L, seed), one
//! record per run, plus aggregate summaries.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use rayon::prelude::*;

use tomoep_core::geometry::{self, EntryMode};
use tomoep_core::image::{Domain, Image};
use tomoep_core::phantom;

use crate::config::{ImageKind, SweepConfig};
use crate::run::{run_method, Method, RunParams};

/// Seed streams of one replication are decorrelated by fixed offsets.
const RAY_SEED_OFFSET: u64 = 0x9e3779b97f4a7c15;
const NOISE_SEED_OFFSET: u64 = 0x2545f4914f6cdd1d;

#[derive(Debug, Clone)]
pub struct SweepRecord {
    pub method: String,
    pub alpha: f64,
    pub sigma_over_side: f64,
    pub seed: u64,
    pub metric_kind: String,
    pub metric_value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub wall_ms: u128,
    pub beta_hat: f64,
    pub smoothness_hat: f64,
    pub sparsity_hat: f64,
    pub spike_hat: f64,
}

pub const RECORD_HEADER: &str =
    "method,alpha,sigma_over_L,seed,metric_kind,metric_value,converged,iters,wall_ms,beta_hat,J_hat,s_hat,rho_hat";

impl SweepRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:e},{},{},{},{:e},{:e},{:e},{:e}",
            self.method,
            self.alpha,
            self.sigma_over_side,
            self.seed,
            self.metric_kind,
            self.metric_value,
            self.converged as u8,
            self.iterations,
            self.wall_ms,
            self.beta_hat,
            self.smoothness_hat,
            self.sparsity_hat,
            self.spike_hat,
        )
    }
}

pub fn generate_truth(cfg: &SweepConfig, seed: u64) -> Result<Image> {
    Ok(match cfg.image {
        ImageKind::Binary => {
            phantom::generate_random_phantom(cfg.side, cfg.clusters.unwrap(), seed, Domain::Binary)?
        }
        ImageKind::Gray => phantom::generate_random_phantom(
            cfg.side,
            cfg.clusters.unwrap(),
            seed,
            Domain::Continuous,
        )?,
        ImageKind::SheppLogan => phantom::generate_shepp_logan(cfg.side)?,
    })
}

fn entry_mode(cfg: &SweepConfig) -> Result<EntryMode> {
    match cfg.entry_mode.as_deref() {
        Some(s) => Ok(EntryMode::parse(s)?),
        None => Ok(match cfg.image {
            ImageKind::Binary => EntryMode::Indicator,
            _ => EntryMode::Length,
        }),
    }
}

/// One grid-point run: phantom, rays, projection, noise, reconstruction.
pub fn execute_run(
    cfg: &SweepConfig,
    method: Method,
    alpha: f64,
    sigma_over_side: f64,
    seed: u64,
) -> Result<SweepRecord> {
    let truth = generate_truth(cfg, seed)?;
    let mask = truth.mask().clone();
    let n = mask.pixel_count();
    let m = (alpha * n as f64).round().max(1.0) as usize;
    let rays = geometry::generate_random_rays(m, &mask, seed.wrapping_add(RAY_SEED_OFFSET));
    let sys = geometry::assemble_system(&rays, &mask, entry_mode(cfg)?)?;
    let clean = geometry::project(&sys, &truth)?;
    let sigma = sigma_over_side * cfg.side as f64;
    let p = geometry::add_noise(&clean, sigma, seed.wrapping_add(NOISE_SEED_OFFSET))?;

    let mut params = RunParams { sigma, ..RunParams::default() };
    cfg.run.apply(&mut params);

    let out = run_method(method, &sys, &p, &mask, &params, Some(&truth), false)?;
    let metric = out.metric.expect("truth given");
    Ok(SweepRecord {
        method: method.as_str().to_string(),
        alpha,
        sigma_over_side,
        seed,
        metric_kind: metric.kind.as_str().to_string(),
        metric_value: metric.value,
        converged: out.converged,
        iterations: out.iterations,
        wall_ms: out.wall_ms,
        beta_hat: out.beta_hat,
        smoothness_hat: out.smoothness_hat,
        sparsity_hat: out.sparsity_hat,
        spike_hat: out.spike_hat,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

pub fn run_sweep(cfg: &SweepConfig, out_dir: &Path) -> Result<Vec<SweepRecord>> {
    fs::create_dir_all(out_dir)?;
    let methods: Vec<Method> =
        cfg.methods.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?;

    // grid point index g, replication r: seed = base + g * reps + r, so no
    // seed is reused across grid points within one sweep
    let mut jobs = Vec::new();
    let mut grid_index = 0u64;
    for &alpha in &cfg.alphas {
        for &sigma in &cfg.sigma_over_side {
            for r in 0..cfg.replications {
                let seed = cfg
                    .seed_base
                    .wrapping_add(grid_index * cfg.replications as u64 + r as u64);
                for &method in &methods {
                    jobs.push((method, alpha, sigma, seed));
                }
            }
            grid_index += 1;
        }
    }

    let records: Vec<SweepRecord> = jobs
        .par_iter()
        .map(|&(method, alpha, sigma, seed)| {
            execute_run(cfg, method, alpha, sigma, seed).unwrap_or_else(|err| {
                eprintln!(
                    "run failed (method={} alpha={alpha} sigma/L={sigma} seed={seed}): {err:#}",
                    method.as_str()
                );
                SweepRecord {
                    method: method.as_str().to_string(),
                    alpha,
                    sigma_over_side: sigma,
                    seed,
                    metric_kind: "failed".to_string(),
                    metric_value: f64::NAN,
                    converged: false,
                    iterations: 0,
                    wall_ms: 0,
                    beta_hat: f64::NAN,
                    smoothness_hat: f64::NAN,
                    sparsity_hat: f64::NAN,
                    spike_hat: f64::NAN,
                }
            })
        })
        .collect();

    write_records(cfg, &records, &out_dir.join("records.csv"))?;
    write_summary(&records, &out_dir.join("summary.csv"))?;
    fs::write(
        out_dir.join("config_echo.toml"),
        toml::to_string_pretty(cfg).context("serializing config echo")?,
    )?;
    Ok(records)
}

pub fn write_records(cfg: &SweepConfig, records: &[SweepRecord], path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    // embedded config echo: the sweep is re-runnable from this header
    for line in toml::to_string_pretty(cfg)?.lines() {
        writeln!(out, "# {line}")?;
    }
    writeln!(
        out,
        "# units: alpha = M/N, sigma_over_L = noise std / image side, metric_value = error fraction (binary) or L2/N (continuous), wall_ms = milliseconds"
    )?;
    writeln!(out, "{RECORD_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.to_csv_line())?;
    }
    Ok(())
}

pub fn write_summary(records: &[SweepRecord], path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(
        out,
        "method,alpha,sigma_over_L,metric_kind,n,mean,std,n_converged,mean_converged,std_converged"
    )?;
    let mut keys: Vec<(String, f64, f64)> = records
        .iter()
        .map(|r| (r.method.clone(), r.alpha, r.sigma_over_side))
        .collect();
    keys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    keys.dedup();
    for (method, alpha, sigma) in keys {
        let group: Vec<&SweepRecord> = records
            .iter()
            .filter(|r| r.method == method && r.alpha == alpha && r.sigma_over_side == sigma)
            .collect();
        let all: Vec<f64> = group.iter().map(|r| r.metric_value).collect();
        let conv: Vec<f64> =
            group.iter().filter(|r| r.converged).map(|r| r.metric_value).collect();
        let (mean, std) = mean_std(&all);
        let (mean_c, std_c) = mean_std(&conv);
        let kind = group
            .iter()
            .map(|r| r.metric_kind.as_str())
            .find(|k| *k != "failed")
            .unwrap_or("failed");
        writeln!(
            out,
            "{method},{alpha},{sigma},{kind},{},{mean:e},{std:e},{},{mean_c:e},{std_c:e}",
            all.len(),
            conv.len(),
        )?;
    }
    Ok(())
}
