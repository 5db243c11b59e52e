//! Experiment command line: phantom generation, projection simulation,
//! reconstruction, metrics, and sweep grids.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

mod config;
mod run;
mod sweep;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use tomoep_core::geometry::{self, EntryMode, ProjectionSystem, Ray};
use tomoep_core::image::{Domain, Image, Mask};
use tomoep_core::{io as tio, phantom, Error as CoreError};

use config::{load_run_table, RunTable, SweepConfig};
use run::{metric_against, run_method, Method, RunParams};

#[derive(Parser)]
#[command(name = "tomoep", version, about = "Tomographic reconstruction by expectation propagation, with convex baselines")]
struct Cli {
    /// Dense-kernel thread count (1 = serial reference mode).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom image.
    Phantom(PhantomArgs),
    /// Trace rays against an image's mask and write the projection system.
    Project(ProjectArgs),
    /// Reconstruct an image from a projection system.
    Reconstruct(ReconstructArgs),
    /// Compare two images.
    Metrics(MetricsArgs),
    /// Run a grid of experiments from a TOML config.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Output image path (.pgm writes 8-bit PGM + sidecar, else raw f64).
    #[arg(long)]
    out: PathBuf,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 50)]
    side: usize,
    /// Cluster parameter p (p^2 random centroids).
    #[arg(long, default_value_t = 6)]
    clusters: usize,
    /// binary | gray
    #[arg(long, default_value = "binary")]
    mode: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Generate the Shepp-Logan head phantom instead of random clusters.
    #[arg(long)]
    shepp_logan: bool,
}

#[derive(Args)]
struct ProjectArgs {
    /// Input image (defines the mask and the truth values).
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out_matrix: PathBuf,
    #[arg(long)]
    out_sinogram: PathBuf,
    /// Sampling rate alpha = M/N (random rays).
    #[arg(long)]
    alpha: Option<f64>,
    /// Explicit ray count (random rays).
    #[arg(long)]
    num_rays: Option<usize>,
    /// Parallel-beam geometry instead of random rays.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    angles: Option<usize>,
    #[arg(long)]
    rays_per_angle: Option<usize>,
    /// length | indicator (defaults to indicator for binary images).
    #[arg(long)]
    entry_mode: Option<String>,
    /// Additive Gaussian noise standard deviation.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Noise parameterized as sigma / side.
    #[arg(long)]
    noise_sigma_over_side: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    sinogram: PathBuf,
    /// ep_int | ep_bin | ep_sparse | ep_diff | qp | tv
    #[arg(long)]
    method: String,
    /// Output image path.
    #[arg(long)]
    out: PathBuf,
    /// Image side length (inferred from --truth when omitted).
    #[arg(long)]
    side: Option<usize>,
    /// Ground truth for metric reporting.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// TOML config with solver settings (flags win over file values).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-sweep diagnostics CSV (EP methods).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Threshold the reconstruction at 0.5 before writing.
    #[arg(long)]
    binarize: bool,
    /// Noise level the data was acquired at (baselines assume it known).
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    smoothness: Option<f64>,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    spike: Option<f64>,
    #[arg(long)]
    slab_precision: Option<f64>,
    #[arg(long)]
    beta2_ratio: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    infer_beta: Option<bool>,
    #[arg(long)]
    infer_smoothness: Option<bool>,
    #[arg(long)]
    infer_weights: Option<bool>,
    /// QP regularizer weight grid (comma separated; best metric kept).
    #[arg(long, value_delimiter = ',')]
    qp_weights: Option<Vec<f64>>,
    /// TV regularizer weight grid (comma separated; best metric kept).
    #[arg(long, value_delimiter = ',')]
    tv_weights: Option<Vec<f64>>,
    /// Use the exact ||Ax-p||_2 residual in the TV objective.
    #[arg(long)]
    tv_residual_norm: Option<bool>,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    estimate: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn read_image(path: &Path) -> Result<Image> {
    let img = if path.extension().is_some_and(|e| e == "pgm") {
        tio::read_pgm(path)?
    } else {
        tio::read_raw(path)?
    };
    Ok(img)
}

fn write_image(img: &Image, path: &Path) -> Result<()> {
    if path.extension().is_some_and(|e| e == "pgm") {
        tio::write_pgm(img, path)?;
    } else {
        tio::write_raw(img, path)?;
    }
    Ok(())
}

fn cmd_phantom(args: &PhantomArgs) -> Result<()> {
    let img = if args.shepp_logan {
        phantom::generate_shepp_logan(args.side)?
    } else {
        let mode = match args.mode.as_str() {
            "binary" => Domain::Binary,
            "gray" => Domain::Continuous,
            other => bail!("unknown phantom mode {other:?} (binary|gray)"),
        };
        phantom::generate_random_phantom(args.side, args.clusters, args.seed, mode)?
    };
    write_image(&img, &args.out)?;
    println!(
        "phantom side={} domain={} in_mask_pixels={} -> {}",
        img.side(),
        img.domain().as_str(),
        img.mask().pixel_count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_project(args: &ProjectArgs) -> Result<()> {
    let img = read_image(&args.image)?;
    let mask = img.mask();
    let n = mask.pixel_count();

    let mode = match &args.entry_mode {
        Some(s) => EntryMode::parse(s)?,
        None => match img.domain() {
            Domain::Binary => EntryMode::Indicator,
            Domain::Continuous => EntryMode::Length,
        },
    };

    let rays: Vec<Ray> = if args.parallel {
        let (Some(angles), Some(rpa)) = (args.angles, args.rays_per_angle) else {
            bail!("--parallel needs --angles and --rays-per-angle");
        };
        geometry::generate_parallel_rays(angles, rpa, img.side())
    } else {
        let m = match (args.num_rays, args.alpha) {
            (Some(m), _) => m,
            (None, Some(alpha)) => {
                if alpha <= 0.0 {
                    bail!("alpha must be positive");
                }
                (alpha * n as f64).round() as usize
            }
            (None, None) => bail!("give --alpha, --num-rays, or --parallel"),
        };
        geometry::generate_random_rays(m, mask, args.seed)
    };

    let sys = geometry::assemble_system(&rays, mask, mode)?;
    let clean = geometry::project(&sys, &img)?;
    let sigma = match (args.noise_sigma, args.noise_sigma_over_side) {
        (Some(s), _) => s,
        (None, Some(r)) => r * img.side() as f64,
        (None, None) => 0.0,
    };
    let p = geometry::add_noise(&clean, sigma, args.seed.wrapping_add(0x517cc1b727220a95))?;

    tio::write_sparse(&sys.matrix, mode, &args.out_matrix)?;
    tio::write_sinogram(&p, &args.out_sinogram)?;
    println!(
        "projected M={} rays (alpha={:.4}) mode={} sigma={} -> {}, {}",
        sys.matrix.nrows(),
        sys.matrix.nrows() as f64 / n as f64,
        mode.as_str(),
        sigma,
        args.out_matrix.display(),
        args.out_sinogram.display()
    );
    Ok(())
}

fn side_for_pixel_count(n: usize, hint: Option<usize>) -> Result<usize> {
    if let Some(side) = hint {
        let mask = Mask::circular(side);
        if mask.pixel_count() == n {
            return Ok(side);
        }
        let full = Mask::full(side);
        if full.pixel_count() == n {
            return Ok(side);
        }
        bail!("--side {side} has {} mask pixels, matrix has {n} columns", mask.pixel_count());
    }
    for side in 2..=4096 {
        if Mask::circular(side).pixel_count() == n {
            return Ok(side);
        }
    }
    bail!("cannot infer the image side from {n} columns; pass --side");
}

fn cmd_reconstruct(args: &ReconstructArgs) -> Result<()> {
    let (matrix, entry_mode) = tio::read_sparse(&args.matrix)?;
    let p = tio::read_sinogram(&args.sinogram)?;
    if p.len() != matrix.nrows() {
        bail!("sinogram has {} entries, matrix has {} rows", p.len(), matrix.nrows());
    }
    let method = Method::parse(&args.method)?;

    let truth = args.truth.as_ref().map(|t| read_image(t)).transpose()?;
    let side = match &truth {
        Some(t) => t.side(),
        None => side_for_pixel_count(matrix.ncols(), args.side)?,
    };
    let mask = if Mask::circular(side).pixel_count() == matrix.ncols() {
        Mask::circular(side)
    } else {
        Mask::full(side)
    };
    if mask.pixel_count() != matrix.ncols() {
        bail!("mask for side {side} has {} pixels, matrix has {} columns",
            mask.pixel_count(), matrix.ncols());
    }

    // file config first, then flags
    let mut table = match &args.config {
        Some(path) => load_run_table(path)?,
        None => RunTable::default(),
    };
    let flags = RunTable {
        damping: args.damping,
        tol: args.tol,
        max_iter: args.max_iter,
        warmup: None,
        beta: args.beta,
        infer_beta: args.infer_beta,
        infer_smoothness: args.infer_smoothness,
        infer_weights: args.infer_weights,
        smoothness: args.smoothness,
        sparsity: args.sparsity,
        spike: args.spike,
        slab_precision: args.slab_precision,
        beta2_ratio: args.beta2_ratio,
        eta: args.eta,
        qp_weights: args.qp_weights.clone(),
        tv_weights: args.tv_weights.clone(),
        tv_residual_norm: args.tv_residual_norm,
    };
    table.overlay(&flags);
    let mut params = RunParams::default();
    if let Some(s) = args.sigma {
        params.sigma = s;
    }
    table.apply(&mut params);

    let sys = ProjectionSystem { matrix, entry_mode };
    let out = run_method(
        method,
        &sys,
        &p,
        &mask,
        &params,
        truth.as_ref(),
        args.diagnostics.is_some(),
    )?;

    let image = if args.binarize && out.image.domain() == Domain::Continuous {
        out.image.binarize(0.5)?
    } else {
        out.image.clone()
    };
    write_image(&image, &args.out)?;

    if let Some(diag_path) = &args.diagnostics {
        let mut f = std::fs::File::create(diag_path)?;
        writeln!(f, "iteration,free_energy,max_delta,negative_b_count,skipped,beta,J,s,rho")?;
        for d in &out.trace {
            writeln!(
                f,
                "{},{:e},{:e},{},{},{:e},{:e},{:e},{:e}",
                d.iteration,
                d.free_energy,
                d.max_delta,
                d.negative_b,
                d.skipped,
                d.beta,
                d.smoothness,
                d.sparsity,
                d.spike
            )?;
        }
    }

    println!(
        "method={} converged={} iterations={} wall_ms={} negative_b={}",
        method.as_str(),
        out.converged,
        out.iterations,
        out.wall_ms,
        out.negative_b_events
    );
    if method.is_ep() {
        println!(
            "beta_hat={:.6e} J_hat={:.6e} s_hat={:.6} rho_hat={:.6}",
            out.beta_hat, out.smoothness_hat, out.sparsity_hat, out.spike_hat
        );
    }
    if let Some(w) = out.chosen_weight {
        println!("chosen_weight={w}");
    }
    if let Some(metric) = out.metric {
        println!("{}={:.6e}", metric.kind.as_str(), metric.value);
    }
    Ok(())
}

fn cmd_metrics(args: &MetricsArgs) -> Result<()> {
    let truth = read_image(&args.truth)?;
    let estimate = read_image(&args.estimate)?;
    let metric = metric_against(&truth, &estimate)?;
    println!("{}={:.12e}", metric.kind.as_str(), metric.value);
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = SweepConfig::load(&args.config)?;
    if let Some(threads) = cfg.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().ok();
    }
    let records = sweep::run_sweep(&cfg, &args.out_dir)?;
    let failed = records.iter().filter(|r| r.metric_kind == "failed").count();
    println!(
        "sweep complete: {} records ({failed} failed) -> {}",
        records.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        tomoep_core::set_parallelism(threads);
    }
    let result = match &cli.command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Project(a) => cmd_project(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let numerical = err
                .chain()
                .any(|c| matches!(c.downcast_ref::<CoreError>(), Some(CoreError::Numerical(_))));
            if numerical {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
