//! Tomographic image reconstruction by Expectation Propagation with
//! non-log-concave priors, plus phantom/projection simulation, in-loop
//! hyperparameter inference, and convex baselines (box-constrained QP and
//! total variation).
//!
//! The crate is organized by pipeline stage:
//!
//! - [`image`] / [`phantom`]: masked pixel images, metrics, generators;
//! - [`geometry`] / [`sparse`]: rays, projection matrices, noise;
//! - [`priors`]: tilted-distribution moment kernels;
//! - [`ep`]: the EP engine (Gaussian base, damped moment-matching sweeps,
//!   free energy);
//! - [`estimate`]: EM and gradient updates for the hyperparameters;
//! - [`baseline`]: self-contained QP and TV solvers;
//! - [`io`]: image, matrix, and sinogram file formats.

pub mod baseline;
pub mod ep;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod image;
pub mod io;
pub mod phantom;
pub mod priors;
pub mod rng;
pub mod sparse;

pub use error::{Error, Result};
pub use image::{Domain, Image, Mask, Metric, MetricKind};
pub use priors::{SitePrior, TiltedMoments};

/// Cap the dense-kernel parallelism (`0` = all cores). One thread gives
/// bit-identical reruns; multi-threaded factorizations are deterministic per
/// thread count but may differ from the serial reduction order.
pub fn set_parallelism(threads: usize) {
    let p = match threads {
        1 => faer::Parallelism::None,
        n => faer::Parallelism::Rayon(n),
    };
    faer::set_global_parallelism(p);
}
