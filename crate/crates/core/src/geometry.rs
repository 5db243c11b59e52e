//! Measurement rays, ray-pixel intersection lengths, projection matrices,
//! and simulated noisy projections.
//!
//! A ray is parameterized by an angle `theta` in `[0, pi)` and a signed
//! perpendicular offset `t` from the mask centre: it passes through
//! `C + t * (-sin theta, cos theta)` with direction `(cos theta, sin theta)`.
//!
//! Rays are clipped to the mask disk of radius `L/2` (intersected with the
//! pixel area) before traversal. Traversal is Siddon-style: crossing
//! parameters with the grid planes are merged and each segment is attributed
//! to the pixel containing its midpoint; corner touches produce zero-length
//! segments and are discarded. Chord pieces that fall in out-of-mask pixels
//! near the rim are folded into the nearest in-mask segment along the ray,
//! so the weights of a row always sum exactly to the clipped chord length
//! and no out-of-mask pixel acquires a column; interior pixels keep their
//! exact intersection lengths (at most sqrt(2)), rim pixels may carry the
//! folded slivers.

use crate::error::{Error, Result};
use crate::image::{ClipRegion, Image, Mask};
use crate::rng;
use crate::sparse::SparseMatrix;

/// Segments (and merge dust) shorter than this are discarded.
const SEGMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    /// Angle in radians, `[0, pi)`.
    pub angle: f64,
    /// Signed perpendicular offset from the mask centre, pixel units.
    pub offset: f64,
}

/// Projection matrix entry convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryMode {
    /// Entries are ray-pixel intersection lengths in pixel units.
    Length,
    /// Entries are 1 where the ray crosses the pixel, 0 elsewhere.
    Indicator,
}

impl EntryMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EntryMode::Length => "length",
            EntryMode::Indicator => "indicator",
        }
    }

    pub fn parse(s: &str) -> Result<EntryMode> {
        match s {
            "length" => Ok(EntryMode::Length),
            "indicator" => Ok(EntryMode::Indicator),
            other => Err(Error::Format(format!("unknown entry mode {other:?}"))),
        }
    }
}

/// Assembled measurement operator over in-mask pixel columns.
#[derive(Debug, Clone)]
pub struct ProjectionSystem {
    pub matrix: SparseMatrix,
    pub entry_mode: EntryMode,
}

impl ProjectionSystem {
    pub fn num_rays(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_pixels(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Clip interval `(s0, s1)` of a ray against the mask's clip region
/// intersected with the pixel area, in the ray's arc-length parameter
/// centred on the perpendicular foot point.
fn clip_interval(ray: &Ray, mask: &Mask) -> Option<(f64, f64)> {
    let (qx, qy, dx, dy) = ray_point_dir(ray, mask);
    let (box_lo, box_hi) = (-0.5, mask.side() as f64 - 0.5);
    let mut s0 = f64::NEG_INFINITY;
    let mut s1 = f64::INFINITY;
    if let ClipRegion::Disk { radius, .. } = mask.clip_region() {
        let half2 = radius * radius - ray.offset * ray.offset;
        if half2 <= SEGMENT_EPS {
            return None;
        }
        let half = half2.sqrt();
        s0 = -half;
        s1 = half;
    }
    for (q, d) in [(qx, dx), (qy, dy)] {
        if d.abs() < 1e-15 {
            if q < box_lo || q > box_hi {
                return None;
            }
        } else {
            let (a, b) = ((box_lo - q) / d, (box_hi - q) / d);
            s0 = s0.max(a.min(b));
            s1 = s1.min(a.max(b));
        }
    }
    if s1 - s0 <= SEGMENT_EPS {
        None
    } else {
        Some((s0, s1))
    }
}

fn ray_point_dir(ray: &Ray, mask: &Mask) -> (f64, f64, f64, f64) {
    let (cx, cy) = mask.center();
    let (sin, cos) = ray.angle.sin_cos();
    // foot of the perpendicular from the centre
    (cx - ray.offset * sin, cy + ray.offset * cos, cos, sin)
}

/// Trace a ray through the mask. Returns `(column, weight)` pairs ordered
/// along the ray; columns index in-mask pixels. In length mode the weights
/// sum to the clipped chord length exactly; in indicator mode every crossed
/// pixel gets weight 1.
pub fn trace_ray(ray: &Ray, mask: &Mask, mode: EntryMode) -> Result<Vec<(usize, f64)>> {
    let side = mask.side() as isize;
    let (s0, s1) = clip_interval(ray, mask).ok_or(Error::EmptyRay {
        angle: ray.angle,
        offset: ray.offset,
    })?;
    let (qx, qy, dx, dy) = ray_point_dir(ray, mask);

    let mut params = Vec::with_capacity(2 * mask.side() + 2);
    params.push(s0);
    params.push(s1);
    for (q, d) in [(qx, dx), (qy, dy)] {
        if d.abs() < 1e-15 {
            continue;
        }
        for m in 0..=side {
            let plane = m as f64 - 0.5;
            let s = (plane - q) / d;
            if s > s0 && s < s1 {
                params.push(s);
            }
        }
    }
    params.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut entries: Vec<(usize, f64)> = Vec::new();
    let mut pending = 0.0; // cover dust not attributable to an in-mask pixel
    let mut prev = params[0];
    for &s in &params[1..] {
        let len = s - prev;
        if len <= SEGMENT_EPS {
            continue;
        }
        let mid = (prev + s) / 2.0;
        prev = s;
        let px = qx + mid * dx;
        let py = qy + mid * dy;
        let (r, c) = (py.round() as isize, px.round() as isize);
        let col = if r >= 0 && r < side && c >= 0 && c < side {
            mask.column(r as usize, c as usize)
        } else {
            None
        };
        match col {
            Some(col) => {
                if let Some(last) = entries.last_mut().filter(|e| e.0 == col) {
                    last.1 += len + pending;
                } else {
                    entries.push((col, len + pending));
                }
                pending = 0.0;
            }
            None => pending += len,
        }
    }
    if let Some(last) = entries.last_mut() {
        last.1 += pending;
    }
    if entries.is_empty() {
        return Err(Error::EmptyRay { angle: ray.angle, offset: ray.offset });
    }
    if mode == EntryMode::Indicator {
        for e in entries.iter_mut() {
            e.1 = 1.0;
        }
    }
    Ok(entries)
}

/// Assemble the projection matrix for a set of rays. Every ray must
/// intersect the mask; the resulting matrix has one nonzero row per ray and
/// one column per in-mask pixel.
pub fn assemble_system(rays: &[Ray], mask: &Mask, mode: EntryMode) -> Result<ProjectionSystem> {
    let mut rows = Vec::with_capacity(rays.len());
    for ray in rays {
        rows.push(trace_ray(ray, mask, mode)?);
    }
    Ok(ProjectionSystem {
        matrix: SparseMatrix::from_rows(rows, mask.pixel_count())?,
        entry_mode: mode,
    })
}

/// `m` rays with angles uniform on `[0, pi)` and offsets uniform across the
/// mask diameter; rays with an empty in-mask intersection are resampled.
pub fn generate_random_rays(m: usize, mask: &Mask, seed: u64) -> Vec<Ray> {
    let mut rng = rng::seeded(seed);
    let t_max = match mask.clip_region() {
        ClipRegion::Disk { .. } => mask.nominal_radius(),
        ClipRegion::Square { lo, hi } => (hi - lo) / std::f64::consts::SQRT_2,
    };
    let mut rays = Vec::with_capacity(m);
    while rays.len() < m {
        let ray = Ray {
            angle: rng::uniform(&mut rng) * std::f64::consts::PI,
            offset: (2.0 * rng::uniform(&mut rng) - 1.0) * t_max,
        };
        if trace_ray(&ray, mask, EntryMode::Indicator).is_ok() {
            rays.push(ray);
        }
    }
    rays
}

/// Parallel-beam geometry: `num_angles` directions equally spaced over
/// `[0, pi)`, `rays_per_angle` offsets equally spaced (and symmetric about
/// zero) across the clip-circle diameter.
pub fn generate_parallel_rays(num_angles: usize, rays_per_angle: usize, side: usize) -> Vec<Ray> {
    let mask = Mask::circular(side);
    let r = mask.clip_radius().expect("circular mask");
    let mut rays = Vec::with_capacity(num_angles * rays_per_angle);
    for a in 0..num_angles {
        let angle = a as f64 * std::f64::consts::PI / num_angles as f64;
        for j in 0..rays_per_angle {
            let offset = -r + (j as f64 + 0.5) * (2.0 * r / rays_per_angle as f64);
            rays.push(Ray { angle, offset });
        }
    }
    rays
}

/// `p = A x` over in-mask pixels.
pub fn project(sys: &ProjectionSystem, img: &Image) -> Result<Vec<f64>> {
    if sys.matrix.ncols() != img.mask().pixel_count() {
        return Err(Error::dims(format!(
            "system has {} columns, image mask has {} pixels",
            sys.matrix.ncols(),
            img.mask().pixel_count()
        )));
    }
    sys.matrix.matvec(&img.masked_values())
}

/// Add independent `N(0, sigma^2)` noise to each component.
pub fn add_noise(p: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if sigma < 0.0 {
        return Err(Error::invalid(format!("negative noise sigma {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(p.to_vec());
    }
    let mut rng = rng::seeded(seed);
    Ok(p.iter().map(|&v| v + sigma * rng::standard_normal(&mut rng)).collect())
}

/// Graph Laplacian of the 4-neighbour adjacency over in-mask pixels
/// (degree on the diagonal, -1 per neighbour pair).
pub fn laplacian(mask: &Mask) -> SparseMatrix {
    let n = mask.pixel_count();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for col in 0..n {
        let (r, c) = mask.pixel(col);
        let mut degree = 0.0;
        let neighbors = [
            (r.wrapping_sub(1), c),
            (r + 1, c),
            (r, c.wrapping_sub(1)),
            (r, c + 1),
        ];
        for (nr, nc) in neighbors {
            if let Some(ncol) = mask.column(nr, nc) {
                degree += 1.0;
                rows[col].push((ncol, -1.0));
            }
        }
        rows[col].push((col, degree));
    }
    SparseMatrix::from_rows(rows, n).expect("laplacian construction")
}

/// Unordered neighbour pairs `(i, j)` of in-mask pixel columns, one per
/// right/down adjacency, in raster order. The difference variable on the
/// pair is `x_i - x_j`.
pub fn neighbor_edges(mask: &Mask) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for col in 0..mask.pixel_count() {
        let (r, c) = mask.pixel(col);
        if let Some(right) = mask.column(r, c + 1) {
            edges.push((col, right));
        }
        if let Some(down) = mask.column(r + 1, c) {
            edges.push((col, down));
        }
    }
    edges
}
