//! Synthetic test images: random cluster phantoms and the Shepp-Logan head.

use crate::error::{Error, Result};
use crate::image::{Domain, Image, Mask};
use crate::rng;

/// Gaussian blur width used by the cluster generator, as a fraction of the
/// image side: `sigma = L / (4 p)`, i.e. cluster scale ~ `1/p` of the side.
pub fn cluster_blur_sigma(side: usize, p: usize) -> f64 {
    side as f64 / (4.0 * p as f64)
}

/// Random cluster phantom: `p^2` in-mask centroids chosen uniformly at
/// random, blurred with a Gaussian filter of width `L/(4p)`, thresholded at
/// the in-mask mean. Binary mode keeps the thresholded image; gray mode
/// recolours each 4-connected white cluster with a random integer intensity
/// in `[105, 255]`, rescaled by 1/255.
pub fn generate_random_phantom(side: usize, p: usize, seed: u64, mode: Domain) -> Result<Image> {
    if side < 8 {
        return Err(Error::invalid(format!("side {side} < 8")));
    }
    let mask = Mask::circular(side);
    let n = mask.pixel_count();
    if p == 0 || p * p > n {
        return Err(Error::invalid(format!(
            "cluster parameter p={p}: need 1 <= p^2 <= {n}"
        )));
    }
    let mut rng = rng::seeded(seed);

    // centroids on in-mask pixels
    let mut field = vec![0.0f64; side * side];
    for col in rng::distinct_indices(&mut rng, n, p * p) {
        let (r, c) = mask.pixel(col);
        field[r * side + c] = 1.0;
    }

    let blurred = gaussian_blur(&field, side, cluster_blur_sigma(side, p));

    // threshold strictly above the in-mask mean
    let mean = mask
        .pixels()
        .iter()
        .map(|&(r, c)| blurred[r * side + c])
        .sum::<f64>()
        / n as f64;
    let mut binary = Image::zeros(mask.clone(), Domain::Binary);
    for &(r, c) in mask.pixels() {
        if blurred[r * side + c] > mean {
            binary.set_in_mask(r, c, 1.0);
        }
    }

    match mode {
        Domain::Binary => Ok(binary),
        Domain::Continuous => {
            let labels = label_components(&binary);
            let n_comp = labels.iter().flatten().copied().max().map_or(0, |m| m + 1);
            let colors: Vec<f64> = (0..n_comp)
                .map(|_| (105 + rng::uniform_index(&mut rng, 255 - 105 + 1)) as f64 / 255.0)
                .collect();
            let mut gray = Image::zeros(mask.clone(), Domain::Continuous);
            for &(r, c) in mask.pixels() {
                if let Some(k) = labels[r * side + c] {
                    gray.set_in_mask(r, c, colors[k]);
                }
            }
            Ok(gray)
        }
    }
}

/// Separable Gaussian convolution over the full grid, zero outside.
fn gaussian_blur(field: &[f64], side: usize, sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for k in -radius..=radius {
        kernel.push((-0.5 * (k as f64 / sigma).powi(2)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for w in kernel.iter_mut() {
        *w /= norm;
    }

    let s = side as isize;
    let mut tmp = vec![0.0f64; side * side];
    for r in 0..s {
        for c in 0..s {
            let mut acc = 0.0;
            for (ki, w) in kernel.iter().enumerate() {
                let cc = c + ki as isize - radius;
                if cc >= 0 && cc < s {
                    acc += w * field[(r * s + cc) as usize];
                }
            }
            tmp[(r * s + c) as usize] = acc;
        }
    }
    let mut out = vec![0.0f64; side * side];
    for r in 0..s {
        for c in 0..s {
            let mut acc = 0.0;
            for (ki, w) in kernel.iter().enumerate() {
                let rr = r + ki as isize - radius;
                if rr >= 0 && rr < s {
                    acc += w * tmp[(rr * s + c) as usize];
                }
            }
            out[(r * s + c) as usize] = acc;
        }
    }
    out
}

/// 4-connected component labels of the white (value 1) in-mask pixels,
/// numbered in raster-scan discovery order.
fn label_components(binary: &Image) -> Vec<Option<usize>> {
    let side = binary.side();
    let mask = binary.mask();
    let mut labels: Vec<Option<usize>> = vec![None; side * side];
    let mut next = 0usize;
    let mut queue = Vec::new();
    for r in 0..side {
        for c in 0..side {
            if !mask.contains(r, c) || binary.get(r, c) != 1.0 || labels[r * side + c].is_some() {
                continue;
            }
            labels[r * side + c] = Some(next);
            queue.push((r, c));
            while let Some((qr, qc)) = queue.pop() {
                let neighbors = [
                    (qr.wrapping_sub(1), qc),
                    (qr + 1, qc),
                    (qr, qc.wrapping_sub(1)),
                    (qr, qc + 1),
                ];
                for (nr, nc) in neighbors {
                    if nr < side
                        && nc < side
                        && mask.contains(nr, nc)
                        && binary.get(nr, nc) == 1.0
                        && labels[nr * side + nc].is_none()
                    {
                        labels[nr * side + nc] = Some(next);
                        queue.push((nr, nc));
                    }
                }
            }
            next += 1;
        }
    }
    labels
}

/// One ellipse of the head phantom, in unit coordinates (`[-1, 1]^2`).
#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub intensity: f64,
    pub half_x: f64,
    pub half_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub angle_deg: f64,
}

/// The original 1974 ten-ellipse Shepp-Logan table.
pub const SHEPP_LOGAN_ELLIPSES: [Ellipse; 10] = [
    Ellipse { intensity: 2.00, half_x: 0.6900, half_y: 0.9200, center_x: 0.00, center_y: 0.0000, angle_deg: 0.0 },
    Ellipse { intensity: -0.98, half_x: 0.6624, half_y: 0.8740, center_x: 0.00, center_y: -0.0184, angle_deg: 0.0 },
    Ellipse { intensity: -0.02, half_x: 0.1100, half_y: 0.3100, center_x: 0.22, center_y: 0.0000, angle_deg: -18.0 },
    Ellipse { intensity: -0.02, half_x: 0.1600, half_y: 0.4100, center_x: -0.22, center_y: 0.0000, angle_deg: 18.0 },
    Ellipse { intensity: 0.01, half_x: 0.2100, half_y: 0.2500, center_x: 0.00, center_y: 0.3500, angle_deg: 0.0 },
    Ellipse { intensity: 0.01, half_x: 0.0460, half_y: 0.0460, center_x: 0.00, center_y: 0.1000, angle_deg: 0.0 },
    Ellipse { intensity: 0.01, half_x: 0.0460, half_y: 0.0460, center_x: 0.00, center_y: -0.1000, angle_deg: 0.0 },
    Ellipse { intensity: 0.01, half_x: 0.0460, half_y: 0.0230, center_x: -0.08, center_y: -0.6050, angle_deg: 0.0 },
    Ellipse { intensity: 0.01, half_x: 0.0230, half_y: 0.0230, center_x: 0.00, center_y: -0.6060, angle_deg: 0.0 },
    Ellipse { intensity: 0.01, half_x: 0.0230, half_y: 0.0460, center_x: 0.06, center_y: -0.6050, angle_deg: 0.0 },
];

/// Sum of ellipse intensities covering a point in unit coordinates.
pub fn shepp_logan_density(x: f64, y: f64) -> f64 {
    let mut v = 0.0;
    for e in &SHEPP_LOGAN_ELLIPSES {
        let th = e.angle_deg.to_radians();
        let (dx, dy) = (x - e.center_x, y - e.center_y);
        let u = dx * th.cos() + dy * th.sin();
        let w = -dx * th.sin() + dy * th.cos();
        if (u / e.half_x).powi(2) + (w / e.half_y).powi(2) <= 1.0 {
            v += e.intensity;
        }
    }
    v
}

/// Unit coordinates of the centre of pixel `(r, c)`: the mask circle maps to
/// the unit circle, y points up.
pub fn pixel_to_unit(side: usize, r: usize, c: usize) -> (f64, f64) {
    let half = side as f64 / 2.0;
    ((c as f64 - half) / half, (half - r as f64) / half)
}

/// Shepp-Logan head phantom rasterized by per-pixel-centre sampling,
/// clipped to `[0, 1]`, circular mask applied.
pub fn generate_shepp_logan(side: usize) -> Result<Image> {
    if side < 16 {
        return Err(Error::invalid(format!("side {side} < 16")));
    }
    let mask = Mask::circular(side);
    let mut img = Image::zeros(mask.clone(), Domain::Continuous);
    for &(r, c) in mask.pixels() {
        let (x, y) = pixel_to_unit(side, r, c);
        img.set_in_mask(r, c, shepp_logan_density(x, y).clamp(0.0, 1.0));
    }
    Ok(img)
}
