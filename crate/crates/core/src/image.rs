//! Pixel images on a square grid with a circular reconstruction mask.
//!
//! Pixels are unit squares centred on integer lattice points `(row, col)`,
//! `0..L` in each direction, so pixel `(r, c)` occupies
//! `[c - 0.5, c + 0.5] x [r - 0.5, r + 0.5]` in `(x, y) = (col, row)`
//! coordinates. The circular mask keeps pixels whose centre lies inside the
//! circle of radius `L/2` centred at `(L/2, L/2)` (inclusive); at `L = 50`
//! this leaves 1959 reconstruction pixels. Values outside the mask are
//! identically zero and excluded from every metric.

use crate::error::{Error, Result};

/// Value domain of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Pixels take values in `{0, 1}`.
    Binary,
    /// Pixels take values in `[0, 1]`.
    Continuous,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::Binary => "binary",
            Domain::Continuous => "continuous",
        }
    }

    pub fn parse(s: &str) -> Result<Domain> {
        match s {
            "binary" => Ok(Domain::Binary),
            "continuous" => Ok(Domain::Continuous),
            other => Err(Error::Format(format!("unknown domain tag {other:?}"))),
        }
    }
}

/// Region a ray is clipped against before pixel traversal. Chords are
/// additionally limited to the pixel area `[-0.5, L-0.5]^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipRegion {
    /// The mask disk of radius `L/2` centred at `(L/2, L/2)`.
    Disk { center: (f64, f64), radius: f64 },
    /// The full pixel area (unmasked grids).
    Square { lo: f64, hi: f64 },
}

/// Boolean mask plus the bijection between in-mask pixels and column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    side: usize,
    inside: Vec<bool>,
    column_of: Vec<Option<usize>>,
    pixels: Vec<(usize, usize)>,
    clip: ClipRegion,
}

impl Mask {
    /// Circular mask: pixel `(r, c)` is kept iff
    /// `(r - L/2)^2 + (c - L/2)^2 <= (L/2)^2`.
    pub fn circular(side: usize) -> Mask {
        let l = side as f64;
        let (cx, cy) = (l / 2.0, l / 2.0);
        let r2 = (l / 2.0) * (l / 2.0);
        let mut inside = vec![false; side * side];
        for r in 0..side {
            for c in 0..side {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                inside[r * side + c] = d2 <= r2;
            }
        }
        Self::from_parts(
            side,
            inside,
            ClipRegion::Disk { center: (cx, cy), radius: l / 2.0 },
        )
    }

    /// Mask containing every pixel of the grid (used for small unmasked
    /// systems and tests).
    pub fn full(side: usize) -> Mask {
        let inside = vec![true; side * side];
        Self::from_parts(
            side,
            inside,
            ClipRegion::Square { lo: -0.5, hi: side as f64 - 0.5 },
        )
    }

    fn from_parts(side: usize, inside: Vec<bool>, clip: ClipRegion) -> Mask {
        let mut column_of = vec![None; side * side];
        let mut pixels = Vec::new();
        for r in 0..side {
            for c in 0..side {
                if inside[r * side + c] {
                    column_of[r * side + c] = Some(pixels.len());
                    pixels.push((r, c));
                }
            }
        }
        Mask { side, inside, column_of, pixels, clip }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of in-mask pixels (the unknown count `N`).
    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r < self.side && c < self.side && self.inside[r * self.side + c]
    }

    /// Column index of an in-mask pixel, if any.
    pub fn column(&self, r: usize, c: usize) -> Option<usize> {
        if r < self.side && c < self.side {
            self.column_of[r * self.side + c]
        } else {
            None
        }
    }

    /// `(row, col)` of a column index.
    pub fn pixel(&self, column: usize) -> (usize, usize) {
        self.pixels[column]
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    /// Nominal mask radius `L/2` (ray offsets are sampled inside it).
    pub fn nominal_radius(&self) -> f64 {
        self.side as f64 / 2.0
    }

    /// Centre point rays pass around.
    pub fn center(&self) -> (f64, f64) {
        match self.clip {
            ClipRegion::Disk { center, .. } => center,
            ClipRegion::Square { lo, hi } => ((lo + hi) / 2.0, (lo + hi) / 2.0),
        }
    }

    pub fn clip_region(&self) -> ClipRegion {
        self.clip
    }

    /// Radius of the clip disk for circular masks.
    pub fn clip_radius(&self) -> Option<f64> {
        match self.clip {
            ClipRegion::Disk { radius, .. } => Some(radius),
            ClipRegion::Square { .. } => None,
        }
    }

    pub fn same_geometry(&self, other: &Mask) -> bool {
        self.side == other.side && self.inside == other.inside
    }
}

/// Square image with a mask and a declared value domain.
#[derive(Debug, Clone)]
pub struct Image {
    mask: Mask,
    domain: Domain,
    values: Vec<f64>, // row-major, side*side, zero outside the mask
}

impl Image {
    pub fn zeros(mask: Mask, domain: Domain) -> Image {
        let n = mask.side() * mask.side();
        Image { mask, domain, values: vec![0.0; n] }
    }

    /// Build an image from per-column values (one per in-mask pixel).
    /// Binary images must contain only `{0, 1}`, continuous ones `[0, 1]`.
    pub fn from_masked_values(mask: Mask, domain: Domain, vals: &[f64]) -> Result<Image> {
        if vals.len() != mask.pixel_count() {
            return Err(Error::dims(format!(
                "expected {} masked values, got {}",
                mask.pixel_count(),
                vals.len()
            )));
        }
        let mut img = Image::zeros(mask, domain);
        for (col, &v) in vals.iter().enumerate() {
            let (r, c) = img.mask.pixel(col);
            match domain {
                Domain::Binary if v != 0.0 && v != 1.0 => {
                    return Err(Error::DomainMismatch(format!(
                        "binary image value {v} at ({r},{c})"
                    )))
                }
                Domain::Continuous if !(0.0..=1.0).contains(&v) => {
                    return Err(Error::DomainMismatch(format!(
                        "continuous image value {v} at ({r},{c}) outside [0,1]"
                    )))
                }
                _ => {}
            }
            img.values[r * img.mask.side() + c] = v;
        }
        Ok(img)
    }

    /// As `from_masked_values` but clamping continuous values into `[0, 1]`
    /// first. Reconstruction outputs carry harmless floating-point dust.
    pub fn from_masked_values_clamped(mask: Mask, vals: &[f64]) -> Result<Image> {
        let clamped: Vec<f64> = vals.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Image::from_masked_values(mask, Domain::Continuous, &clamped)
    }

    pub fn side(&self) -> usize {
        self.mask.side()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.mask.side() + c]
    }

    pub(crate) fn set_in_mask(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(self.mask.contains(r, c));
        let side = self.mask.side();
        self.values[r * side + c] = v;
    }

    /// Full row-major grid, zeros outside the mask.
    pub fn grid_values(&self) -> &[f64] {
        &self.values
    }

    /// Values of the in-mask pixels in column order.
    pub fn masked_values(&self) -> Vec<f64> {
        self.mask
            .pixels()
            .iter()
            .map(|&(r, c)| self.values[r * self.mask.side() + c])
            .collect()
    }

    /// Mean over in-mask pixels.
    pub fn masked_mean(&self) -> f64 {
        let n = self.mask.pixel_count();
        if n == 0 {
            return 0.0;
        }
        self.masked_values().iter().sum::<f64>() / n as f64
    }

    /// Threshold a continuous image: strictly greater than `threshold`
    /// becomes 1, the rest 0. The mask is preserved.
    pub fn binarize(&self, threshold: f64) -> Result<Image> {
        if self.domain != Domain::Continuous {
            return Err(Error::DomainMismatch(
                "binarize expects a continuous image".into(),
            ));
        }
        let vals: Vec<f64> = self
            .masked_values()
            .iter()
            .map(|&v| if v > threshold { 1.0 } else { 0.0 })
            .collect();
        Image::from_masked_values(self.mask.clone(), Domain::Binary, &vals)
    }

    /// Reinterpret a binary image as continuous (values are unchanged).
    pub fn to_continuous(&self) -> Image {
        Image { mask: self.mask.clone(), domain: Domain::Continuous, values: self.values.clone() }
    }
}

/// Reconstruction accuracy metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricKind {
    /// `N_e / N`: fraction of wrongly assigned in-mask pixels.
    ErrorFraction,
    /// `E_2 = ||x - x*||_2 / N` over in-mask pixels.
    L2Error,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::ErrorFraction => "error_fraction",
            MetricKind::L2Error => "l2_error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub kind: MetricKind,
    pub value: f64,
}

fn check_comparable(truth: &Image, estimate: &Image, domain: Domain) -> Result<()> {
    if !truth.mask.same_geometry(&estimate.mask) {
        return Err(Error::DomainMismatch(
            "images have different side or mask".into(),
        ));
    }
    if truth.domain != domain || estimate.domain != domain {
        return Err(Error::DomainMismatch(format!(
            "metric requires {} images, got {} and {}",
            domain.as_str(),
            truth.domain.as_str(),
            estimate.domain.as_str()
        )));
    }
    Ok(())
}

/// Fraction of in-mask pixels where two binary images disagree.
pub fn error_fraction(truth: &Image, estimate: &Image) -> Result<Metric> {
    check_comparable(truth, estimate, Domain::Binary)?;
    let n = truth.mask.pixel_count();
    let wrong = truth
        .mask
        .pixels()
        .iter()
        .filter(|&&(r, c)| truth.get(r, c) != estimate.get(r, c))
        .count();
    Ok(Metric { kind: MetricKind::ErrorFraction, value: wrong as f64 / n as f64 })
}

/// Euclidean norm of the in-mask difference divided by the mask size.
pub fn l2_error(truth: &Image, estimate: &Image) -> Result<Metric> {
    check_comparable(truth, estimate, Domain::Continuous)?;
    let n = truth.mask.pixel_count();
    let ss: f64 = truth
        .mask
        .pixels()
        .iter()
        .map(|&(r, c)| {
            let d = truth.get(r, c) - estimate.get(r, c);
            d * d
        })
        .sum();
    Ok(Metric { kind: MetricKind::L2Error, value: ss.sqrt() / n as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_l50_has_1959_pixels() {
        let mask = Mask::circular(50);
        assert_eq!(mask.pixel_count(), 1959);
    }

    #[test]
    fn mask_columns_are_a_bijection() {
        let mask = Mask::circular(23);
        for col in 0..mask.pixel_count() {
            let (r, c) = mask.pixel(col);
            assert_eq!(mask.column(r, c), Some(col));
        }
        let outside = (0..23usize * 23)
            .filter(|i| !mask.contains(i / 23, i % 23))
            .count();
        assert_eq!(outside + mask.pixel_count(), 23 * 23);
    }

    #[test]
    fn clip_disk_is_the_nominal_mask_circle() {
        for side in [17usize, 50] {
            let mask = Mask::circular(side);
            assert_eq!(mask.clip_radius(), Some(side as f64 / 2.0));
            assert_eq!(mask.center(), (side as f64 / 2.0, side as f64 / 2.0));
        }
    }

    #[test]
    fn binary_domain_is_validated() {
        let mask = Mask::circular(8);
        let n = mask.pixel_count();
        let mut vals = vec![0.0; n];
        vals[0] = 0.5;
        assert!(Image::from_masked_values(mask, Domain::Binary, &vals).is_err());
    }

    #[test]
    fn error_fraction_identical_and_complement() {
        let mask = Mask::circular(12);
        let n = mask.pixel_count();
        let a = Image::from_masked_values(mask.clone(), Domain::Binary, &vec![1.0; n]).unwrap();
        let b = Image::from_masked_values(mask.clone(), Domain::Binary, &vec![0.0; n]).unwrap();
        assert_eq!(error_fraction(&a, &a).unwrap().value, 0.0);
        assert_eq!(error_fraction(&a, &b).unwrap().value, 1.0);
    }

    #[test]
    fn error_fraction_counts_directly() {
        // all-zero truth vs estimate with 10 in-mask ones at L=50: 10/1959
        let mask = Mask::circular(50);
        let n = mask.pixel_count();
        let truth = Image::from_masked_values(mask.clone(), Domain::Binary, &vec![0.0; n]).unwrap();
        let mut vals = vec![0.0; n];
        for v in vals.iter_mut().take(10) {
            *v = 1.0;
        }
        let est = Image::from_masked_values(mask, Domain::Binary, &vals).unwrap();
        let m = error_fraction(&truth, &est).unwrap();
        assert_eq!(m.value, 10.0 / 1959.0);
    }

    #[test]
    fn l2_error_single_pixel_difference() {
        let mask = Mask::circular(16);
        let n = mask.pixel_count();
        let truth =
            Image::from_masked_values(mask.clone(), Domain::Continuous, &vec![0.25; n]).unwrap();
        let mut vals = vec![0.25; n];
        vals[7] += 0.5;
        let est = Image::from_masked_values(mask, Domain::Continuous, &vals).unwrap();
        let m = l2_error(&truth, &est).unwrap();
        assert!((m.value - 0.5 / n as f64).abs() < 1e-15);
        assert_eq!(l2_error(&truth, &truth).unwrap().value, 0.0);
    }

    #[test]
    fn l2_error_matches_naive_sum_oracle() {
        let mask = Mask::circular(20);
        let n = mask.pixel_count();
        let av: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let bv: Vec<f64> = (0..n).map(|i| (i as f64 * 0.61).cos().abs()).collect();
        let a = Image::from_masked_values(mask.clone(), Domain::Continuous, &av).unwrap();
        let b = Image::from_masked_values(mask, Domain::Continuous, &bv).unwrap();
        let mut ss = 0.0;
        for i in 0..n {
            ss += (av[i] - bv[i]) * (av[i] - bv[i]);
        }
        let oracle = ss.sqrt() / n as f64;
        assert!((l2_error(&a, &b).unwrap().value - oracle).abs() < 1e-12);
        // symmetry
        assert_eq!(
            l2_error(&a, &b).unwrap().value,
            l2_error(&b, &a).unwrap().value
        );
    }

    #[test]
    fn metrics_ignore_out_of_mask_pixels() {
        let mask = Mask::circular(10);
        let n = mask.pixel_count();
        let a = Image::from_masked_values(mask.clone(), Domain::Binary, &vec![1.0; n]).unwrap();
        let mut b = a.clone();
        // poke an out-of-mask pixel directly
        let side = b.side();
        'outer: for r in 0..side {
            for c in 0..side {
                if !b.mask().contains(r, c) {
                    b.values[r * side + c] = 1.0;
                    break 'outer;
                }
            }
        }
        assert_eq!(error_fraction(&a, &b).unwrap().value, 0.0);
    }

    #[test]
    fn binarize_thresholds() {
        let mask = Mask::circular(9);
        let n = mask.pixel_count();
        let low =
            Image::from_masked_values(mask.clone(), Domain::Continuous, &vec![0.4; n]).unwrap();
        let high =
            Image::from_masked_values(mask.clone(), Domain::Continuous, &vec![0.6; n]).unwrap();
        assert!(low.binarize(0.5).unwrap().masked_values().iter().all(|&v| v == 0.0));
        assert!(high.binarize(0.5).unwrap().masked_values().iter().all(|&v| v == 1.0));
        // elementwise oracle on a mixed image
        let vals: Vec<f64> = (0..n).map(|i| (i % 10) as f64 / 10.0).collect();
        let img = Image::from_masked_values(mask, Domain::Continuous, &vals).unwrap();
        let bin = img.binarize(0.45).unwrap();
        for (i, &v) in bin.masked_values().iter().enumerate() {
            assert_eq!(v, if vals[i] > 0.45 { 1.0 } else { 0.0 });
        }
    }
}
