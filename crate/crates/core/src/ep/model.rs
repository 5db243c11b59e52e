//! Gaussian bases and the per-sweep marginal computation.
//!
//! Every sweep factors `W = P + diag(site precisions)` once and extracts the
//! marginal variances `diag(W^-1)` and means `W^-1 (h + B a)`. The matrix is
//! Jacobi-scaled before factorization so that widely mixed site precisions
//! (spike-dominated sites next to near-inactive ones) do not degrade the
//! Cholesky factor.
//!
//! The difference-variable system never materializes its full
//! `(N+E) x (N+E)` precision: the difference block of `W` is diagonal, so the
//! pixel-block Schur complement `S = beta1 A^T A + Dx + R^T diag(c) R` with
//! `c_e = beta2 d_e / (beta2 + d_e)` is factored instead, and the
//! difference-coordinate marginals are recovered from `S^-1` pair entries.

use faer::prelude::*;
use faer::Mat;

use crate::error::{Error, Result};
use crate::estimate::HyperState;
use crate::sparse::SparseMatrix;

/// Explicit Gaussian base: precision matrix and shift vector, so the base
/// density is `exp(-x^T P x / 2 + h^T x)`.
#[derive(Debug, Clone)]
pub struct GaussianBase {
    pub precision: Mat<f64>,
    pub shift: Vec<f64>,
}

/// `P = beta A^T A + J L`, `h = beta A^T p` for the pixel model.
pub fn build_pixel_base(
    a: &SparseMatrix,
    p: &[f64],
    beta: f64,
    j: f64,
    laplacian: &SparseMatrix,
) -> Result<GaussianBase> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta {beta} must be positive")));
    }
    if j < 0.0 {
        return Err(Error::invalid(format!("smoothness weight {j} must be >= 0")));
    }
    let n = a.ncols();
    if laplacian.nrows() != n || laplacian.ncols() != n {
        return Err(Error::dims(format!(
            "laplacian is {}x{}, expected {n}x{n}",
            laplacian.nrows(),
            laplacian.ncols()
        )));
    }
    if p.len() != a.nrows() {
        return Err(Error::dims(format!(
            "projection vector has {} entries, matrix has {} rows",
            p.len(),
            a.nrows()
        )));
    }
    let mut precision = a.ata_dense();
    for i in 0..n {
        for k in 0..n {
            precision[(i, k)] *= beta;
        }
    }
    for (r, c, v) in laplacian.iter_entries() {
        precision[(r, c)] += j * v;
    }
    let shift = a.tr_matvec(p)?.iter().map(|v| beta * v).collect();
    Ok(GaussianBase { precision, shift })
}

/// Full augmented-system base over `(x, f)`: `P = S^T S`, `h = S^T p~` with
/// `S = [[sqrt(beta1) A, 0], [sqrt(beta2) R, -sqrt(beta2) I]]` and
/// `p~ = (sqrt(beta1) p, 0)`, which corresponds to the coupling term
/// `beta2/2 * sum (x_i - x_j - f_ij)^2`.
pub fn build_difference_base(
    a: &SparseMatrix,
    p: &[f64],
    beta1: f64,
    beta2: f64,
    edges: &[(usize, usize)],
) -> Result<GaussianBase> {
    if !(beta1 > 0.0) || !(beta2 > 0.0) {
        return Err(Error::invalid(format!(
            "beta1 {beta1} and beta2 {beta2} must be positive"
        )));
    }
    check_edges(edges, a.ncols())?;
    let n = a.ncols();
    let e = edges.len();
    let dim = n + e;
    let mut precision = Mat::<f64>::zeros(dim, dim);
    let ata = a.ata_dense();
    for i in 0..n {
        for k in 0..n {
            precision[(i, k)] = beta1 * ata[(i, k)];
        }
    }
    for (idx, &(i, j)) in edges.iter().enumerate() {
        let f = n + idx;
        precision[(i, i)] += beta2;
        precision[(j, j)] += beta2;
        precision[(i, j)] -= beta2;
        precision[(j, i)] -= beta2;
        precision[(f, f)] += beta2;
        precision[(i, f)] -= beta2;
        precision[(f, i)] -= beta2;
        precision[(j, f)] += beta2;
        precision[(f, j)] += beta2;
    }
    let mut shift = vec![0.0; dim];
    for (k, v) in a.tr_matvec(p)?.into_iter().enumerate() {
        shift[k] = beta1 * v;
    }
    Ok(GaussianBase { precision, shift })
}

fn check_edges(edges: &[(usize, usize)], n: usize) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for &(i, j) in edges {
        if i == j {
            return Err(Error::invalid(format!("self edge {i}~{j}")));
        }
        if i >= n || j >= n {
            return Err(Error::dims(format!("edge {i}~{j} out of range (n={n})")));
        }
        if !seen.insert((i.min(j), i.max(j))) {
            return Err(Error::invalid(format!("duplicate edge {i}~{j}")));
        }
    }
    Ok(())
}

/// Per-sweep marginals of `W = P + diag(prec)`.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub var: Vec<f64>,
    pub mean: Vec<f64>,
    pub ln_det_w: f64,
    /// `eta . mean` with `eta = h + B a`, used by the free energy.
    pub shift_dot_mean: f64,
}

/// Scaled dense Cholesky factorization with full inverse.
struct DenseFactors {
    inv: Mat<f64>,
    scale: Vec<f64>,
    ln_det: f64,
}

impl DenseFactors {
    fn factor(w: &Mat<f64>) -> Result<DenseFactors> {
        let n = w.nrows();
        let mut scale = vec![0.0; n];
        for i in 0..n {
            let d = w[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-positive diagonal {d} at coordinate {i}"
                )));
            }
            scale[i] = d.sqrt();
        }
        let scaled = Mat::from_fn(n, n, |i, j| w[(i, j)] / (scale[i] * scale[j]));
        let ch = scaled
            .cholesky(faer::Side::Lower)
            .map_err(|_| Error::Numerical("precision + sites is not positive definite".into()))?;
        let l = ch.compute_l();
        let mut ln_det = 0.0;
        for i in 0..n {
            ln_det += 2.0 * l[(i, i)].ln() + 2.0 * scale[i].ln();
        }
        Ok(DenseFactors { inv: ch.inverse(), scale, ln_det })
    }

    fn covariance(&self, i: usize, j: usize) -> f64 {
        self.inv[(i, j)] / (self.scale[i] * self.scale[j])
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.inv[(i, j)] * rhs[j] / self.scale[j];
            }
            out[i] = acc / self.scale[i];
        }
        out
    }
}

fn dense_marginals(w: &Mat<f64>, eta: &[f64]) -> Result<Marginals> {
    let n = w.nrows();
    let f = DenseFactors::factor(w)?;
    let mean = f.solve(eta);
    let mut var = vec![0.0; n];
    for i in 0..n {
        var[i] = f.covariance(i, i);
        if !(var[i] > 0.0) {
            return Err(Error::Numerical(format!(
                "non-positive marginal variance {} at coordinate {i}",
                var[i]
            )));
        }
    }
    let shift_dot_mean = eta.iter().zip(&mean).map(|(a, b)| a * b).sum();
    Ok(Marginals { var, mean, ln_det_w: f.ln_det, shift_dot_mean })
}

/// The linear-Gaussian part of a reconstruction problem.
pub enum SystemModel {
    /// Arbitrary fixed base (tests, small systems). Hyperparameters are not
    /// recombined into the precision.
    Generic(GaussianBase),
    /// Pixel model: `P = beta A^T A + J L`, `h = beta A^T p`.
    Pixel {
        a: SparseMatrix,
        p: Vec<f64>,
        laplacian: SparseMatrix,
        ata: Mat<f64>,
        atp: Vec<f64>,
    },
    /// Augmented difference-variable model over `(x, f)` with
    /// `beta2 = beta2_ratio * beta1`.
    Difference {
        a: SparseMatrix,
        p: Vec<f64>,
        edges: Vec<(usize, usize)>,
        beta2_ratio: f64,
        ata: Mat<f64>,
        atp: Vec<f64>,
    },
}

impl SystemModel {
    pub fn generic(base: GaussianBase) -> SystemModel {
        SystemModel::Generic(base)
    }

    pub fn pixel(a: SparseMatrix, p: Vec<f64>, laplacian: SparseMatrix) -> Result<SystemModel> {
        if p.len() != a.nrows() {
            return Err(Error::dims("measurement count != matrix rows"));
        }
        if laplacian.nrows() != a.ncols() {
            return Err(Error::dims("laplacian size != pixel count"));
        }
        let ata = a.ata_dense();
        let atp = a.tr_matvec(&p)?;
        Ok(SystemModel::Pixel { a, p, laplacian, ata, atp })
    }

    pub fn difference(
        a: SparseMatrix,
        p: Vec<f64>,
        edges: Vec<(usize, usize)>,
        beta2_ratio: f64,
    ) -> Result<SystemModel> {
        if p.len() != a.nrows() {
            return Err(Error::dims("measurement count != matrix rows"));
        }
        if !(beta2_ratio > 0.0) {
            return Err(Error::invalid("beta2/beta1 ratio must be positive"));
        }
        check_edges(&edges, a.ncols())?;
        let ata = a.ata_dense();
        let atp = a.tr_matvec(&p)?;
        Ok(SystemModel::Difference { a, p, edges, beta2_ratio, ata, atp })
    }

    /// Total coordinate count (pixels, plus difference variables if any).
    pub fn dim(&self) -> usize {
        match self {
            SystemModel::Generic(b) => b.precision.nrows(),
            SystemModel::Pixel { ata, .. } => ata.nrows(),
            SystemModel::Difference { ata, edges, .. } => ata.nrows() + edges.len(),
        }
    }

    /// Pixel coordinate count (the reconstructed image lives there).
    pub fn n_pixels(&self) -> usize {
        match self {
            SystemModel::Generic(b) => b.precision.nrows(),
            SystemModel::Pixel { ata, .. } => ata.nrows(),
            SystemModel::Difference { ata, .. } => ata.nrows(),
        }
    }

    pub fn measurement(&self) -> Option<(&SparseMatrix, &[f64])> {
        match self {
            SystemModel::Generic(_) => None,
            SystemModel::Pixel { a, p, .. } | SystemModel::Difference { a, p, .. } => {
                Some((a, p))
            }
        }
    }

    pub fn laplacian(&self) -> Option<&SparseMatrix> {
        match self {
            SystemModel::Pixel { laplacian, .. } => Some(laplacian),
            _ => None,
        }
    }

    /// Factor `W = P(hyper) + diag(site_prec)` and return the marginal
    /// means/variances for `eta = h(hyper) + site_shift`.
    pub fn marginals(
        &self,
        hyper: &HyperState,
        site_prec: &[f64],
        site_shift: &[f64],
    ) -> Result<Marginals> {
        let dim = self.dim();
        if site_prec.len() != dim || site_shift.len() != dim {
            return Err(Error::dims("site vectors do not match system dimension"));
        }
        match self {
            SystemModel::Generic(base) => {
                let n = base.precision.nrows();
                let mut w = base.precision.clone();
                for i in 0..n {
                    w[(i, i)] += site_prec[i];
                }
                let eta: Vec<f64> =
                    base.shift.iter().zip(site_shift).map(|(h, s)| h + s).collect();
                dense_marginals(&w, &eta)
            }
            SystemModel::Pixel { laplacian, ata, atp, .. } => {
                let n = ata.nrows();
                let beta = hyper.beta;
                let j = hyper.smoothness;
                let mut w = Mat::from_fn(n, n, |r, c| beta * ata[(r, c)]);
                for (r, c, v) in laplacian.iter_entries() {
                    w[(r, c)] += j * v;
                }
                for i in 0..n {
                    w[(i, i)] += site_prec[i];
                }
                let eta: Vec<f64> =
                    atp.iter().zip(site_shift).map(|(h, s)| beta * h + s).collect();
                dense_marginals(&w, &eta)
            }
            SystemModel::Difference { edges, beta2_ratio, ata, atp, .. } => {
                self.difference_marginals(
                    edges,
                    hyper.beta,
                    beta2_ratio * hyper.beta,
                    ata,
                    atp,
                    site_prec,
                    site_shift,
                )
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn difference_marginals(
        &self,
        edges: &[(usize, usize)],
        beta1: f64,
        beta2: f64,
        ata: &Mat<f64>,
        atp: &[f64],
        site_prec: &[f64],
        site_shift: &[f64],
    ) -> Result<Marginals> {
        let n = ata.nrows();
        let e = edges.len();
        let (dx, df) = site_prec.split_at(n);
        let (sx, sf) = site_shift.split_at(n);

        // Schur complement on the pixel block
        let mut s = Mat::from_fn(n, n, |r, c| beta1 * ata[(r, c)]);
        for i in 0..n {
            s[(i, i)] += dx[i];
        }
        let mut rhs: Vec<f64> = atp.iter().zip(sx).map(|(h, v)| beta1 * h + v).collect();
        for (idx, &(i, j)) in edges.iter().enumerate() {
            let denom = beta2 + df[idx];
            let c = beta2 * df[idx] / denom;
            s[(i, i)] += c;
            s[(j, j)] += c;
            s[(i, j)] -= c;
            s[(j, i)] -= c;
            let carry = beta2 * sf[idx] / denom;
            rhs[i] += carry;
            rhs[j] -= carry;
        }

        let f = DenseFactors::factor(&s)?;
        let mean_x = f.solve(&rhs);

        let mut var = vec![0.0; n + e];
        let mut mean = vec![0.0; n + e];
        for i in 0..n {
            var[i] = f.covariance(i, i);
            mean[i] = mean_x[i];
        }
        let mut ln_det = f.ln_det;
        for (idx, &(i, j)) in edges.iter().enumerate() {
            let denom = beta2 + df[idx];
            ln_det += denom.ln();
            let gain = beta2 / denom;
            let pair = f.covariance(i, i) + f.covariance(j, j) - 2.0 * f.covariance(i, j);
            var[n + idx] = 1.0 / denom + gain * gain * pair;
            mean[n + idx] = (sf[idx] + beta2 * (mean_x[i] - mean_x[j])) / denom;
        }
        for (k, v) in var.iter().enumerate() {
            if !(*v > 0.0) {
                return Err(Error::Numerical(format!(
                    "non-positive marginal variance {v} at coordinate {k}"
                )));
            }
        }
        let mut shift_dot_mean = 0.0;
        for i in 0..n {
            shift_dot_mean += (beta1 * atp[i] + sx[i]) * mean[i];
        }
        for idx in 0..e {
            shift_dot_mean += sf[idx] * mean[n + idx];
        }
        Ok(Marginals { var, mean, ln_det_w: ln_det, shift_dot_mean })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_sparse(n: usize) -> SparseMatrix {
        SparseMatrix::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect(), n).unwrap()
    }

    fn zero_laplacian(n: usize) -> SparseMatrix {
        SparseMatrix::from_rows(vec![Vec::new(); n], n).unwrap()
    }

    #[test]
    fn pixel_base_identity_case() {
        // J=0, A=I, beta=1: precision = I, shift = p
        let a = identity_sparse(3);
        let p = vec![0.5, -1.0, 2.0];
        let base = build_pixel_base(&a, &p, 1.0, 0.0, &zero_laplacian(3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((base.precision[(i, j)] - expect).abs() < 1e-15);
            }
        }
        assert_eq!(base.shift, p);
    }

    #[test]
    fn pixel_base_two_pixel_chain() {
        // A = 0 (no rays), J = 1, chain laplacian: precision = [[1,-1],[-1,1]]
        let a = SparseMatrix::from_rows(vec![], 2).unwrap();
        let lap = SparseMatrix::from_rows(
            vec![vec![(0, 1.0), (1, -1.0)], vec![(0, -1.0), (1, 1.0)]],
            2,
        )
        .unwrap();
        let base = build_pixel_base(&a, &[], 1.0, 1.0, &lap).unwrap();
        assert_eq!(base.precision[(0, 0)], 1.0);
        assert_eq!(base.precision[(0, 1)], -1.0);
        assert_eq!(base.precision[(1, 0)], -1.0);
        assert_eq!(base.precision[(1, 1)], 1.0);
    }

    #[test]
    fn pixel_base_matches_dense_ata_oracle() {
        let rows = vec![
            vec![(0, 0.5), (2, 1.5)],
            vec![(1, -1.0), (3, 0.25)],
            vec![(0, 2.0), (1, 1.0), (2, -0.5)],
        ];
        let a = SparseMatrix::from_rows(rows, 4).unwrap();
        let p = vec![1.0, 2.0, 3.0];
        let beta = 1.7;
        let base = build_pixel_base(&a, &p, beta, 0.0, &zero_laplacian(4)).unwrap();
        // dense oracle
        let mut dense = [[0.0f64; 4]; 3];
        for (i, c, v) in a.iter_entries() {
            dense[i][c] = v;
        }
        for r in 0..4 {
            for c in 0..4 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += dense[k][r] * dense[k][c];
                }
                assert!((base.precision[(r, c)] - beta * acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn difference_base_single_edge_pattern() {
        // 2 pixels, 1 edge, A empty: precision = beta2 * [[1,-1,-1],[-1,1,1],[-1,1,1]]
        let a = SparseMatrix::from_rows(vec![], 2).unwrap();
        let beta2 = 10.0;
        let base = build_difference_base(&a, &[], 1.0, beta2, &[(0, 1)]).unwrap();
        let expect = [[1.0, -1.0, -1.0], [-1.0, 1.0, 1.0], [-1.0, 1.0, 1.0]];
        for r in 0..3 {
            for c in 0..3 {
                assert!(
                    (base.precision[(r, c)] - beta2 * expect[r][c]).abs() < 1e-12,
                    "entry ({r},{c})"
                );
            }
        }
        // exact equality x1 - x2 = f zeroes the quadratic form
        let t = [0.7, 0.2, 0.5];
        let mut q = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                q += t[r] * base.precision[(r, c)] * t[c];
            }
        }
        assert!(q.abs() < 1e-12);
    }

    #[test]
    fn difference_base_rejects_bad_edges() {
        let a = SparseMatrix::from_rows(vec![], 3).unwrap();
        assert!(build_difference_base(&a, &[], 1.0, 2.0, &[(1, 1)]).is_err());
        assert!(build_difference_base(&a, &[], 1.0, 2.0, &[(0, 1), (1, 0)]).is_err());
    }

    #[test]
    fn schur_path_matches_full_inversion() {
        // random small system: difference model marginals must equal the
        // generic dense marginals of the explicit augmented base
        let rows = vec![
            vec![(0, 1.0), (1, 0.5)],
            vec![(2, 1.2), (3, -0.3)],
            vec![(0, 0.4), (3, 0.8)],
        ];
        let a = SparseMatrix::from_rows(rows, 4).unwrap();
        let p = vec![0.3, -0.6, 1.1];
        let edges = vec![(0, 1), (1, 2), (2, 3), (0, 2)];
        let (beta1, ratio) = (2.0, 50.0);

        let hyper = HyperState { beta: beta1, ..HyperState::default() };
        let model =
            SystemModel::difference(a.clone(), p.clone(), edges.clone(), ratio).unwrap();
        let dim = model.dim();
        let site_prec: Vec<f64> = (0..dim).map(|i| 0.4 + 0.17 * (i as f64)).collect();
        let site_shift: Vec<f64> = (0..dim).map(|i| 0.1 * (i as f64) - 0.3).collect();
        let fast = model.marginals(&hyper, &site_prec, &site_shift).unwrap();

        let base = build_difference_base(&a, &p, beta1, ratio * beta1, &edges).unwrap();
        let generic = SystemModel::generic(base);
        let slow = generic.marginals(&hyper, &site_prec, &site_shift).unwrap();

        for k in 0..dim {
            assert!(
                (fast.var[k] - slow.var[k]).abs() < 1e-9,
                "var[{k}]: {} vs {}",
                fast.var[k],
                slow.var[k]
            );
            assert!(
                (fast.mean[k] - slow.mean[k]).abs() < 1e-9,
                "mean[{k}]: {} vs {}",
                fast.mean[k],
                slow.mean[k]
            );
        }
        assert!((fast.ln_det_w - slow.ln_det_w).abs() < 1e-8);
        assert!((fast.shift_dot_mean - slow.shift_dot_mean).abs() < 1e-8);
    }

    #[test]
    fn generic_marginals_match_hand_inverse() {
        // W = [[2,1],[1,3]] + diag(1, 0.5), eta = (1, 2)
        let mut precision = Mat::<f64>::zeros(2, 2);
        precision[(0, 0)] = 2.0;
        precision[(0, 1)] = 1.0;
        precision[(1, 0)] = 1.0;
        precision[(1, 1)] = 3.0;
        let base = GaussianBase { precision, shift: vec![1.0, 2.0] };
        let model = SystemModel::generic(base);
        let m = model
            .marginals(&HyperState::default(), &[1.0, 0.5], &[0.0, 0.0])
            .unwrap();
        // W = [[3,1],[1,3.5]], det = 9.5, inv = [[3.5,-1],[-1,3]]/9.5
        assert!((m.var[0] - 3.5 / 9.5).abs() < 1e-14);
        assert!((m.var[1] - 3.0 / 9.5).abs() < 1e-14);
        assert!((m.mean[0] - (3.5 * 1.0 - 1.0 * 2.0) / 9.5).abs() < 1e-14);
        assert!((m.mean[1] - (-1.0 + 3.0 * 2.0) / 9.5).abs() < 1e-14);
        assert!((m.ln_det_w - 9.5f64.ln()).abs() < 1e-12);
    }
}
