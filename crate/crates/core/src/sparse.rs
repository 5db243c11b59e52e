//! Compressed sparse row matrices for projection operators.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from per-row `(column, value)` lists. Entries within a row must
    /// have distinct columns.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, ncols: usize) -> Result<SparseMatrix> {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::invalid(format!(
                        "duplicate column {} in row {i}",
                        w[0].0
                    )));
                }
            }
            for (c, v) in row {
                if c >= ncols {
                    return Err(Error::dims(format!("column {c} >= ncols {ncols}")));
                }
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(SparseMatrix { nrows, ncols, indptr, indices, values })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn iter_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&c, &v)| (i, c, v))
        })
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::dims(format!(
                "matvec: x has {} entries, matrix has {} columns",
                x.len(),
                self.ncols
            )));
        }
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// `y = A^T x`
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.nrows {
            return Err(Error::dims(format!(
                "tr_matvec: x has {} entries, matrix has {} rows",
                x.len(),
                self.nrows
            )));
        }
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * x[i];
            }
        }
        Ok(y)
    }

    /// Dense `A^T A`, accumulated row by row.
    pub fn ata_dense(&self) -> faer::Mat<f64> {
        let n = self.ncols;
        let mut m = faer::Mat::<f64>::zeros(n, n);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (a, &ca) in cols.iter().enumerate() {
                let va = vals[a];
                for (b, &cb) in cols.iter().enumerate() {
                    m[(ca, cb)] += va * vals[b];
                    let _ = b;
                }
            }
        }
        m
    }

    /// Quadratic form `x^T A x` (A must be square).
    pub fn quadratic_form(&self, x: &[f64]) -> Result<f64> {
        let y = self.matvec(x)?;
        Ok(x.iter().zip(&y).map(|(a, b)| a * b).sum())
    }
}
