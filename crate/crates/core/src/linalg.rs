//! Dense and banded matrix kernels used by the Kalman recursions.
//!
//! The transition matrices are banded (each row is a short run of sinc
//! coefficients, or a single identity entry), while the state covariance is
//! dense and kept exactly symmetric. All kernels are row-parallel under
//! [`Exec::Parallel`] and compute each row with the same sequential arithmetic,
//! so results do not depend on the execution policy.

use crate::exec::Exec;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = s;
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn matvec(&self, v: &[f64], exec: Exec) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        exec.for_each_row(&mut out, 1, |i, o| {
            o[0] = dot(self.row(i), v);
        });
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_diagonal(&mut self, s: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i] += s;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    /// `self -= u vᵀ`.
    pub fn sub_outer(&mut self, u: &[f64], v: &[f64], exec: Exec) {
        assert_eq!((u.len(), v.len()), (self.rows, self.cols));
        exec.for_each_row(&mut self.data, self.cols, |i, row| {
            let ui = u[i];
            if ui != 0.0 {
                row.iter_mut().zip(v).for_each(|(r, vj)| *r -= ui * vj);
            }
        });
    }

    /// Replaces the matrix with `(M + Mᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        for i in 0..n {
            for j in i + 1..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (i + 1..self.cols).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandRow {
    /// Column of `values[0]`.
    pub start: usize,
    pub values: Vec<f64>,
}

impl BandRow {
    pub fn identity(i: usize) -> Self {
        Self {
            start: i,
            values: vec![1.0],
        }
    }

    pub fn end(&self) -> usize {
        self.start + self.values.len()
    }

    pub fn get(&self, j: usize) -> f64 {
        if j >= self.start && j < self.end() {
            self.values[j - self.start]
        } else {
            0.0
        }
    }
}

/// Square matrix stored as one contiguous band per row.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    rows: Vec<BandRow>,
}

impl BandedMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            rows: (0..n).map(BandRow::identity).collect(),
        }
    }

    pub fn from_rows(n: usize, rows: Vec<BandRow>) -> Self {
        assert_eq!(rows.len(), n, "one band per row");
        assert!(rows.iter().all(|r| r.end() <= n), "band exceeds matrix width");
        Self { n, rows }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn band_rows(&self) -> &[BandRow] {
        &self.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i].get(j)
    }

    /// Widest row band.
    pub fn bandwidth(&self) -> usize {
        self.rows.iter().map(|r| r.values.len()).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for (i, r) in self.rows.iter().enumerate() {
            for (k, v) in r.values.iter().enumerate() {
                m.set(i, r.start + k, *v);
            }
        }
        m
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        self.rows
            .iter()
            .map(|r| dot(&r.values, &v[r.start..r.end()]))
            .collect()
    }

    /// `A P Aᵀ` for symmetric `P`; the result is exactly symmetric.
    pub fn congruence(&self, p: &Matrix, exec: Exec) -> Matrix {
        let n = self.n;
        assert_eq!((p.rows, p.cols), (n, n));

        // M = A P, row i = Σ_k A[i,k] P[k,:]
        let mut m = vec![0.0; n * n];
        exec.for_each_row(&mut m, n, |i, out| {
            let r = &self.rows[i];
            for (k, a) in r.values.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let prow = p.row(r.start + k);
                out.iter_mut().zip(prow).for_each(|(o, pv)| *o += a * pv);
            }
        });

        // C[i,j] = M[i,:]·A[j,:] for j >= i, mirrored below the diagonal.
        let mut c = vec![0.0; n * n];
        exec.for_each_row(&mut c, n, |i, out| {
            let mrow = &m[i * n..(i + 1) * n];
            for (j, r) in self.rows.iter().enumerate().skip(i) {
                out[j] = dot(&r.values, &mrow[r.start..r.end()]);
            }
        });
        for i in 0..n {
            for j in 0..i {
                c[i * n + j] = c[j * n + i];
            }
        }
        Matrix::from_rows(n, n, c)
    }
}
