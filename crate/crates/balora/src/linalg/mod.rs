//! Dense double-precision linear algebra kernels.
//!
//! Everything downstream (manifold geometry, optimizers, gradient memories,
//! spectra) is built on [`DenseMatrix`], a row-major `f64` matrix with
//! deterministic, single-threaded kernels: identical input bits produce
//! identical output bits on every run.

mod factor;
mod text;

pub use factor::{inv_sqrt_spd, sym_eig, thin_svd, ThinSvd};
pub use text::{read_matrix, read_matrix_from_lines, write_matrix, LineReader};

use crate::error::{Error, Result};

/// Row-major dense matrix of finite `f64` entries, `rows >= 1`, `cols >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, validating shape and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput(
                "matrix entries must be finite".to_string(),
            ));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "dimensions must be positive");
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DenseMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Convenience constructor from row slices; panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty() && !rows[0].is_empty());
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn same_shape(&self, other: &DenseMatrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`; panics on inner-dimension mismatch (programmer error).
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = DenseMatrix::zeros(m, n);
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[p * n..(p + 1) * n];
                let dst = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    dst[j] += a * row[j];
                }
            }
        }
        out
    }

    /// `self^T * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, other.rows, "matmul_tn shape mismatch");
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = DenseMatrix::zeros(m, n);
        for p in 0..k {
            let lhs_row = &self.data[p * m..(p + 1) * m];
            let rhs_row = &other.data[p * n..(p + 1) * n];
            for i in 0..m {
                let a = lhs_row[i];
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    dst[j] += a * rhs_row[j];
                }
            }
        }
        out
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_nt(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.cols, "matmul_nt shape mismatch");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = DenseMatrix::zeros(m, n);
        for i in 0..m {
            let lhs_row = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let rhs_row = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += lhs_row[p] * rhs_row[p];
                }
                out.data[i * n + j] = acc;
            }
        }
        out
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert!(self.same_shape(other), "add shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert!(self.same_shape(other), "sub shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, factor: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * factor).collect(),
        }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.at(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self.set(i, j, v);
        }
    }

    /// Columns `lo..hi` as a new matrix.
    pub fn columns(&self, lo: usize, hi: usize) -> DenseMatrix {
        assert!(lo < hi && hi <= self.cols);
        DenseMatrix::from_fn(self.rows, hi - lo, |i, j| self.at(i, lo + j))
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, other.rows, "hcat row mismatch");
        DenseMatrix::from_fn(self.rows, self.cols + other.cols, |i, j| {
            if j < self.cols {
                self.at(i, j)
            } else {
                other.at(i, j - self.cols)
            }
        })
    }
}

/// Modified Gram-Schmidt (two passes per column) producing orthonormal
/// columns; the input must have full column rank.
pub fn orthonormalize_columns(m: &DenseMatrix) -> DenseMatrix {
    let cols = m.cols();
    let mut out = m.clone();
    for j in 0..cols {
        let mut col = out.column(j);
        for _pass in 0..2 {
            for q in 0..j {
                let prev = out.column(q);
                let proj: f64 = col.iter().zip(&prev).map(|(a, b)| a * b).sum();
                for (c, p) in col.iter_mut().zip(&prev) {
                    *c -= proj * p;
                }
            }
        }
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 1e-12, "column {j} collapsed during orthonormalization");
        for c in col.iter_mut() {
            *c /= norm;
        }
        out.set_column(j, &col);
    }
    out
}

/// Symmetric part `(A + A^T) / 2`; the output is bitwise symmetric because
/// mirrored entries are computed from the identical expression.
pub fn sym_part(a: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() != a.cols() {
        return Err(Error::InvalidInput(format!(
            "sym_part requires a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = 0.5 * (a.at(i, j) + a.at(j, i));
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}

/// Frobenius inner product `tr(A^T B)`.
pub fn fro_inner(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::InvalidInput(format!(
            "fro_inner shape mismatch: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| x * y)
        .sum())
}

/// Frobenius norm.
pub fn fro_norm(a: &DenseMatrix) -> f64 {
    a.data().iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;

    fn random_matrix(rng: &mut StreamRng, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        assert!(DenseMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(DenseMatrix::new(2, 2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(DenseMatrix::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn sym_part_fixed_points_and_mirror_average() {
        let a = DenseMatrix::from_rows(&[&[0.0, 2.0], &[0.0, 0.0]]);
        let s = sym_part(&a).unwrap();
        assert_eq!(s, DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]));

        // symmetric input is a fixed point
        let sym = DenseMatrix::from_rows(&[&[1.0, 3.0], &[3.0, -2.0]]);
        assert_eq!(sym_part(&sym).unwrap(), sym);

        // skew-symmetric input vanishes
        let skew = DenseMatrix::from_rows(&[&[0.0, 5.0], &[-5.0, 0.0]]);
        assert_eq!(sym_part(&skew).unwrap(), DenseMatrix::zeros(2, 2));

        assert!(sym_part(&DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn sym_part_is_idempotent_orthogonal_projector() {
        let mut rng = StreamRng::from_stream(11, "sym-proj");
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 5, 5);
            let s = sym_part(&a).unwrap();
            assert_eq!(sym_part(&s).unwrap(), s, "idempotence");
            let resid = a.sub(&s);
            let ip = fro_inner(&s, &resid).unwrap();
            let scale = fro_norm(&a) * fro_norm(&a);
            assert!(ip.abs() <= 1e-10 * scale.max(1e-30), "ip={ip}");
        }
    }

    #[test]
    fn fro_examples() {
        let i2 = DenseMatrix::identity(2);
        assert_eq!(fro_inner(&i2, &i2).unwrap(), 2.0);
        assert_eq!(fro_norm(&DenseMatrix::zeros(3, 4)), 0.0);
        assert!(fro_inner(&i2, &DenseMatrix::zeros(2, 3)).is_err());

        // matches the naive double-loop oracle
        let mut rng = StreamRng::from_stream(3, "fro");
        let a = random_matrix(&mut rng, 4, 6);
        let b = random_matrix(&mut rng, 4, 6);
        let mut oracle = 0.0;
        for i in 0..4 {
            for j in 0..6 {
                oracle += a.at(i, j) * b.at(i, j);
            }
        }
        let got = fro_inner(&a, &b).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        let n = fro_norm(&a);
        let self_ip = fro_inner(&a, &a).unwrap();
        assert!((n * n - self_ip).abs() <= 1e-12 * self_ip);
    }

    #[test]
    fn matmul_transpose_variants_agree() {
        let mut rng = StreamRng::from_stream(5, "mm");
        let a = random_matrix(&mut rng, 4, 7);
        let b = random_matrix(&mut rng, 4, 3);
        let c = random_matrix(&mut rng, 5, 7);
        assert_eq!(a.matmul_tn(&b), a.transpose().matmul(&b));
        assert_eq!(a.matmul_nt(&c), a.matmul(&c.transpose()));
    }
}
