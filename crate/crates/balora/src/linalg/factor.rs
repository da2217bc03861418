//! Matrix factorizations: thin SVD, symmetric eigendecomposition, and the
//! SPD inverse square root.
//!
//! Both factorizations are cyclic Jacobi methods. They are slower than
//! bidiagonalization for large matrices but unconditionally stable, simple to
//! make deterministic, and accurate to well beyond the 1e-10 tolerances the
//! rest of the crate relies on. All matrices in this crate are small.

use super::{fro_norm, sym_part, DenseMatrix};
use crate::error::{Error, Result};

/// Relative convergence threshold for Jacobi rotations.
const JACOBI_TOL: f64 = 1e-15;
/// Hard cap on sweeps; cyclic Jacobi on small matrices converges in < 20.
const MAX_SWEEPS: usize = 128;
/// Absolute floor below which a quantity is treated as exactly zero.
const SIGMA_ZERO: f64 = 1e-290;
/// Work columns whose norm falls this far below the largest are cancellation
/// residue: their singular value is zeroed and the corresponding `U` column
/// is completed orthogonally. Zeroing them perturbs the reconstruction by at
/// most `1e-14 * sigma_max`, far inside the 1e-8 contract.
const SIGMA_RANK_FLOOR: f64 = 1e-14;

/// Thin singular value decomposition `A = U diag(sigma) V^T` with
/// `k = min(rows, cols)`, `sigma` descending, and orthonormal `U`, `V`.
///
/// Sign convention: in each column of `U` the entry of largest magnitude is
/// nonnegative (ties broken by lowest row index); `V` columns are flipped to
/// match, so the reconstruction is unchanged.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

impl ThinSvd {
    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let scaled = scale_columns(&self.u, &self.sigma);
        scaled.matmul_nt(&self.v)
    }
}

fn scale_columns(m: &DenseMatrix, factors: &[f64]) -> DenseMatrix {
    assert_eq!(m.cols(), factors.len());
    DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| m.at(i, j) * factors[j])
}

/// One-sided Jacobi SVD of an `m x n` work matrix with `m >= n`.
/// Returns `(u, sigma, v)` with `u` `m x n`, `v` `n x n`, sigma unsorted.
fn one_sided_jacobi(a: &DenseMatrix) -> (DenseMatrix, Vec<f64>, DenseMatrix) {
    let (m, n) = (a.rows(), a.cols());
    debug_assert!(m >= n);
    let mut w = a.clone();
    let mut v = DenseMatrix::identity(n);

    for _ in 0..MAX_SWEEPS {
        let mut converged = true;
        for i in 0..n.saturating_sub(1) {
            for j in (i + 1)..n {
                let mut aii = 0.0;
                let mut ajj = 0.0;
                let mut aij = 0.0;
                for row in 0..m {
                    let x = w.at(row, i);
                    let y = w.at(row, j);
                    aii += x * x;
                    ajj += y * y;
                    aij += x * y;
                }
                if aij == 0.0 || aij.abs() <= JACOBI_TOL * (aii * ajj).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (ajj - aii) / (2.0 * aij);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for row in 0..m {
                    let x = w.at(row, i);
                    let y = w.at(row, j);
                    w.set(row, i, c * x - s * y);
                    w.set(row, j, s * x + c * y);
                }
                for row in 0..n {
                    let x = v.at(row, i);
                    let y = v.at(row, j);
                    v.set(row, i, c * x - s * y);
                    v.set(row, j, s * x + c * y);
                }
            }
        }
        if converged {
            break;
        }
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| w.column(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let max_norm = norms.iter().cloned().fold(0.0f64, f64::max);
    let floor = (SIGMA_RANK_FLOOR * max_norm).max(SIGMA_ZERO);
    let mut sigma = vec![0.0; n];
    let mut u = DenseMatrix::zeros(m, n);
    let mut deficient = Vec::new();
    for j in 0..n {
        if norms[j] <= floor {
            sigma[j] = 0.0;
            deficient.push(j);
        } else {
            sigma[j] = norms[j];
            let col = w.column(j);
            for i in 0..m {
                u.set(i, j, col[i] / norms[j]);
            }
        }
    }

    // Complete zero-sigma columns of U to an orthonormal basis: take the
    // canonical vector with the largest residual after removing everything
    // already placed (that residual is at least 1/sqrt(m)), then clean it
    // with a second orthogonalization pass.
    for &j in &deficient {
        let residual_of = |b: usize, u: &DenseMatrix| -> Vec<f64> {
            let mut cand = vec![0.0; m];
            cand[b] = 1.0;
            for _pass in 0..2 {
                for q in 0..n {
                    if q == j || (sigma[q] == 0.0 && q > j) {
                        continue;
                    }
                    let proj: f64 = (0..m).map(|i| u.at(i, q) * cand[i]).sum();
                    for (i, c) in cand.iter_mut().enumerate() {
                        *c -= proj * u.at(i, q);
                    }
                }
            }
            cand
        };
        let mut best_b = 0;
        let mut best_norm = -1.0;
        for b in 0..m {
            let cand = residual_of(b, &u);
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > best_norm {
                best_norm = norm;
                best_b = b;
            }
        }
        debug_assert!(best_norm > 1e-6, "orthonormal completion degenerated");
        let cand = residual_of(best_b, &u);
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (i, c) in cand.iter().enumerate() {
            u.set(i, j, c / norm);
        }
    }

    (u, sigma, v)
}

/// Applies the descending sort and the sign convention in place.
fn normalize_factors(u: &mut DenseMatrix, sigma: &mut [f64], v: &mut DenseMatrix) {
    let k = sigma.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap().then(a.cmp(&b)));

    let u_old = u.clone();
    let v_old = v.clone();
    let sigma_old = sigma.to_vec();
    for (new_j, &old_j) in order.iter().enumerate() {
        sigma[new_j] = sigma_old[old_j];
        for i in 0..u.rows() {
            u.set(i, new_j, u_old.at(i, old_j));
        }
        for i in 0..v.rows() {
            v.set(i, new_j, v_old.at(i, old_j));
        }
    }

    for j in 0..k {
        let mut best_row = 0;
        let mut best_abs = -1.0;
        for i in 0..u.rows() {
            let a = u.at(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best_row = i;
            }
        }
        if u.at(best_row, j) < 0.0 {
            for i in 0..u.rows() {
                u.set(i, j, -u.at(i, j));
            }
            for i in 0..v.rows() {
                v.set(i, j, -v.at(i, j));
            }
        }
    }
}

/// Thin SVD of an arbitrary finite matrix.
pub fn thin_svd(a: &DenseMatrix) -> Result<ThinSvd> {
    if !a.is_finite() {
        return Err(Error::InvalidInput(
            "thin_svd requires finite entries".to_string(),
        ));
    }
    let (mut u, mut sigma, mut v) = if a.rows() >= a.cols() {
        one_sided_jacobi(a)
    } else {
        // A = (A^T)^T: Jacobi on A^T gives A^T = U' S V'^T, so A = V' S U'^T.
        let (u_t, sigma, v_t) = one_sided_jacobi(&a.transpose());
        (v_t, sigma, u_t)
    };
    normalize_factors(&mut u, &mut sigma, &mut v);
    Ok(ThinSvd { u, sigma, v })
}

/// Eigendecomposition of a symmetric matrix: `s = Q diag(lambda) Q^T` with
/// `lambda` descending and orthogonal `Q`. The input is symmetrized first and
/// must be within `1e-10 * ||s||_F` of symmetric.
pub fn sym_eig(s: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    if s.rows() != s.cols() {
        return Err(Error::InvalidInput(format!(
            "sym_eig requires a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if !s.is_finite() {
        return Err(Error::InvalidInput(
            "sym_eig requires finite entries".to_string(),
        ));
    }
    let asym = fro_norm(&s.sub(&s.transpose()));
    if asym > 1e-10 * fro_norm(s).max(1e-30) {
        return Err(Error::InvalidInput(format!(
            "sym_eig input is not symmetric: asymmetry {asym:e}"
        )));
    }
    let n = s.rows();
    let mut a = sym_part(s)?;
    let mut q = DenseMatrix::identity(n);

    for _ in 0..MAX_SWEEPS {
        let mut converged = true;
        for p in 0..n.saturating_sub(1) {
            for r in (p + 1)..n {
                let apr = a.at(p, r);
                let scale = (a.at(p, p).abs() * a.at(r, r).abs()).sqrt();
                if apr == 0.0 || apr.abs() <= JACOBI_TOL * scale.max(SIGMA_ZERO) {
                    continue;
                }
                converged = false;
                let theta = (a.at(r, r) - a.at(p, p)) / (2.0 * apr);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                // Rotate rows and columns p, r of the symmetric work matrix.
                for i in 0..n {
                    let aip = a.at(i, p);
                    let air = a.at(i, r);
                    a.set(i, p, c * aip - sn * air);
                    a.set(i, r, sn * aip + c * air);
                }
                for i in 0..n {
                    let api = a.at(p, i);
                    let ari = a.at(r, i);
                    a.set(p, i, c * api - sn * ari);
                    a.set(r, i, sn * api + c * ari);
                }
                for i in 0..n {
                    let qip = q.at(i, p);
                    let qir = q.at(i, r);
                    q.set(i, p, c * qip - sn * qir);
                    q.set(i, r, sn * qip + c * qir);
                }
            }
        }
        if converged {
            break;
        }
    }

    let mut lambda: Vec<f64> = (0..n).map(|i| a.at(i, i)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| lambda[y].partial_cmp(&lambda[x]).unwrap().then(x.cmp(&y)));
    let q_old = q.clone();
    let lambda_old = lambda.clone();
    for (new_j, &old_j) in order.iter().enumerate() {
        lambda[new_j] = lambda_old[old_j];
        for i in 0..n {
            q.set(i, new_j, q_old.at(i, old_j));
        }
    }
    // Same sign convention as the SVD, for byte-stable fixtures.
    for j in 0..n {
        let mut best_row = 0;
        let mut best_abs = -1.0;
        for i in 0..n {
            let v = q.at(i, j).abs();
            if v > best_abs {
                best_abs = v;
                best_row = i;
            }
        }
        if q.at(best_row, j) < 0.0 {
            for i in 0..n {
                q.set(i, j, -q.at(i, j));
            }
        }
    }
    Ok((q, lambda))
}

/// Inverse symmetric square root of an SPD matrix: returns `M` with
/// `M s M = I`. Refuses near-singular input rather than amplifying noise:
/// the minimum eigenvalue must exceed `1e-12 * max(1, lambda_max)`.
pub fn inv_sqrt_spd(s: &DenseMatrix) -> Result<DenseMatrix> {
    let (q, lambda) = sym_eig(s)?;
    let lambda_max = lambda.first().copied().unwrap_or(0.0);
    let threshold = 1e-12 * lambda_max.max(1.0);
    let lambda_min = lambda.last().copied().unwrap_or(0.0);
    if lambda_min < threshold {
        return Err(Error::NearSingular {
            eigenvalue: lambda_min,
            threshold,
        });
    }
    let inv_roots: Vec<f64> = lambda.iter().map(|l| 1.0 / l.sqrt()).collect();
    let scaled = scale_columns(&q, &inv_roots);
    // Bitwise-symmetric output.
    sym_part(&scaled.matmul_nt(&q))
}
