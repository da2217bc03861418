//! Shared test oracles, kept independent of the implementation paths they
//! check: the tangent-space projection is re-derived here as an explicit
//! constrained least-squares problem over vectorized matrices.

use balora::linalg::{thin_svd, DenseMatrix};
use balora::manifold::{random_feasible, ConstraintBasis, RestrictedStiefelPoint};
use balora::rng::StreamRng;
use std::sync::Arc;

/// Orthogonal projector onto the tangent space at a point, built from the
/// explicit constraint operator: rows encode `sym(U^T Z) = 0` (one row per
/// unordered index pair) and `G^T Z = 0`, over `vec(Z)` in row-major order.
/// The projector removes the row-space component found by an SVD.
pub struct OracleProjector {
    /// Orthonormal basis of the constraint row space, `(d*r) x rank`.
    range: DenseMatrix,
    d: usize,
    r: usize,
}

impl OracleProjector {
    pub fn new(point: &RestrictedStiefelPoint) -> Self {
        let (d, r) = (point.d(), point.r());
        let u = point.matrix();
        let k = point.constraint().k();
        let rows = r * (r + 1) / 2 + k * r;
        let dim = d * r;
        let mut c = DenseMatrix::zeros(rows, dim);
        let mut row = 0;
        for i in 0..r {
            for j in i..r {
                // sym(U^T Z)_{ij} = 0.5 * sum_a (U_{a i} Z_{a j} + U_{a j} Z_{a i})
                for a in 0..d {
                    c.set(row, a * r + j, c.at(row, a * r + j) + 0.5 * u.at(a, i));
                    c.set(row, a * r + i, c.at(row, a * r + i) + 0.5 * u.at(a, j));
                }
                row += 1;
            }
        }
        if let Some(g) = point.constraint().basis() {
            for col in 0..k {
                for j in 0..r {
                    for a in 0..d {
                        c.set(row, a * r + j, g.at(a, col));
                    }
                    row += 1;
                }
            }
        }
        assert_eq!(row, rows);
        // Row space of C = column space of C^T; keep singular directions
        // above the rank floor.
        let svd = thin_svd(&c.transpose()).unwrap();
        let smax = svd.sigma.first().copied().unwrap_or(0.0).max(1e-300);
        let rank = svd.sigma.iter().take_while(|&&s| s > 1e-10 * smax).count();
        assert!(rank >= 1);
        OracleProjector {
            range: svd.u.columns(0, rank),
            d,
            r,
        }
    }

    /// Nearest tangent vector to `z` in the Frobenius norm, via the normal
    /// equations of the vectorized constraint system.
    pub fn project(&self, z: &DenseMatrix) -> DenseMatrix {
        assert_eq!(z.rows(), self.d);
        assert_eq!(z.cols(), self.r);
        let zvec = DenseMatrix::new(self.d * self.r, 1, z.data().to_vec()).unwrap();
        let coeffs = self.range.matmul_tn(&zvec);
        let removed = self.range.matmul(&coeffs);
        let projected = zvec.sub(&removed);
        DenseMatrix::new(self.d, self.r, projected.data().to_vec()).unwrap()
    }
}

/// Deterministic Gaussian matrix for tests.
pub fn gaussian(seed: u64, rows: usize, cols: usize) -> DenseMatrix {
    let mut rng = StreamRng::from_stream(seed, "tests/gaussian");
    DenseMatrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Random constraint basis with `k` orthonormal columns (`k = 0` gives the
/// empty basis).
pub fn random_basis(d: usize, k: usize, seed: u64) -> Arc<ConstraintBasis> {
    if k == 0 {
        return Arc::new(ConstraintBasis::empty(d));
    }
    let empty = Arc::new(ConstraintBasis::empty(d));
    let pt = random_feasible(&empty, d, k, seed).unwrap();
    Arc::new(ConstraintBasis::new(pt.matrix().clone()).unwrap())
}

/// Random feasible point for a fresh `(d, r, k)` triple.
pub fn random_instance(
    d: usize,
    r: usize,
    k: usize,
    seed: u64,
) -> (Arc<ConstraintBasis>, RestrictedStiefelPoint) {
    let basis = random_basis(d, k, seed);
    let point = random_feasible(&basis, d, r, seed.wrapping_add(0x5a5a)).unwrap();
    (basis, point)
}
