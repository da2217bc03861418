//! The restricted Stiefel manifold: matrices with orthonormal columns that
//! also lie in the null space of a stored constraint basis.
//!
//! For a basis `G` (d x k, orthonormal columns, possibly empty) the manifold
//! is `{ U in R^{d x r} : U^T U = I_r, G^T U = 0 }`. The tangent space at a
//! feasible `U` is `{ Z : U^T Z + Z^T U = 0, G^T Z = 0 }`. Projection first
//! annihilates the `G` component, then applies the Stiefel tangent projection
//! `Z0 - U sym(U^T Z0)`; retraction annihilates the `G` component and
//! whitens, `Y (Y^T Y)^{-1/2}`, which is the Frobenius-nearest feasible
//! point. `k = 0` is a first-class case: the plain Stiefel manifold, with all
//! `G` terms skipped rather than multiplied as zero-width matrices.

use crate::error::{Error, Result};
use crate::linalg::{fro_norm, inv_sqrt_spd, sym_eig, sym_part, thin_svd, DenseMatrix};
use crate::rng::StreamRng;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Feasibility tolerance enforced at construction.
pub const TOL_FEAS: f64 = 1e-8;
/// Operations accept points that have drifted up to this residual.
pub const DRIFT_ACCEPT: f64 = 1e-6;
/// Beyond this residual a point is considered unrepairable.
pub const DRIFT_REPAIR_LIMIT: f64 = 1e-3;

static DRIFT_REPAIRS: AtomicU64 = AtomicU64::new(0);
static DEGENERATE_WARNINGS: AtomicU64 = AtomicU64::new(0);

/// Number of times an operation silently re-retracted a drifted point.
pub fn drift_repair_count() -> u64 {
    DRIFT_REPAIRS.load(Ordering::Relaxed)
}

/// Number of times `random_feasible` was asked for a degenerate `r + k = d`
/// manifold (permitted, but the tangent space may be trivial).
pub fn degenerate_warning_count() -> u64 {
    DEGENERATE_WARNINGS.load(Ordering::Relaxed)
}

/// Orthonormal basis of directions that updates must stay orthogonal to.
/// `k = 0` (no stored directions) is represented without a matrix.
#[derive(Debug, Clone)]
pub struct ConstraintBasis {
    d: usize,
    g: Option<DenseMatrix>,
}

impl ConstraintBasis {
    /// Empty basis: the manifold degrades to the plain Stiefel manifold.
    pub fn empty(d: usize) -> Self {
        ConstraintBasis { d, g: None }
    }

    /// Wraps a d x k matrix with orthonormal columns (within 1e-10).
    pub fn new(g: DenseMatrix) -> Result<Self> {
        let gram = g.matmul_tn(&g);
        let resid = fro_norm(&gram.sub(&DenseMatrix::identity(g.cols())));
        if resid > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "constraint basis columns are not orthonormal: residual {resid:e}"
            )));
        }
        Ok(ConstraintBasis {
            d: g.rows(),
            g: Some(g),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.g.as_ref().map_or(0, |g| g.cols())
    }

    pub fn basis(&self) -> Option<&DenseMatrix> {
        self.g.as_ref()
    }
}

/// Point on the restricted Stiefel manifold, immutable after construction,
/// carrying the basis it was validated against.
#[derive(Debug, Clone)]
pub struct RestrictedStiefelPoint {
    u: DenseMatrix,
    constraint: Arc<ConstraintBasis>,
}

impl RestrictedStiefelPoint {
    /// Validates both feasibility residuals at [`TOL_FEAS`] and the dimension
    /// budget `r + k <= d`.
    pub fn new(constraint: Arc<ConstraintBasis>, u: DenseMatrix) -> Result<Self> {
        let (d, r, k) = (constraint.d(), u.cols(), constraint.k());
        if u.rows() != d {
            return Err(Error::InvalidInput(format!(
                "point has {} rows, constraint lives in dimension {d}",
                u.rows()
            )));
        }
        if r + k > d {
            return Err(Error::InfeasibleDimensions { d, r, k });
        }
        let (orth, cons) = feasibility_residuals(&constraint, &u);
        if orth > TOL_FEAS || cons > TOL_FEAS {
            return Err(Error::InfeasiblePoint(format!(
                "residuals ||U^T U - I|| = {orth:e}, ||G^T U|| = {cons:e} exceed {TOL_FEAS:e}"
            )));
        }
        Ok(RestrictedStiefelPoint { u, constraint })
    }

    /// Constructs without validating invariants. For tests that need to
    /// fabricate drifted points; everything else should use [`Self::new`].
    pub fn new_unchecked(constraint: Arc<ConstraintBasis>, u: DenseMatrix) -> Self {
        RestrictedStiefelPoint { u, constraint }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn constraint(&self) -> &Arc<ConstraintBasis> {
        &self.constraint
    }

    pub fn d(&self) -> usize {
        self.u.rows()
    }

    pub fn r(&self) -> usize {
        self.u.cols()
    }
}

/// Both feasibility residuals: `(||U^T U - I||_F, ||G^T U||_F)`.
pub fn feasibility_residuals(basis: &ConstraintBasis, u: &DenseMatrix) -> (f64, f64) {
    let gram = u.matmul_tn(u);
    let orth = fro_norm(&gram.sub(&DenseMatrix::identity(u.cols())));
    let cons = match basis.basis() {
        Some(g) => fro_norm(&g.matmul_tn(u)),
        None => 0.0,
    };
    (orth, cons)
}

/// `(I - G G^T) z`: removes the component violating the linear constraint.
pub fn complement_project(basis: &ConstraintBasis, z: &DenseMatrix) -> Result<DenseMatrix> {
    if z.rows() != basis.d() {
        return Err(Error::InvalidInput(format!(
            "complement_project: input has {} rows, basis dimension is {}",
            z.rows(),
            basis.d()
        )));
    }
    match basis.basis() {
        None => Ok(z.clone()),
        Some(g) => {
            let coeffs = g.matmul_tn(z);
            Ok(z.sub(&g.matmul(&coeffs)))
        }
    }
}

fn check_point_usable(point: &RestrictedStiefelPoint) -> Result<()> {
    let (orth, cons) = feasibility_residuals(&point.constraint, &point.u);
    if orth > DRIFT_ACCEPT || cons > DRIFT_ACCEPT {
        return Err(Error::InfeasiblePoint(format!(
            "point drifted beyond the accepted tolerance: residuals {orth:e}, {cons:e}"
        )));
    }
    Ok(())
}

/// Orthogonal projection of `z` onto the tangent space at `point`:
/// `Z0 - U sym(U^T Z0)` with `Z0 = (I - G G^T) Z`. This is the unique
/// Frobenius-nearest tangent vector.
pub fn tangent_project(point: &RestrictedStiefelPoint, z: &DenseMatrix) -> Result<DenseMatrix> {
    if z.rows() != point.d() || z.cols() != point.r() {
        return Err(Error::InvalidInput(format!(
            "tangent_project: input is {}x{}, expected {}x{}",
            z.rows(),
            z.cols(),
            point.d(),
            point.r()
        )));
    }
    check_point_usable(point)?;
    let z0 = complement_project(&point.constraint, z)?;
    let sym = sym_part(&point.u.matmul_tn(&z0))?;
    Ok(z0.sub(&point.u.matmul(&sym)))
}

/// Shared rank gate for both retraction routes, in eigenvalue terms:
/// `lambda_min(Y^T Y)` must exceed `1e-12 * max(1, lambda_max)`.
fn whitening_eigs(y: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    let gram = sym_part(&y.matmul_tn(y))?;
    let (q, lambda) = sym_eig(&gram)?;
    let lambda_max = lambda.first().copied().unwrap_or(0.0);
    let lambda_min = lambda.last().copied().unwrap_or(0.0);
    if lambda_min <= 1e-12 * lambda_max.max(1.0) {
        return Err(Error::RankDeficient(format!(
            "iterate collapsed into the constraint subspace: lambda_min(Y^T Y) = {lambda_min:e}"
        )));
    }
    Ok((q, lambda))
}

/// Retraction via the explicit whitening operator `Y (Y^T Y)^{-1/2}`.
pub fn retract_via_whitening(
    basis: &ConstraintBasis,
    u_tilde: &DenseMatrix,
) -> Result<DenseMatrix> {
    let y = complement_project(basis, u_tilde)?;
    whitening_eigs(&y)?;
    let m = inv_sqrt_spd(&sym_part(&y.matmul_tn(&y))?).map_err(|e| match e {
        Error::NearSingular { eigenvalue, .. } => Error::RankDeficient(format!(
            "iterate collapsed into the constraint subspace: lambda_min(Y^T Y) = {eigenvalue:e}"
        )),
        other => other,
    })?;
    Ok(y.matmul(&m))
}

/// Retraction via the thin-SVD polar factor `Q P^T` of `Y = Q Sigma P^T`.
pub fn retract_via_polar_svd(
    basis: &ConstraintBasis,
    u_tilde: &DenseMatrix,
) -> Result<DenseMatrix> {
    let y = complement_project(basis, u_tilde)?;
    let svd = thin_svd(&y)?;
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    let smin = svd.sigma.last().copied().unwrap_or(0.0);
    if smin * smin <= 1e-12 * (smax * smax).max(1.0) {
        return Err(Error::RankDeficient(format!(
            "iterate collapsed into the constraint subspace: sigma_min(Y) = {smin:e}"
        )));
    }
    Ok(svd.u.matmul_nt(&svd.v))
}

/// Maps an ambient iterate to the Frobenius-nearest feasible point.
///
/// The small well-conditioned case forms `(Y^T Y)^{-1/2}` from the r x r
/// eigendecomposition; otherwise the polar factor of the thin SVD is used.
/// The two routes agree to rounding and both are exposed above for
/// cross-validation.
pub fn retract(
    basis: &Arc<ConstraintBasis>,
    u_tilde: &DenseMatrix,
) -> Result<RestrictedStiefelPoint> {
    if u_tilde.rows() != basis.d() {
        return Err(Error::InvalidInput(format!(
            "retract: iterate has {} rows, basis dimension is {}",
            u_tilde.rows(),
            basis.d()
        )));
    }
    let y = complement_project(basis, u_tilde)?;
    let (q, lambda) = whitening_eigs(&y)?;
    let lambda_max = lambda[0];
    let lambda_min = lambda[lambda.len() - 1];
    let r = u_tilde.cols();
    let u_plus = if r <= 8 && lambda_min > 1e-6 * lambda_max {
        let inv_roots: Vec<f64> = lambda.iter().map(|l| 1.0 / l.sqrt()).collect();
        let scaled = DenseMatrix::from_fn(r, r, |i, j| q.at(i, j) * inv_roots[j]);
        y.matmul(&scaled.matmul_nt(&q))
    } else {
        let svd = thin_svd(&y)?;
        svd.u.matmul_nt(&svd.v)
    };
    RestrictedStiefelPoint::new(Arc::clone(basis), u_plus)
}

/// True iff both feasibility residuals are at most `tol`.
pub fn is_feasible(basis: &ConstraintBasis, u: &DenseMatrix, tol: f64) -> bool {
    if u.rows() != basis.d() {
        return false;
    }
    let (orth, cons) = feasibility_residuals(basis, u);
    orth <= tol && cons <= tol
}

/// True iff both tangent-space residuals at `point` are at most `tol`.
pub fn is_tangent(point: &RestrictedStiefelPoint, z: &DenseMatrix, tol: f64) -> bool {
    if z.rows() != point.d() || z.cols() != point.r() {
        return false;
    }
    let utz = point.u.matmul_tn(z);
    let skew_resid = fro_norm(&utz.add(&utz.transpose()));
    let cons_resid = match point.constraint.basis() {
        Some(g) => fro_norm(&g.matmul_tn(z)),
        None => 0.0,
    };
    skew_resid <= tol && cons_resid <= tol
}

/// Deterministic random feasible point: Gaussian sample, constraint
/// annihilation, polar orthonormalization.
pub fn random_feasible(
    basis: &Arc<ConstraintBasis>,
    d: usize,
    r: usize,
    rng_seed: u64,
) -> Result<RestrictedStiefelPoint> {
    if d != basis.d() {
        return Err(Error::InvalidInput(format!(
            "random_feasible: requested dimension {d} but basis lives in {}",
            basis.d()
        )));
    }
    let k = basis.k();
    if r == 0 || r + k > d {
        return Err(Error::InfeasibleDimensions { d, r, k });
    }
    if r + k == d {
        DEGENERATE_WARNINGS.fetch_add(1, Ordering::Relaxed);
    }
    let mut rng = StreamRng::from_stream(rng_seed, "manifold/random-feasible");
    let z = DenseMatrix::from_fn(d, r, |_, _| rng.normal());
    retract(basis, &z)
}

/// Accepts a possibly drifted point: within [`DRIFT_ACCEPT`] it is passed
/// through; up to [`DRIFT_REPAIR_LIMIT`] it is re-retracted and the repair
/// counter incremented; beyond that the point is rejected.
pub fn repair_drift(point: &RestrictedStiefelPoint) -> Result<RestrictedStiefelPoint> {
    let (orth, cons) = feasibility_residuals(&point.constraint, &point.u);
    let worst = orth.max(cons);
    if worst <= DRIFT_ACCEPT {
        return Ok(point.clone());
    }
    if worst <= DRIFT_REPAIR_LIMIT {
        DRIFT_REPAIRS.fetch_add(1, Ordering::Relaxed);
        return retract(&point.constraint, &point.u);
    }
    Err(Error::InfeasiblePoint(format!(
        "point drifted beyond repair: residuals {orth:e}, {cons:e}"
    )))
}
