//! Gradient-projection memory: an orthonormal basis of past-task gradient
//! directions grown under an energy-fraction criterion.
//!
//! Each update projects the incoming snapshot onto the complement of the
//! stored basis, decomposes the residual, and appends the smallest number of
//! leading left singular vectors such that the basis captures an
//! `epsilon`-fraction of the snapshot's squared Frobenius energy. The joint
//! basis is re-orthonormalized on every append so rounding never degrades the
//! projector. One memory per weight matrix.

use crate::error::{Error, Result};
use crate::linalg::{
    fro_norm, orthonormalize_columns, read_matrix_from_lines, thin_svd, write_matrix,
    DenseMatrix, LineReader,
};
use crate::manifold::{complement_project, ConstraintBasis};
use std::fmt::Write as _;
use std::sync::Arc;

/// Default energy threshold.
pub const DEFAULT_EPSILON: f64 = 0.95;

#[derive(Debug, Clone)]
pub struct GradientMemory {
    basis: Arc<ConstraintBasis>,
    epsilon: f64,
}

impl GradientMemory {
    /// Empty memory (`k = 0`) in ambient dimension `d`.
    pub fn init(d: usize, epsilon: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("d must be at least 1".to_string()));
        }
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must lie in (0, 1], got {epsilon}"
            )));
        }
        Ok(GradientMemory {
            basis: Arc::new(ConstraintBasis::empty(d)),
            epsilon,
        })
    }

    pub fn d(&self) -> usize {
        self.basis.d()
    }

    pub fn k(&self) -> usize {
        self.basis.k()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn basis(&self) -> &Arc<ConstraintBasis> {
        &self.basis
    }

    /// Projects `z` onto the orthogonal complement of the stored subspace.
    pub fn project_out(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        complement_project(&self.basis, z)
    }

    /// Absorbs a gradient snapshot, appending the smallest number of new
    /// directions that brings captured energy to an `epsilon`-fraction of the
    /// snapshot's total. Appending zero directions is legitimate when the
    /// stored subspace already covers the snapshot.
    pub fn update(&self, snapshot: &DenseMatrix) -> Result<GradientMemory> {
        let d = self.d();
        if snapshot.rows() != d {
            return Err(Error::InvalidInput(format!(
                "snapshot has {} rows, memory dimension is {d}",
                snapshot.rows()
            )));
        }
        let total = fro_norm(snapshot).powi(2);
        if total == 0.0 {
            return Err(Error::InvalidInput(
                "snapshot must be nonzero".to_string(),
            ));
        }
        let captured = match self.basis.basis() {
            Some(g) => fro_norm(&g.matmul_tn(snapshot)).powi(2),
            None => 0.0,
        };
        let target = self.epsilon * total;
        if captured >= target {
            return Ok(self.clone());
        }

        let residual = self.project_out(snapshot)?;
        let svd = thin_svd(&residual)?;
        let sigma_max = svd.sigma.first().copied().unwrap_or(0.0);
        let meaningful = |s: f64| s > 1e-12 * sigma_max.max(1e-300);

        let mut energy = captured;
        let mut appended = 0usize;
        for &s in &svd.sigma {
            if energy >= target || !meaningful(s) {
                break;
            }
            energy += s * s;
            appended += 1;
        }
        if appended == 0 {
            return Ok(self.clone());
        }
        if self.k() + appended > d {
            return Err(Error::CapacityExhausted {
                d,
                k: self.k(),
                appended,
            });
        }

        let new_cols = svd.u.columns(0, appended);
        let joint = match self.basis.basis() {
            Some(g) => g.hcat(&new_cols),
            None => new_cols,
        };
        let clean = orthonormalize_columns(&joint);
        Ok(GradientMemory {
            basis: Arc::new(ConstraintBasis::new(clean)?),
            epsilon: self.epsilon,
        })
    }

    /// Serializes the per-layer checkpoint block: `epsilon k d` header, then
    /// the basis in the matrix text format when `k > 0`.
    pub fn write_block(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:.16e} {} {}", self.epsilon, self.k(), self.d());
        if let Some(g) = self.basis.basis() {
            out.push_str(&write_matrix(g));
        }
        out
    }

    /// Parses one checkpoint block.
    pub fn read_block(reader: &mut LineReader<'_>) -> Result<Self> {
        let header = reader.next_content_line()?;
        let mut parts = header.split_whitespace();
        let epsilon: f64 = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| reader.error("expected `epsilon k d` header"))?;
        let k: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| reader.error("expected `epsilon k d` header"))?;
        let d: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| reader.error("expected `epsilon k d` header"))?;
        let mut memory = GradientMemory::init(d, epsilon)
            .map_err(|e| reader.error(format!("bad memory header: {e}")))?;
        if k > 0 {
            let g = read_matrix_from_lines(reader)?;
            if g.rows() != d || g.cols() != k {
                return Err(reader.error(format!(
                    "basis block is {}x{}, header promised {d}x{k}",
                    g.rows(),
                    g.cols()
                )));
            }
            memory.basis = Arc::new(
                ConstraintBasis::new(g).map_err(|e| reader.error(format!("bad basis: {e}")))?,
            );
        }
        Ok(memory)
    }
}

/// Serializes one memory per layer into a single checkpoint file.
pub fn write_checkpoint(memories: &[GradientMemory]) -> String {
    let mut out = String::new();
    for m in memories {
        out.push_str(&m.write_block());
    }
    out
}

/// Reads a multi-layer memory checkpoint.
pub fn read_checkpoint(text: &str) -> Result<Vec<GradientMemory>> {
    let mut reader = LineReader::new(text);
    let mut memories = Vec::new();
    while !reader.at_end() {
        memories.push(GradientMemory::read_block(&mut reader)?);
    }
    if memories.is_empty() {
        return Err(Error::ParseError {
            line: 0,
            message: "empty memory checkpoint".to_string(),
        });
    }
    Ok(memories)
}
