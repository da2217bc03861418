//! Structured task updates `dW = s * U * V^T`.
//!
//! The scalar `s` carries the whole adaptation magnitude while `U` (restricted
//! Stiefel) and `V` (plain Stiefel) carry direction only, so every
//! materialized update has a flat singular spectrum: all values equal `|s|`.
//! Initialization takes the leading singular vectors of the memory-projected
//! gradient snapshot, which is feasible by construction, and the scale starts
//! from a depth-linear ramp.

use crate::error::{Error, Result};
use crate::gpm::GradientMemory;
use crate::linalg::{
    read_matrix_from_lines, thin_svd, write_matrix, DenseMatrix, LineReader,
};
use crate::manifold::{random_feasible, ConstraintBasis, RestrictedStiefelPoint};
use std::fmt::Write as _;
use std::sync::Arc;

/// Per-layer structured update. `u` is validated against the gradient-memory
/// basis of its layer; `v` carries an empty constraint (plain Stiefel).
#[derive(Debug, Clone)]
pub struct TaskUpdate {
    pub layer_index: usize,
    pub s: f64,
    pub u: RestrictedStiefelPoint,
    pub v: RestrictedStiefelPoint,
}

impl TaskUpdate {
    pub fn new(
        layer_index: usize,
        s: f64,
        u: RestrictedStiefelPoint,
        v: RestrictedStiefelPoint,
    ) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::InvalidInput("scale must be finite".to_string()));
        }
        if u.r() != v.r() {
            return Err(Error::InvalidInput(format!(
                "factor ranks differ: U has {}, V has {}",
                u.r(),
                v.r()
            )));
        }
        if u.r() == 0 {
            return Err(Error::InvalidInput("rank must be at least 1".to_string()));
        }
        Ok(TaskUpdate {
            layer_index,
            s,
            u,
            v,
        })
    }

    pub fn rank(&self) -> usize {
        self.u.r()
    }

    /// Output dimension d of the layer this update applies to.
    pub fn d(&self) -> usize {
        self.u.d()
    }

    /// Input dimension n of the layer this update applies to.
    pub fn n(&self) -> usize {
        self.v.d()
    }
}

/// Ordered list of weight matrices, one per layer.
#[derive(Debug, Clone)]
pub struct LayerStack {
    pub weights: Vec<DenseMatrix>,
}

impl LayerStack {
    pub fn new(weights: Vec<DenseMatrix>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput(
                "layer stack needs at least one layer".to_string(),
            ));
        }
        for pair in weights.windows(2) {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::InvalidInput(format!(
                    "layer shapes do not chain: {}x{} follows {}x{}",
                    pair[1].rows(),
                    pair[1].cols(),
                    pair[0].rows(),
                    pair[0].cols()
                )));
            }
        }
        Ok(LayerStack { weights })
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }
}

fn projected_rank(sigma: &[f64]) -> usize {
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let floor = 1e-10 * sigma_max.max(1e-300);
    sigma.iter().take_while(|&&s| s > floor).count()
}

/// Leading `r` left/right singular vectors of the memory-projected snapshot.
/// The left factor is orthogonal to the stored basis by construction. Errors
/// with `RankDeficient` when the projected snapshot has rank below `r`; see
/// [`init_directions_padded`] for the padding fallback.
pub fn init_directions(
    snapshot: &DenseMatrix,
    memory: &GradientMemory,
    r: usize,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if snapshot.rows() != memory.d() {
        return Err(Error::InvalidInput(format!(
            "snapshot has {} rows, memory dimension is {}",
            snapshot.rows(),
            memory.d()
        )));
    }
    if r == 0 || r > snapshot.rows().min(snapshot.cols()) {
        return Err(Error::InvalidInput(format!(
            "rank {r} out of range for a {}x{} snapshot",
            snapshot.rows(),
            snapshot.cols()
        )));
    }
    let projected = memory.project_out(snapshot)?;
    let svd = thin_svd(&projected)?;
    let q = projected_rank(&svd.sigma);
    if q < r {
        return Err(Error::RankDeficient(format!(
            "projected snapshot has rank {q}, requested {r} directions"
        )));
    }
    Ok((svd.u.columns(0, r), svd.v.columns(0, r)))
}

/// Like [`init_directions`], but when the projected snapshot has rank
/// `q < r` the remaining `r - q` directions are drawn at random from the
/// orthogonal complement of both the memory basis and the chosen columns.
pub fn init_directions_padded(
    snapshot: &DenseMatrix,
    memory: &GradientMemory,
    r: usize,
    seed: u64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    match init_directions(snapshot, memory, r) {
        Ok(pair) => Ok(pair),
        Err(Error::RankDeficient(_)) => {
            let projected = memory.project_out(snapshot)?;
            let svd = thin_svd(&projected)?;
            let q = projected_rank(&svd.sigma);
            let d = snapshot.rows();
            let n = snapshot.cols();
            let u0 = pad_orthogonal(
                if q > 0 { Some(svd.u.columns(0, q)) } else { None },
                memory.basis().basis().cloned(),
                d,
                r,
                seed,
            )?;
            let v0 = pad_orthogonal(
                if q > 0 { Some(svd.v.columns(0, q)) } else { None },
                None,
                n,
                r,
                seed.wrapping_add(1),
            )?;
            Ok((u0, v0))
        }
        Err(e) => Err(e),
    }
}

/// Extends `chosen` (possibly empty) with random orthonormal columns that are
/// orthogonal to both `chosen` and `avoid`.
fn pad_orthogonal(
    chosen: Option<DenseMatrix>,
    avoid: Option<DenseMatrix>,
    dim: usize,
    r: usize,
    seed: u64,
) -> Result<DenseMatrix> {
    let q = chosen.as_ref().map_or(0, |c| c.cols());
    if q >= r {
        return Ok(chosen.unwrap().columns(0, r));
    }
    let blocked = match (&chosen, &avoid) {
        (Some(c), Some(a)) => Some(a.hcat(c)),
        (Some(c), None) => Some(c.clone()),
        (None, Some(a)) => Some(a.clone()),
        (None, None) => None,
    };
    let basis = Arc::new(match blocked {
        Some(b) => ConstraintBasis::new(b)?,
        None => ConstraintBasis::empty(dim),
    });
    let pad = random_feasible(&basis, dim, r - q, seed)?;
    Ok(match chosen {
        Some(c) => c.hcat(pad.matrix()),
        None => pad.matrix().clone(),
    })
}

/// Depth-linear scale initialization: layer 1 starts at `s_min`, layer `L`
/// at `s_max`. A single-layer stack uses `s_min` by convention.
pub fn init_scale(layer: usize, total_layers: usize, s_min: f64, s_max: f64) -> Result<f64> {
    if total_layers == 0 || layer == 0 || layer > total_layers {
        return Err(Error::InvalidInput(format!(
            "layer {layer} out of range 1..={total_layers}"
        )));
    }
    if total_layers == 1 {
        return Ok(s_min);
    }
    let t = (layer - 1) as f64 / (total_layers - 1) as f64;
    Ok(s_min + t * (s_max - s_min))
}

/// `s * U * V^T`.
pub fn materialize(update: &TaskUpdate) -> DenseMatrix {
    update
        .u
        .matrix()
        .matmul_nt(update.v.matrix())
        .scale(update.s)
}

/// `W_prev + s * U * V^T`.
pub fn apply(w_prev: &DenseMatrix, update: &TaskUpdate) -> Result<DenseMatrix> {
    if w_prev.rows() != update.d() || w_prev.cols() != update.n() {
        return Err(Error::InvalidInput(format!(
            "weight is {}x{} but update materializes to {}x{}",
            w_prev.rows(),
            w_prev.cols(),
            update.d(),
            update.n()
        )));
    }
    Ok(w_prev.add(&materialize(update)))
}

/// Serializes per-layer updates: `layer r s` line, then U and V text blocks.
pub fn write_checkpoint(updates: &[TaskUpdate]) -> String {
    let mut out = String::new();
    for up in updates {
        let _ = writeln!(out, "{} {} {:.16e}", up.layer_index, up.rank(), up.s);
        out.push_str(&write_matrix(up.u.matrix()));
        out.push_str(&write_matrix(up.v.matrix()));
    }
    out
}

/// Reads an adapter checkpoint. Restored points carry empty constraint bases:
/// the memory a factor was trained against lives in the memory checkpoint.
pub fn read_checkpoint(text: &str) -> Result<Vec<TaskUpdate>> {
    let mut reader = LineReader::new(text);
    let mut updates = Vec::new();
    while !reader.at_end() {
        let header = reader.next_content_line()?;
        let mut parts = header.split_whitespace();
        let layer: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| reader.error("expected `layer r s` header"))?;
        let r: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| reader.error("expected `layer r s` header"))?;
        let s: f64 = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| reader.error("expected `layer r s` header"))?;
        let u = read_matrix_from_lines(&mut reader)?;
        let v = read_matrix_from_lines(&mut reader)?;
        if u.cols() != r || v.cols() != r {
            return Err(reader.error(format!(
                "factor ranks {} / {} disagree with header rank {r}",
                u.cols(),
                v.cols()
            )));
        }
        let u_point = RestrictedStiefelPoint::new(Arc::new(ConstraintBasis::empty(u.rows())), u)
            .map_err(|e| reader.error(format!("stored U is not feasible: {e}")))?;
        let v_point = RestrictedStiefelPoint::new(Arc::new(ConstraintBasis::empty(v.rows())), v)
            .map_err(|e| reader.error(format!("stored V is not feasible: {e}")))?;
        updates.push(
            TaskUpdate::new(layer, s, u_point, v_point)
                .map_err(|e| reader.error(format!("invalid update: {e}")))?,
        );
    }
    if updates.is_empty() {
        return Err(Error::ParseError {
            line: 0,
            message: "empty adapter checkpoint".to_string(),
        });
    }
    Ok(updates)
}
