//! Browser demo bindings.
//!
//! Three interactive operations over the core toolkit, each returning a JSON
//! string so the page-side glue stays trivial and the same functions remain
//! callable (and testable) on native targets:
//!
//! * [`continual_demo`] — a small sequential run of the constrained method
//!   against the unconstrained baseline: accuracy heatmaps plus metrics;
//! * [`merge_demo`] — per-task adapters trained independently, their
//!   spectra, and the interference (NAI) curve across smoothing ratios;
//! * [`optimizer_trace`] — projected steps on a toy quadratic over the
//!   restricted manifold, with feasibility residuals per step and 3-d
//!   iterate coordinates when `d = 3, r = 1`.

use balora::adapter::materialize;
use balora::harness::{
    accuracy, base_weights, baseline_run, individual_adapters, make_task_sequence, run_sequence,
    Dims, ExperimentConfig, MetricsReport,
};
use balora::linalg::{fro_norm, DenseMatrix};
use balora::manifold::{feasibility_residuals, random_feasible, ConstraintBasis};
use balora::optimizer::{step_constrained, InnerOptimizerConfig, OptState};
use balora::spectral::{merge, nai, smooth_adapter, spectrum};
use serde_json::json;
use std::sync::Arc;
use wasm_bindgen::prelude::*;

fn demo_config(seed: u32, tasks: u32, steps: u32) -> ExperimentConfig {
    ExperimentConfig {
        seed: seed as u64,
        tasks: (tasks as usize).clamp(2, 6),
        steps_per_task: (steps as usize).clamp(1, 2000),
        dims: Dims { d: 12, n: 12, l: 1 },
        rank: 2,
        r_plant: 2,
        n_train: 256,
        n_eval: 128,
        snapshot_batch: 16,
        ..ExperimentConfig::default()
    }
}

fn metrics_json(m: &MetricsReport) -> serde_json::Value {
    json!({
        "mfn": m.mfn,
        "maa": m.maa,
        "bwt": m.bwt,
        "fwt": m.fwt,
        "avg": m.avg,
    })
}

fn matrix_rows(t: usize, at: impl Fn(usize, usize) -> f64) -> Vec<Vec<f64>> {
    (0..t).map(|j| (0..t).map(|i| at(j, i)).collect()).collect()
}

fn mean_top_cv(deltas: &[DenseMatrix], rank: usize) -> f64 {
    let mut acc = 0.0;
    for d in deltas {
        let sigma: Vec<f64> = spectrum(d).sigma.into_iter().take(rank).collect();
        let mean = sigma.iter().sum::<f64>() / sigma.len() as f64;
        if mean > 0.0 {
            let var =
                sigma.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / sigma.len() as f64;
            acc += var.sqrt() / mean;
        }
    }
    acc / deltas.len() as f64
}

/// Sequential run of the constrained method and the unconstrained baseline
/// on the same tasks. Returns both accuracy matrices, metrics, and the mean
/// trained-update spectral imbalance of each.
#[wasm_bindgen]
pub fn continual_demo(seed: u32, tasks: u32, steps: u32) -> String {
    let cfg = demo_config(seed, tasks, steps);
    let run = match run_sequence(&cfg) {
        Ok(r) => r,
        Err(e) => return json!({ "error": e.to_string() }).to_string(),
    };
    let base = match baseline_run(&cfg) {
        Ok(b) => b,
        Err(e) => return json!({ "error": e.to_string() }).to_string(),
    };
    let t = run.accuracy.t();
    let method_deltas: Vec<DenseMatrix> = run
        .adapters
        .iter()
        .flat_map(|ups| ups.iter().map(materialize))
        .collect();
    let baseline_deltas: Vec<DenseMatrix> = base.deltas.iter().flatten().cloned().collect();
    json!({
        "tasks": t,
        "method": {
            "matrix": matrix_rows(t, |j, i| run.accuracy.at(j, i)),
            "metrics": metrics_json(&run.metrics),
            "update_cv": mean_top_cv(&method_deltas, cfg.rank),
        },
        "baseline": {
            "matrix": matrix_rows(t, |j, i| base.accuracy.at(j, i)),
            "metrics": metrics_json(&base.metrics),
            "update_cv": mean_top_cv(&baseline_deltas, cfg.rank),
        },
    })
    .to_string()
}

/// Independent per-task adapters, their top-rank spectra, and NAI per task
/// over a dense smoothing grid.
#[wasm_bindgen]
pub fn merge_demo(seed: u32, tasks: u32, steps: u32) -> String {
    let cfg = demo_config(seed, tasks, steps);
    let inner = || -> Result<serde_json::Value, balora::Error> {
        let task_fixtures = make_task_sequence(&cfg)?;
        let base = base_weights(&cfg);
        let adapters = individual_adapters(&cfg)?;

        let zero_shot: Vec<f64> = task_fixtures
            .iter()
            .map(|task| accuracy(&base, task))
            .collect::<Result<_, _>>()?;
        let mut individual = Vec::new();
        for (task, deltas) in task_fixtures.iter().zip(&adapters) {
            let model: Vec<DenseMatrix> =
                base.iter().zip(deltas).map(|(w, d)| w.add(d)).collect();
            individual.push(accuracy(&model, task)?);
        }
        let spectra: Vec<Vec<f64>> = adapters
            .iter()
            .map(|deltas| {
                spectrum(&deltas[0])
                    .sigma
                    .into_iter()
                    .take(cfg.rank)
                    .collect()
            })
            .collect();

        let alphas: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let mut nai_rows = Vec::new();
        let mut mean_nai = Vec::new();
        for &alpha in &alphas {
            let smoothed: Vec<DenseMatrix> = adapters
                .iter()
                .map(|deltas| smooth_adapter(&deltas[0], cfg.rank, alpha))
                .collect::<Result<_, _>>()?;
            let combined = merge(&smoothed)?;
            let merged_model = vec![base[0].add(&combined)];
            let mut row = Vec::new();
            for (i, task) in task_fixtures.iter().enumerate() {
                let acc = accuracy(&merged_model, task)?;
                row.push(nai(acc, zero_shot[i], individual[i])?);
            }
            mean_nai.push(row.iter().sum::<f64>() / row.len() as f64);
            nai_rows.push(row);
        }
        Ok(json!({
            "alphas": alphas,
            "nai": nai_rows,
            "mean_nai": mean_nai,
            "spectra": spectra,
            "zero_shot": zero_shot,
            "individual": individual,
        }))
    };
    match inner() {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

/// Projected optimizer steps on `f(U) = 0.5 ||U - U*||^2` over the
/// restricted manifold. Emits per-step loss and feasibility residuals, and
/// for `d = 3, r = 1` the iterate coordinates for the sphere plot.
#[wasm_bindgen]
pub fn optimizer_trace(seed: u32, d: u32, r: u32, k: u32, steps: u32, lr: f64) -> String {
    let (d, r, k) = (d as usize, r as usize, k as usize);
    let steps = (steps as usize).clamp(1, 5000);
    let inner = || -> Result<serde_json::Value, balora::Error> {
        let empty = Arc::new(ConstraintBasis::empty(d));
        let basis = if k == 0 {
            empty.clone()
        } else {
            let g = random_feasible(&empty, d, k, seed as u64 ^ 0x9e37)?;
            Arc::new(ConstraintBasis::new(g.matrix().clone())?)
        };
        let target = random_feasible(&basis, d, r, seed as u64 ^ 0x51ef)?;
        let mut point = random_feasible(&basis, d, r, seed as u64)?;
        let cfg = InnerOptimizerConfig::sgd(lr.clamp(1e-5, 0.5), 0.9);
        let mut state = OptState::new(d, r, &cfg);
        let mut losses = Vec::with_capacity(steps);
        let mut orth_residuals = Vec::with_capacity(steps);
        let mut cons_residuals = Vec::with_capacity(steps);
        let mut path: Vec<Vec<f64>> = Vec::new();
        let record = d == 3 && r == 1;
        if record {
            path.push(point.matrix().column(0));
        }
        for _ in 0..steps {
            let grad = point.matrix().sub(target.matrix());
            losses.push(0.5 * fro_norm(&grad).powi(2));
            let (next, next_state) = step_constrained(&point, &grad, &state, &cfg)?;
            point = next;
            state = next_state;
            let (orth, cons) = feasibility_residuals(&basis, point.matrix());
            orth_residuals.push(orth);
            cons_residuals.push(cons);
            if record {
                path.push(point.matrix().column(0));
            }
        }
        let constraint_normal: Option<Vec<f64>> = if record && k == 1 {
            basis.basis().map(|g| g.column(0))
        } else {
            None
        };
        Ok(json!({
            "loss": losses,
            "orth_residual": orth_residuals,
            "constraint_residual": cons_residuals,
            "path": path,
            "target": if record { Some(target.matrix().column(0)) } else { None },
            "constraint_normal": constraint_normal,
        }))
    };
    match inner() {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}
