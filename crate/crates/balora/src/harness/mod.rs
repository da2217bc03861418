//! Synthetic sequential-task benchmark.
//!
//! Tasks are linear teachers `W* = W0 + mu * P_t` with planted low-rank
//! perturbations whose factor subspaces are sampled mutually orthogonal
//! across tasks (an `overlap` knob blends them toward a shared subspace to
//! induce conflict). Models are evaluated with a clamped explained-variance
//! accuracy on the percent scale, so the exact teacher scores 100 on
//! noiseless data. The continual loop trains one structured task update per
//! layer on the restricted manifold, applies it, and grows the per-layer
//! gradient memory from the task's snapshot; the unconstrained `B * A`
//! baseline shares tasks, data, and evaluation bit for bit.

pub mod metrics;

pub use metrics::{avg, bwt, fwt, maa, metrics_report, mfn, AccuracyMatrix, MetricsReport};

use crate::adapter::{self, init_directions_padded, TaskUpdate};
use crate::error::{Error, Result};
use crate::gpm::GradientMemory;
use crate::linalg::{fro_inner, fro_norm, orthonormalize_columns, DenseMatrix};
use crate::manifold::{ConstraintBasis, RestrictedStiefelPoint};
use crate::optimizer::{
    inner_step, step_constrained, step_scale, step_v, InnerOptimizerConfig, OptState,
};
use crate::rng::StreamRng;
use crate::spectral::{self, smooth_adapter};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Layer shapes: layer 1 maps `n -> d`, deeper layers map `d -> d`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Dims {
    pub d: usize,
    pub n: usize,
    pub l: usize,
}

fn default_seed() -> u64 {
    42
}
fn default_dims() -> Dims {
    Dims { d: 16, n: 16, l: 1 }
}
fn default_rank() -> usize {
    4
}
fn default_r_plant() -> usize {
    4
}
fn default_mu() -> f64 {
    2.0
}
fn default_plant_decay() -> f64 {
    0.5
}
fn default_w0_norm() -> f64 {
    10.0
}
fn default_noise_std() -> f64 {
    0.01
}
fn default_n_train() -> usize {
    1024
}
fn default_n_eval() -> usize {
    512
}
fn default_n_snapshot() -> usize {
    8
}
fn default_snapshot_batch() -> usize {
    32
}
fn default_optimizer() -> InnerOptimizerConfig {
    InnerOptimizerConfig::adam(0.01)
}
fn default_gpm_epsilon() -> f64 {
    crate::gpm::DEFAULT_EPSILON
}
fn default_s_min() -> f64 {
    0.002
}
fn default_s_max() -> f64 {
    0.010
}
fn default_tasks() -> usize {
    3
}
fn default_steps() -> usize {
    500
}
fn default_alpha_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

/// Every knob of a run. Unset fields resolve to the documented defaults and
/// the resolved struct is echoed verbatim into the manifest, so a manifest
/// can be replayed as a config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_dims")]
    pub dims: Dims,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_r_plant")]
    pub r_plant: usize,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_plant_decay")]
    pub plant_decay: f64,
    #[serde(default = "default_w0_norm")]
    pub w0_norm: f64,
    #[serde(default)]
    pub overlap: f64,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    #[serde(default = "default_n_snapshot")]
    pub n_snapshot: usize,
    #[serde(default = "default_snapshot_batch")]
    pub snapshot_batch: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: InnerOptimizerConfig,
    #[serde(default = "default_gpm_epsilon")]
    pub gpm_epsilon: f64,
    #[serde(default = "default_s_min")]
    pub s_min: f64,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    #[serde(rename = "T", default = "default_tasks")]
    pub tasks: usize,
    /// Optional per-task override of `rank`; length T when present.
    #[serde(default)]
    pub rank_per_task: Option<Vec<usize>>,
    #[serde(default = "default_steps")]
    pub steps_per_task: usize,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub module_version: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields carry defaults")
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let Dims { d, n, l } = self.dims;
        if d == 0 || n == 0 || l == 0 {
            return Err(Error::InvalidInput("dims must be positive".to_string()));
        }
        if self.tasks < 2 {
            return Err(Error::InvalidInput("T must be at least 2".to_string()));
        }
        if self.rank == 0 || self.rank > d.min(n) {
            return Err(Error::InvalidInput(format!(
                "rank {} out of range for dims {d}x{n}",
                self.rank
            )));
        }
        if let Some(ranks) = &self.rank_per_task {
            if ranks.len() != self.tasks {
                return Err(Error::InvalidInput(format!(
                    "rank_per_task has {} entries for T = {}",
                    ranks.len(),
                    self.tasks
                )));
            }
            if ranks.iter().any(|&r| r == 0 || r > d.min(n)) {
                return Err(Error::InvalidInput(
                    "rank_per_task entries out of range".to_string(),
                ));
            }
        }
        if self.r_plant == 0 || self.tasks * self.r_plant > d.min(n) {
            return Err(Error::InvalidInput(format!(
                "degenerate dims: T * r_plant = {} needs at most min(d, n) = {}",
                self.tasks * self.r_plant,
                d.min(n)
            )));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::InvalidInput("overlap must lie in [0, 1]".to_string()));
        }
        if self.overlap > 0.0 && (self.tasks + 1) * self.r_plant > d.min(n) {
            return Err(Error::InvalidInput(
                "overlap needs room for one shared plant block".to_string(),
            ));
        }
        if self.n_eval < 32 {
            return Err(Error::InvalidInput("n_eval must be at least 32".to_string()));
        }
        if self.n_train == 0 || self.n_snapshot == 0 || self.snapshot_batch == 0 {
            return Err(Error::InvalidInput(
                "sample counts must be positive".to_string(),
            ));
        }
        if !(self.gpm_epsilon > 0.0 && self.gpm_epsilon <= 1.0) {
            return Err(Error::InvalidInput(
                "gpm_epsilon must lie in (0, 1]".to_string(),
            ));
        }
        if self.noise_std < 0.0 || self.mu <= 0.0 || self.w0_norm <= 0.0 {
            return Err(Error::InvalidInput(
                "noise_std must be nonnegative; mu and w0_norm positive".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.plant_decay) || self.plant_decay == 0.0 {
            return Err(Error::InvalidInput(
                "plant_decay must lie in (0, 1]".to_string(),
            ));
        }
        if self.alpha_grid.is_empty()
            || self.alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a))
        {
            return Err(Error::InvalidInput(
                "alpha_grid must be nonempty with entries in [0, 1]".to_string(),
            ));
        }
        self.optimizer.validate()
    }

    /// Resolved-config manifest: the config itself plus the crate version,
    /// replayable as a config.
    pub fn manifest_json(&self) -> String {
        let mut resolved = self.clone();
        resolved.module_version = Some(env!("CARGO_PKG_VERSION").to_string());
        let mut text = serde_json::to_string_pretty(&resolved).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigError(e.to_string()))
    }

    /// Layer shapes `(rows, cols)` from first to last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let Dims { d, n, l } = self.dims;
        (0..l).map(|i| if i == 0 { (d, n) } else { (d, d) }).collect()
    }

    /// Adapter rank for task `t` (0-indexed): the per-task override when
    /// configured, the global `rank` otherwise.
    pub fn rank_for_task(&self, t: usize) -> usize {
        self.rank_per_task
            .as_ref()
            .and_then(|v| v.get(t))
            .copied()
            .unwrap_or(self.rank)
    }
}

/// One synthetic task: per-layer teachers plus fixed train/eval samples.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub task_id: usize,
    pub teachers: Vec<DenseMatrix>,
    pub x_train: DenseMatrix,
    pub y_train: DenseMatrix,
    pub x_eval: DenseMatrix,
    pub y_eval: DenseMatrix,
    pub noise_std: f64,
}

fn random_matrix(rng: &mut StreamRng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Base weights shared by every run of a seed: Gaussian, rescaled to
/// `w0_norm` per layer.
pub fn base_weights(cfg: &ExperimentConfig) -> Vec<DenseMatrix> {
    let mut rng = StreamRng::from_stream(cfg.seed, "task-gen/w0");
    cfg.layer_shapes()
        .into_iter()
        .map(|(rows, cols)| {
            let w = random_matrix(&mut rng, rows, cols);
            w.scale(cfg.w0_norm / fro_norm(&w))
        })
        .collect()
}

fn chain_forward(weights: &[DenseMatrix], x: &DenseMatrix) -> DenseMatrix {
    let mut out = weights[0].matmul(x);
    for w in &weights[1..] {
        out = w.matmul(&out);
    }
    out
}

/// Deterministic task sequence for a seed: teachers, then fixed train/eval
/// draws per task. Teachers must end up mutually distinct.
pub fn make_task_sequence(cfg: &ExperimentConfig) -> Result<Vec<SyntheticTask>> {
    cfg.validate()?;
    let w0 = base_weights(cfg);
    let t_count = cfg.tasks;
    let p = cfg.r_plant;

    // Decaying plant spectrum, unit Frobenius energy.
    let mut tau: Vec<f64> = (0..p).map(|i| cfg.plant_decay.powi(i as i32)).collect();
    let tau_norm = tau.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut tau {
        *x /= tau_norm;
    }

    // Per-layer pools of mutually orthogonal plant factors.
    let mut perturbations: Vec<Vec<DenseMatrix>> = vec![Vec::new(); t_count];
    for (layer, (rows, cols)) in cfg.layer_shapes().into_iter().enumerate() {
        let shared_blocks = if cfg.overlap > 0.0 { 1 } else { 0 };
        let pool_cols = (t_count + shared_blocks) * p;
        let mut left_rng = StreamRng::from_stream(cfg.seed, &format!("task-gen/plant-left/{layer}"));
        let mut right_rng =
            StreamRng::from_stream(cfg.seed, &format!("task-gen/plant-right/{layer}"));
        let left_pool = orthonormalize_columns(&random_matrix(&mut left_rng, rows, pool_cols));
        let right_pool = orthonormalize_columns(&random_matrix(&mut right_rng, cols, pool_cols));
        for (task, pert) in perturbations.iter_mut().enumerate() {
            let mut c = left_pool.columns(task * p, (task + 1) * p);
            let mut r_fac = right_pool.columns(task * p, (task + 1) * p);
            if cfg.overlap > 0.0 {
                let shared_c = left_pool.columns(t_count * p, t_count * p + p);
                let shared_r = right_pool.columns(t_count * p, t_count * p + p);
                c = orthonormalize_columns(
                    &c.scale(1.0 - cfg.overlap).add(&shared_c.scale(cfg.overlap)),
                );
                r_fac = orthonormalize_columns(
                    &r_fac.scale(1.0 - cfg.overlap).add(&shared_r.scale(cfg.overlap)),
                );
            }
            let scaled = DenseMatrix::from_fn(rows, p, |i, j| c.at(i, j) * tau[j]);
            pert.push(scaled.matmul_nt(&r_fac));
        }
    }

    let mut tasks = Vec::with_capacity(t_count);
    for (t, pert) in perturbations.iter().enumerate() {
        let teachers: Vec<DenseMatrix> = w0
            .iter()
            .zip(pert)
            .map(|(w, p_mat)| w.add(&p_mat.scale(cfg.mu)))
            .collect();
        let mut x_rng = StreamRng::from_stream(cfg.seed, &format!("data/task{t}/x"));
        let mut noise_rng = StreamRng::from_stream(cfg.seed, &format!("data/task{t}/noise"));
        let x_train = random_matrix(&mut x_rng, cfg.dims.n, cfg.n_train);
        let mut y_train = chain_forward(&teachers, &x_train);
        let x_eval = random_matrix(&mut x_rng, cfg.dims.n, cfg.n_eval);
        let mut y_eval = chain_forward(&teachers, &x_eval);
        if cfg.noise_std > 0.0 {
            y_train = y_train.add(&random_matrix(&mut noise_rng, cfg.dims.d, cfg.n_train).scale(cfg.noise_std));
            y_eval = y_eval.add(&random_matrix(&mut noise_rng, cfg.dims.d, cfg.n_eval).scale(cfg.noise_std));
        }
        tasks.push(SyntheticTask {
            task_id: t,
            teachers,
            x_train,
            y_train,
            x_eval,
            y_eval,
            noise_std: cfg.noise_std,
        });
    }

    // Mutual distinctness of teachers (layer-stacked Frobenius distance).
    for a in 0..t_count {
        for b in (a + 1)..t_count {
            let dist: f64 = tasks[a]
                .teachers
                .iter()
                .zip(&tasks[b].teachers)
                .map(|(ta, tb)| fro_norm(&ta.sub(tb)).powi(2))
                .sum::<f64>()
                .sqrt();
            let w0_scale: f64 = w0.iter().map(|w| fro_norm(w).powi(2)).sum::<f64>().sqrt();
            if dist <= 0.1 * w0_scale {
                return Err(Error::InvalidInput(format!(
                    "teachers {a} and {b} are not distinct: distance {dist:.3} vs scale {w0_scale:.3}"
                )));
            }
        }
    }
    Ok(tasks)
}

/// Clamped explained-variance accuracy on the percent scale:
/// `100 * max(0, 1 - MSE / Var)` over the task's evaluation set.
pub fn accuracy(model: &[DenseMatrix], task: &SyntheticTask) -> Result<f64> {
    let m = task.x_eval.cols();
    if m == 0 {
        return Err(Error::InvalidInput("empty evaluation set".to_string()));
    }
    let predictions = chain_forward(model, &task.x_eval);
    let diff = predictions.sub(&task.y_eval);
    let mse = fro_norm(&diff).powi(2) / m as f64;
    let d = task.y_eval.rows();
    let mut mean = vec![0.0; d];
    for i in 0..d {
        for s in 0..m {
            mean[i] += task.y_eval.at(i, s);
        }
        mean[i] /= m as f64;
    }
    let mut var = 0.0;
    for i in 0..d {
        for s in 0..m {
            let c = task.y_eval.at(i, s) - mean[i];
            var += c * c;
        }
    }
    var /= m as f64;
    if var <= 0.0 {
        return Err(Error::InvalidInput(
            "evaluation targets have zero variance".to_string(),
        ));
    }
    Ok(100.0 * (1.0 - mse / var).max(0.0))
}

/// Mean training loss `0.5 * ||f(X) - Y||_F^2 / m` of the layer chain and
/// its per-layer Euclidean weight gradients.
pub fn chain_loss_grads(
    weights: &[DenseMatrix],
    x: &DenseMatrix,
    y: &DenseMatrix,
) -> (f64, Vec<DenseMatrix>) {
    let depth = weights.len();
    let mut acts = Vec::with_capacity(depth + 1);
    acts.push(x.clone());
    for w in weights {
        let next = w.matmul(acts.last().expect("nonempty"));
        acts.push(next);
    }
    let m = x.cols() as f64;
    let diff = acts[depth].sub(y);
    let loss = 0.5 * fro_norm(&diff).powi(2) / m;
    let mut upstream = diff.scale(1.0 / m);
    let mut grads = vec![DenseMatrix::zeros(1, 1); depth];
    for layer in (0..depth).rev() {
        grads[layer] = upstream.matmul_nt(&acts[layer]);
        if layer > 0 {
            upstream = weights[layer].matmul_tn(&upstream);
        }
    }
    (loss, grads)
}

/// Analytic Euclidean gradients of the task loss with respect to the
/// structured parameters of one layer, all evaluated at the same weights.
pub fn structured_grads(
    dw: &DenseMatrix,
    s: f64,
    u: &DenseMatrix,
    v: &DenseMatrix,
    uv: &DenseMatrix,
) -> (DenseMatrix, DenseMatrix, f64) {
    let g_u = dw.matmul(v).scale(s);
    let g_v = dw.matmul_tn(u).scale(s); // dW^T U, n x r
    let g_s = fro_inner(dw, uv).expect("shapes agree");
    (g_u, g_v, g_s)
}

/// Per-minibatch gradient snapshots for one task: the mean gradient feeds
/// initialization; the column-normalized stack feeds the gradient memory.
pub struct SnapshotPair {
    pub init: DenseMatrix,
    pub gpm: DenseMatrix,
}

pub fn gradient_snapshots(
    weights: &[DenseMatrix],
    task: &SyntheticTask,
    cfg: &ExperimentConfig,
) -> Vec<SnapshotPair> {
    let mut rng = StreamRng::from_stream(cfg.seed, &format!("snapshot/task{}", task.task_id));
    let depth = weights.len();
    let mut means: Vec<Option<DenseMatrix>> = vec![None; depth];
    let mut stacks: Vec<Option<DenseMatrix>> = vec![None; depth];
    for _ in 0..cfg.n_snapshot {
        let cols: Vec<usize> = (0..cfg.snapshot_batch)
            .map(|_| rng.below(task.x_train.cols()))
            .collect();
        let xb = DenseMatrix::from_fn(task.x_train.rows(), cols.len(), |i, j| {
            task.x_train.at(i, cols[j])
        });
        let yb = DenseMatrix::from_fn(task.y_train.rows(), cols.len(), |i, j| {
            task.y_train.at(i, cols[j])
        });
        let (_, grads) = chain_loss_grads(weights, &xb, &yb);
        for (layer, g) in grads.into_iter().enumerate() {
            means[layer] = Some(match means[layer].take() {
                Some(acc) => acc.add(&g),
                None => g.clone(),
            });
            stacks[layer] = Some(match stacks[layer].take() {
                Some(acc) => acc.hcat(&g),
                None => g,
            });
        }
    }
    means
        .into_iter()
        .zip(stacks)
        .map(|(mean, stack)| {
            let init = mean.expect("snapshot count > 0").scale(1.0 / cfg.n_snapshot as f64);
            let mut gpm = stack.expect("snapshot count > 0");
            for j in 0..gpm.cols() {
                let col = gpm.column(j);
                let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-300 {
                    let scaled: Vec<f64> = col.iter().map(|x| x / norm).collect();
                    gpm.set_column(j, &scaled);
                }
            }
            SnapshotPair { init, gpm }
        })
        .collect()
}

fn with_context(e: Error, ctx: &str) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{ctx}: {m}")),
        Error::RankDeficient(m) => Error::RankDeficient(format!("{ctx}: {m}")),
        Error::InfeasiblePoint(m) => Error::InfeasiblePoint(format!("{ctx}: {m}")),
        Error::ConfigError(m) => Error::ConfigError(format!("{ctx}: {m}")),
        other => other,
    }
}

/// Everything a method run produces.
pub struct RunOutput {
    pub accuracy: AccuracyMatrix,
    pub metrics: MetricsReport,
    /// Per task, per layer.
    pub adapters: Vec<Vec<TaskUpdate>>,
    /// Final per-layer memories.
    pub memories: Vec<GradientMemory>,
    pub manifest: String,
}

/// The continual loop: snapshot, projected low-rank init, restricted-manifold
/// training of `(s, U, V)`, weight application, memory growth, and a full
/// evaluation row (seen and unseen tasks) after every task.
pub fn run_sequence(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let tasks = make_task_sequence(cfg)?;
    let mut weights = base_weights(cfg);
    let depth = weights.len();
    let mut memories: Vec<GradientMemory> = weights
        .iter()
        .map(|w| GradientMemory::init(w.rows(), cfg.gpm_epsilon))
        .collect::<Result<_>>()?;
    let mut adapters: Vec<Vec<TaskUpdate>> = Vec::with_capacity(cfg.tasks);
    let mut cells = vec![0.0; cfg.tasks * cfg.tasks];

    for (t, task) in tasks.iter().enumerate() {
        let rank = cfg.rank_for_task(t);
        let snaps = gradient_snapshots(&weights, task, cfg);

        struct LayerTrain {
            u: RestrictedStiefelPoint,
            v: RestrictedStiefelPoint,
            s: f64,
            u_state: OptState,
            v_state: OptState,
            s_state: OptState,
        }
        let mut layers: Vec<LayerTrain> = Vec::with_capacity(depth);
        for (layer, snap) in snaps.iter().enumerate() {
            let ctx = format!("task {t} layer {layer} init");
            let pad_seed = StreamRng::from_stream(cfg.seed, &format!("init/method/task{t}/layer{layer}"))
                .next_u64();
            let (u0, v0) = init_directions_padded(&snap.init, &memories[layer], rank, pad_seed)
                .map_err(|e| with_context(e, &ctx))?;
            let u = RestrictedStiefelPoint::new(memories[layer].basis().clone(), u0)
                .map_err(|e| with_context(e, &ctx))?;
            let v_basis = std::sync::Arc::new(ConstraintBasis::empty(v0.rows()));
            let v = RestrictedStiefelPoint::new(v_basis, v0).map_err(|e| with_context(e, &ctx))?;
            let s = adapter::init_scale(layer + 1, depth, cfg.s_min, cfg.s_max)?;
            layers.push(LayerTrain {
                u_state: OptState::new(weights[layer].rows(), rank, &cfg.optimizer),
                v_state: OptState::new(weights[layer].cols(), rank, &cfg.optimizer),
                s_state: OptState::new(1, 1, &cfg.optimizer),
                u,
                v,
                s,
            });
        }

        for step in 0..cfg.steps_per_task {
            let mut uvs = Vec::with_capacity(depth);
            let mut effective = Vec::with_capacity(depth);
            for (layer, state) in layers.iter().enumerate() {
                let uv = state.u.matrix().matmul_nt(state.v.matrix());
                effective.push(weights[layer].add(&uv.scale(state.s)));
                uvs.push(uv);
            }
            let (_, dws) = chain_loss_grads(&effective, &task.x_train, &task.y_train);
            for (layer, state) in layers.iter_mut().enumerate() {
                let ctx = format!("task {t} layer {layer} step {step}");
                let (g_u, g_v, g_s) = structured_grads(
                    &dws[layer],
                    state.s,
                    state.u.matrix(),
                    state.v.matrix(),
                    &uvs[layer],
                );
                let (u_next, u_state) =
                    step_constrained(&state.u, &g_u, &state.u_state, &cfg.optimizer)
                        .map_err(|e| with_context(e, &ctx))?;
                let (v_next, v_state) = step_v(&state.v, &g_v, &state.v_state, &cfg.optimizer)
                    .map_err(|e| with_context(e, &ctx))?;
                let (s_next, s_state) = step_scale(state.s, g_s, &state.s_state, &cfg.optimizer)
                    .map_err(|e| with_context(e, &ctx))?;
                state.u = u_next;
                state.v = v_next;
                state.s = s_next;
                state.u_state = u_state;
                state.v_state = v_state;
                state.s_state = s_state;
            }
        }

        let mut task_updates = Vec::with_capacity(depth);
        for (layer, state) in layers.into_iter().enumerate() {
            let update = TaskUpdate::new(layer, state.s, state.u, state.v)?;
            weights[layer] = adapter::apply(&weights[layer], &update)?;
            task_updates.push(update);
        }
        for (layer, snap) in snaps.iter().enumerate() {
            let ctx = format!("task {t} layer {layer} memory");
            memories[layer] = memories[layer]
                .update(&snap.gpm)
                .map_err(|e| with_context(e, &ctx))?;
        }
        adapters.push(task_updates);

        for (i, eval_task) in tasks.iter().enumerate() {
            cells[t * cfg.tasks + i] = accuracy(&weights, eval_task)?;
        }
    }

    let accuracy_matrix = AccuracyMatrix::new(cfg.tasks, cells)?;
    let metrics = metrics_report(&accuracy_matrix)?;
    Ok(RunOutput {
        accuracy: accuracy_matrix,
        metrics,
        adapters,
        memories,
        manifest: cfg.manifest_json(),
    })
}

/// Unconstrained low-rank adapter trained from `start` on one task with the
/// plain inner optimizer: `dW = B * A`, `B` zero-initialized, `A` Gaussian.
fn train_unconstrained(
    start: &[DenseMatrix],
    task: &SyntheticTask,
    cfg: &ExperimentConfig,
    stream_tag: &str,
) -> Result<Vec<DenseMatrix>> {
    let depth = start.len();
    let rank = cfg.rank_for_task(task.task_id);
    let mut b_mats = Vec::with_capacity(depth);
    let mut a_mats = Vec::with_capacity(depth);
    let mut b_states = Vec::with_capacity(depth);
    let mut a_states = Vec::with_capacity(depth);
    for w in start {
        let mut rng = StreamRng::from_stream(
            cfg.seed,
            &format!("{stream_tag}/task{}/layer{}", task.task_id, b_mats.len()),
        );
        let scale = 1.0 / (w.cols() as f64).sqrt();
        a_mats.push(DenseMatrix::from_fn(rank, w.cols(), |_, _| rng.normal() * scale));
        b_mats.push(DenseMatrix::zeros(w.rows(), rank));
        b_states.push(OptState::new(w.rows(), rank, &cfg.optimizer));
        a_states.push(OptState::new(rank, w.cols(), &cfg.optimizer));
    }
    for _ in 0..cfg.steps_per_task {
        let effective: Vec<DenseMatrix> = start
            .iter()
            .zip(b_mats.iter().zip(&a_mats))
            .map(|(w, (b, a))| w.add(&b.matmul(a)))
            .collect();
        let (_, dws) = chain_loss_grads(&effective, &task.x_train, &task.y_train);
        for layer in 0..depth {
            let g_b = dws[layer].matmul_nt(&a_mats[layer]);
            let g_a = b_mats[layer].matmul_tn(&dws[layer]);
            let (delta_b, b_state) = inner_step(&g_b, &b_states[layer], &cfg.optimizer)?;
            let (delta_a, a_state) = inner_step(&g_a, &a_states[layer], &cfg.optimizer)?;
            b_mats[layer] = b_mats[layer].add(&delta_b);
            a_mats[layer] = a_mats[layer].add(&delta_a);
            b_states[layer] = b_state;
            a_states[layer] = a_state;
        }
    }
    Ok(b_mats
        .iter()
        .zip(&a_mats)
        .map(|(b, a)| b.matmul(a))
        .collect())
}

/// A baseline run's products.
pub struct BaselineOutput {
    pub accuracy: AccuracyMatrix,
    pub metrics: MetricsReport,
    /// Per task, per layer materialized updates.
    pub deltas: Vec<Vec<DenseMatrix>>,
    pub manifest: String,
}

/// The unconstrained sequential baseline on the identical task sequence:
/// same tasks, same data, same evaluation; only the parameterization and the
/// plain optimizer differ.
pub fn baseline_run(cfg: &ExperimentConfig) -> Result<BaselineOutput> {
    cfg.validate()?;
    let tasks = make_task_sequence(cfg)?;
    let mut weights = base_weights(cfg);
    let mut deltas: Vec<Vec<DenseMatrix>> = Vec::with_capacity(cfg.tasks);
    let mut cells = vec![0.0; cfg.tasks * cfg.tasks];
    for (t, task) in tasks.iter().enumerate() {
        let task_deltas = train_unconstrained(&weights, task, cfg, "init/baseline")?;
        for (w, delta) in weights.iter_mut().zip(&task_deltas) {
            *w = w.add(delta);
        }
        deltas.push(task_deltas);
        for (i, eval_task) in tasks.iter().enumerate() {
            cells[t * cfg.tasks + i] = accuracy(&weights, eval_task)?;
        }
    }
    let accuracy_matrix = AccuracyMatrix::new(cfg.tasks, cells)?;
    let metrics = metrics_report(&accuracy_matrix)?;
    Ok(BaselineOutput {
        accuracy: accuracy_matrix,
        metrics,
        deltas,
        manifest: cfg.manifest_json(),
    })
}

/// Result table of the smoothing-then-merging experiment.
pub struct MergeReport {
    pub alpha_grid: Vec<f64>,
    pub zero_shot: Vec<f64>,
    pub individual: Vec<f64>,
    /// `nai[alpha_index][task]`.
    pub nai: Vec<Vec<f64>>,
    pub mean_nai: Vec<f64>,
    pub manifest: String,
}

impl MergeReport {
    /// CSV: `alpha,task1,...,taskT,mean`.
    pub fn to_csv(&self) -> String {
        let t = self.zero_shot.len();
        let mut out = String::from("alpha");
        for i in 1..=t {
            let _ = write!(out, ",task{i}");
        }
        out.push_str(",mean\n");
        for (row, alpha) in self.alpha_grid.iter().enumerate() {
            let _ = write!(out, "{alpha}");
            for i in 0..t {
                let _ = write!(out, ",{:.6}", self.nai[row][i]);
            }
            let _ = writeln!(out, ",{:.6}", self.mean_nai[row]);
        }
        out
    }
}

/// One unconstrained adapter per task, each trained independently from the
/// base weights (not sequentially). Returned as `[task][layer]` updates.
pub fn individual_adapters(cfg: &ExperimentConfig) -> Result<Vec<Vec<DenseMatrix>>> {
    cfg.validate()?;
    let tasks = make_task_sequence(cfg)?;
    let base = base_weights(cfg);
    tasks
        .iter()
        .map(|task| train_unconstrained(&base, task, cfg, "init/merge"))
        .collect()
}

/// Trains one adapter per task independently from the base weights, then for
/// each smoothing ratio in the grid smooths every adapter's spectrum, merges
/// them all, and scores the normalized accuracy improvement per task.
pub fn merge_experiment(cfg: &ExperimentConfig) -> Result<MergeReport> {
    cfg.validate()?;
    if cfg.tasks < 2 {
        return Err(Error::InvalidInput(
            "merge experiment needs at least two tasks".to_string(),
        ));
    }
    let tasks = make_task_sequence(cfg)?;
    let base = base_weights(cfg);
    let zero_shot: Vec<f64> = tasks
        .iter()
        .map(|task| accuracy(&base, task))
        .collect::<Result<_>>()?;

    let per_task_deltas = individual_adapters(cfg)?;
    let mut individual = Vec::with_capacity(cfg.tasks);
    for (task, task_deltas) in tasks.iter().zip(&per_task_deltas) {
        let model: Vec<DenseMatrix> = base
            .iter()
            .zip(task_deltas)
            .map(|(w, d)| w.add(d))
            .collect();
        individual.push(accuracy(&model, task)?);
    }

    let depth = base.len();
    let mut nai_rows = Vec::with_capacity(cfg.alpha_grid.len());
    let mut means = Vec::with_capacity(cfg.alpha_grid.len());
    for &alpha in &cfg.alpha_grid {
        let mut merged = base.clone();
        for (t, task_deltas) in per_task_deltas.iter().enumerate() {
            for layer in 0..depth {
                let smoothed = smooth_adapter(&task_deltas[layer], cfg.rank_for_task(t), alpha)?;
                merged[layer] = merged[layer].add(&smoothed);
            }
        }
        let mut row = Vec::with_capacity(cfg.tasks);
        for (i, task) in tasks.iter().enumerate() {
            let merged_acc = accuracy(&merged, task)?;
            row.push(spectral::nai(merged_acc, zero_shot[i], individual[i])?);
        }
        means.push(row.iter().sum::<f64>() / row.len() as f64);
        nai_rows.push(row);
    }
    Ok(MergeReport {
        alpha_grid: cfg.alpha_grid.clone(),
        zero_shot,
        individual,
        nai: nai_rows,
        mean_nai: means,
        manifest: cfg.manifest_json(),
    })
}
