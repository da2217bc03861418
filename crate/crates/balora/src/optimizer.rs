//! Projected first-order optimization on the restricted Stiefel manifold.
//!
//! One constrained step runs, in order: tangent projection of the Euclidean
//! gradient, an inner Euclidean optimizer step (SGD-momentum or Adam) on the
//! projected gradient, tangent correction of the produced increment, additive
//! application, and the whitening retraction. Optimizer state lives in
//! ambient coordinates and is deliberately not transported between steps;
//! `project_moments` switches on first-moment projection for ablation.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::manifold::{repair_drift, retract, tangent_project, RestrictedStiefelPoint};
use serde::{Deserialize, Serialize};

/// Inner Euclidean optimizer family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptKind {
    SgdMomentum,
    Adam,
}

/// Configuration of the inner optimizer. Weight decay is decoupled and only
/// ever applied to the scalar scale parameter: decaying a Stiefel factor off
/// the manifold would be undone by the retraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InnerOptimizerConfig {
    pub kind: OptKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps_adam")]
    pub eps_adam: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub project_moments: bool,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps_adam() -> f64 {
    1e-8
}

impl InnerOptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        InnerOptimizerConfig {
            kind: OptKind::SgdMomentum,
            learning_rate,
            momentum,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps_adam: default_eps_adam(),
            weight_decay: 0.0,
            project_moments: false,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        InnerOptimizerConfig {
            kind: OptKind::Adam,
            learning_rate,
            momentum: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps_adam: default_eps_adam(),
            weight_decay: 0.0,
            project_moments: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "{name} must lie in [0, 1), got {v}"
                )));
            }
        }
        if !self.eps_adam.is_finite() || self.eps_adam <= 0.0 {
            return Err(Error::InvalidInput("eps_adam must be positive".to_string()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidInput(
                "weight_decay must be nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Per-parameter optimizer state: step counter plus moment buffers of the
/// parameter's shape (second moment only for Adam).
#[derive(Debug, Clone)]
pub struct OptState {
    pub step_count: u64,
    pub first_moment: DenseMatrix,
    pub second_moment: Option<DenseMatrix>,
}

impl OptState {
    pub fn new(rows: usize, cols: usize, cfg: &InnerOptimizerConfig) -> Self {
        OptState {
            step_count: 0,
            first_moment: DenseMatrix::zeros(rows, cols),
            second_moment: match cfg.kind {
                OptKind::Adam => Some(DenseMatrix::zeros(rows, cols)),
                OptKind::SgdMomentum => None,
            },
        }
    }
}

/// One inner optimizer step on a raw gradient; returns the additive increment
/// and the advanced state. Weight decay is not applied here.
pub fn inner_step(
    g: &DenseMatrix,
    state: &OptState,
    cfg: &InnerOptimizerConfig,
) -> Result<(DenseMatrix, OptState)> {
    cfg.validate()?;
    if !g.same_shape(&state.first_moment) {
        return Err(Error::InvalidInput(format!(
            "gradient is {}x{} but state buffers are {}x{}",
            g.rows(),
            g.cols(),
            state.first_moment.rows(),
            state.first_moment.cols()
        )));
    }
    let t = state.step_count + 1;
    match cfg.kind {
        OptKind::SgdMomentum => {
            let m = state.first_moment.scale(cfg.momentum).add(g);
            let delta = m.scale(-cfg.learning_rate);
            Ok((
                delta,
                OptState {
                    step_count: t,
                    first_moment: m,
                    second_moment: None,
                },
            ))
        }
        OptKind::Adam => {
            let prev_v = state
                .second_moment
                .as_ref()
                .expect("adam state carries a second moment");
            let m = state
                .first_moment
                .scale(cfg.beta1)
                .add(&g.scale(1.0 - cfg.beta1));
            let g_sq = DenseMatrix::from_fn(g.rows(), g.cols(), |i, j| g.at(i, j) * g.at(i, j));
            let v = prev_v.scale(cfg.beta2).add(&g_sq.scale(1.0 - cfg.beta2));
            let bias1 = 1.0 - cfg.beta1.powi(t as i32);
            let bias2 = 1.0 - cfg.beta2.powi(t as i32);
            let delta = DenseMatrix::from_fn(g.rows(), g.cols(), |i, j| {
                let m_hat = m.at(i, j) / bias1;
                let v_hat = v.at(i, j) / bias2;
                -cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps_adam)
            });
            Ok((
                delta,
                OptState {
                    step_count: t,
                    first_moment: m,
                    second_moment: Some(v),
                },
            ))
        }
    }
}

/// Per-step quantities exposed for tests and visualization.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    /// Tangent projection of the Euclidean gradient (the Riemannian gradient).
    pub projected_gradient: DenseMatrix,
    /// Increment after the post-step tangent correction, before application.
    pub corrected_increment: DenseMatrix,
}

/// One full constrained step for `U`, with diagnostics.
pub fn step_constrained_detailed(
    point: &RestrictedStiefelPoint,
    euclid_grad: &DenseMatrix,
    state: &OptState,
    cfg: &InnerOptimizerConfig,
) -> Result<(RestrictedStiefelPoint, OptState, StepDiagnostics)> {
    let point = repair_drift(point)?;
    // Pre-step tangent projection of the gradient.
    let projected_gradient = tangent_project(&point, euclid_grad)?;
    // Inner Euclidean optimizer step in ambient coordinates.
    let (raw_increment, mut state) = inner_step(&projected_gradient, state, cfg)?;
    if cfg.project_moments {
        state.first_moment = tangent_project(&point, &state.first_moment)?;
    }
    // Post-step tangent correction of the increment.
    let corrected_increment = tangent_project(&point, &raw_increment)?;
    // Apply additively, then restore feasibility by the whitening retraction.
    let u_tilde = point.matrix().add(&corrected_increment);
    let next = retract(point.constraint(), &u_tilde)?;
    Ok((
        next,
        state,
        StepDiagnostics {
            projected_gradient,
            corrected_increment,
        },
    ))
}

/// One full constrained step for `U`.
pub fn step_constrained(
    point: &RestrictedStiefelPoint,
    euclid_grad: &DenseMatrix,
    state: &OptState,
    cfg: &InnerOptimizerConfig,
) -> Result<(RestrictedStiefelPoint, OptState)> {
    let (next, state, _) = step_constrained_detailed(point, euclid_grad, state, cfg)?;
    Ok((next, state))
}

/// Plain-Stiefel step for the right factor `V`: identical to
/// [`step_constrained`] with an empty constraint basis, which is exactly what
/// a `V` point carries.
pub fn step_v(
    v: &RestrictedStiefelPoint,
    euclid_grad: &DenseMatrix,
    state: &OptState,
    cfg: &InnerOptimizerConfig,
) -> Result<(RestrictedStiefelPoint, OptState)> {
    step_constrained(v, euclid_grad, state, cfg)
}

/// Euclidean step for the scalar scale, with decoupled weight decay.
pub fn step_scale(
    s: f64,
    grad: f64,
    state: &OptState,
    cfg: &InnerOptimizerConfig,
) -> Result<(f64, OptState)> {
    if !s.is_finite() || !grad.is_finite() {
        return Err(Error::InvalidInput(
            "step_scale requires finite inputs".to_string(),
        ));
    }
    let g = DenseMatrix::new(1, 1, vec![grad])?;
    let (delta, state) = inner_step(&g, state, cfg)?;
    let decayed = s - cfg.learning_rate * cfg.weight_decay * s;
    Ok((decayed + delta.at(0, 0), state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{fro_norm, sym_part};
    use crate::manifold::{
        feasibility_residuals, is_tangent, random_feasible, ConstraintBasis,
    };
    use crate::rng::StreamRng;
    use std::sync::Arc;

    fn scalar_state(cfg: &InnerOptimizerConfig) -> OptState {
        OptState::new(1, 1, cfg)
    }

    #[test]
    fn sgd_and_adam_basic_updates() {
        let cfg = InnerOptimizerConfig::sgd(0.1, 0.0);
        let g = DenseMatrix::new(1, 1, vec![1.0]).unwrap();
        let (delta, state) = inner_step(&g, &scalar_state(&cfg), &cfg).unwrap();
        assert_eq!(delta.at(0, 0), -0.1);
        assert_eq!(state.step_count, 1);

        // First Adam step: bias correction makes |delta| approach lr.
        let cfg = InnerOptimizerConfig::adam(0.001);
        let (delta, _) = inner_step(&g, &scalar_state(&cfg), &cfg).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((delta.at(0, 0) - expected).abs() < 1e-15, "{}", delta.at(0, 0));

        // Zero gradient with zero state moves nothing, for both kinds.
        let zero = DenseMatrix::zeros(1, 1);
        for cfg in [InnerOptimizerConfig::sgd(0.1, 0.9), InnerOptimizerConfig::adam(0.1)] {
            let (delta, _) = inner_step(&zero, &scalar_state(&cfg), &cfg).unwrap();
            assert_eq!(delta.at(0, 0), 0.0);
        }

        // Shape mismatch is rejected.
        let bad = DenseMatrix::zeros(2, 1);
        assert!(inner_step(&bad, &scalar_state(&cfg), &cfg).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = InnerOptimizerConfig::sgd(0.1, 0.0);
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = InnerOptimizerConfig::adam(0.1);
        cfg.beta2 = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_gradient_leaves_the_point_unchanged() {
        let basis = Arc::new(ConstraintBasis::empty(6));
        let point = random_feasible(&basis, 6, 2, 5).unwrap();
        let cfg = InnerOptimizerConfig::adam(0.01);
        let state = OptState::new(6, 2, &cfg);
        let zero = DenseMatrix::zeros(6, 2);
        let (next, _) = step_constrained(&point, &zero, &state, &cfg).unwrap();
        assert!(fro_norm(&next.matrix().sub(point.matrix())) <= 1e-12);
    }

    #[test]
    fn two_dimensional_step_lands_on_the_circle() {
        // d = 2, r = 1, k = 0: from u = (1, 0)^T with tangent gradient
        // (0, g)^T, one SGD step lands at (1, -lr*g)^T normalized.
        let basis = Arc::new(ConstraintBasis::empty(2));
        let u = DenseMatrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let point = RestrictedStiefelPoint::new(Arc::clone(&basis), u).unwrap();
        let g_val = 0.7;
        let lr = 0.05;
        let grad = DenseMatrix::new(2, 1, vec![0.0, g_val]).unwrap();
        let cfg = InnerOptimizerConfig::sgd(lr, 0.0);
        let state = OptState::new(2, 1, &cfg);
        let (next, _) = step_constrained(&point, &grad, &state, &cfg).unwrap();
        let norm = (1.0 + (lr * g_val).powi(2)).sqrt();
        assert!((next.matrix().at(0, 0) - 1.0 / norm).abs() <= 1e-12);
        assert!((next.matrix().at(1, 0) + lr * g_val / norm).abs() <= 1e-12);
    }

    #[test]
    fn corrected_increment_satisfies_the_tangent_constraints() {
        let empty = Arc::new(ConstraintBasis::empty(10));
        let g_point = random_feasible(&empty, 10, 3, 31).unwrap();
        let basis = Arc::new(ConstraintBasis::new(g_point.matrix().clone()).unwrap());
        let point = random_feasible(&basis, 10, 4, 32).unwrap();
        let mut rng = StreamRng::from_stream(33, "opt/increment");
        let cfg = InnerOptimizerConfig::adam(0.01);
        let mut state = OptState::new(10, 4, &cfg);
        let mut current = point;
        for _ in 0..5 {
            let grad = DenseMatrix::from_fn(10, 4, |_, _| rng.normal());
            let (next, next_state, diag) =
                step_constrained_detailed(&current, &grad, &state, &cfg).unwrap();
            let g = basis.basis().unwrap();
            let cons = fro_norm(&g.matmul_tn(&diag.corrected_increment));
            let sym = sym_part(&current.matrix().matmul_tn(&diag.corrected_increment)).unwrap();
            assert!(cons <= 1e-9, "G^T delta = {cons:e}");
            assert!(fro_norm(&sym) <= 1e-9, "sym(U^T delta) = {:e}", fro_norm(&sym));
            assert!(is_tangent(&current, &diag.projected_gradient, 1e-8));
            current = next;
            state = next_state;
        }
    }

    #[test]
    fn long_run_feasibility_drift_stays_below_tolerance() {
        // 1000 steps with random gradients at (d, r, k) = (16, 4, 3).
        let empty = Arc::new(ConstraintBasis::empty(16));
        let g_point = random_feasible(&empty, 16, 3, 41).unwrap();
        let basis = Arc::new(ConstraintBasis::new(g_point.matrix().clone()).unwrap());
        let mut point = random_feasible(&basis, 16, 4, 42).unwrap();
        let cfg = InnerOptimizerConfig::adam(0.005);
        let mut state = OptState::new(16, 4, &cfg);
        let mut rng = StreamRng::from_stream(43, "opt/drift");
        for step in 0..1000 {
            let grad = DenseMatrix::from_fn(16, 4, |_, _| rng.normal());
            let (next, next_state) = step_constrained(&point, &grad, &state, &cfg).unwrap();
            point = next;
            state = next_state;
            let (orth, cons) = feasibility_residuals(&basis, point.matrix());
            assert!(
                orth <= 1e-8 && cons <= 1e-8,
                "step {step}: residuals {orth:e}, {cons:e}"
            );
        }
    }

    #[test]
    fn v_step_equals_constrained_step_with_empty_basis_bitwise() {
        let basis = Arc::new(ConstraintBasis::empty(7));
        let point = random_feasible(&basis, 7, 2, 71).unwrap();
        let grad = DenseMatrix::from_fn(7, 2, |i, j| (i as f64 - j as f64) * 0.3);
        let cfg = InnerOptimizerConfig::adam(0.01);
        let state = OptState::new(7, 2, &cfg);
        let (a, _) = step_v(&point, &grad, &state, &cfg).unwrap();
        let (b, _) = step_constrained(&point, &grad, &state, &cfg).unwrap();
        assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn v_step_preserves_orthonormality_over_long_runs() {
        let basis = Arc::new(ConstraintBasis::empty(12));
        let mut point = random_feasible(&basis, 12, 4, 51).unwrap();
        let cfg = InnerOptimizerConfig::sgd(0.01, 0.9);
        let mut state = OptState::new(12, 4, &cfg);
        let mut rng = StreamRng::from_stream(53, "opt/vdrift");
        for _ in 0..1000 {
            let grad = DenseMatrix::from_fn(12, 4, |_, _| rng.normal());
            let (next, next_state) = step_v(&point, &grad, &state, &cfg).unwrap();
            point = next;
            state = next_state;
        }
        let (orth, _) = feasibility_residuals(&basis, point.matrix());
        assert!(orth <= 1e-8);
    }

    #[test]
    fn scale_step_examples() {
        let cfg = InnerOptimizerConfig::sgd(0.1, 0.0);
        let (s, _) = step_scale(1.0, 2.0, &scalar_state(&cfg), &cfg).unwrap();
        assert!((s - 0.8).abs() < 1e-15);

        // Zero gradient, zero decay: unchanged.
        let (s, _) = step_scale(0.4, 0.0, &scalar_state(&cfg), &cfg).unwrap();
        assert_eq!(s, 0.4);

        // Decoupled weight decay shrinks s toward zero.
        let mut cfg = InnerOptimizerConfig::sgd(0.1, 0.0);
        cfg.weight_decay = 0.5;
        let (s, _) = step_scale(1.0, 0.0, &scalar_state(&cfg), &cfg).unwrap();
        assert!((s - 0.95).abs() < 1e-15);

        // Adam under a constant gradient drifts monotonically downhill.
        let cfg = InnerOptimizerConfig::adam(0.01);
        let mut s = 0.0;
        let mut state = scalar_state(&cfg);
        let mut prev = s;
        for _ in 0..5 {
            let (next, next_state) = step_scale(s, 1.0, &state, &cfg).unwrap();
            assert!(next < prev);
            prev = next;
            s = next;
            state = next_state;
        }
    }

    #[test]
    fn moment_projection_flag_changes_the_trajectory_but_not_feasibility() {
        let basis = Arc::new(ConstraintBasis::empty(8));
        let start = random_feasible(&basis, 8, 2, 61).unwrap();
        let mut rng = StreamRng::from_stream(62, "opt/moments");
        let grads: Vec<DenseMatrix> = (0..20)
            .map(|_| DenseMatrix::from_fn(8, 2, |_, _| rng.normal()))
            .collect();
        let mut ambient = InnerOptimizerConfig::adam(0.02);
        let mut projected = ambient.clone();
        projected.project_moments = true;
        let run = |cfg: &InnerOptimizerConfig| {
            let mut point = start.clone();
            let mut state = OptState::new(8, 2, cfg);
            for g in &grads {
                let (next, next_state) = step_constrained(&point, g, &state, cfg).unwrap();
                point = next;
                state = next_state;
            }
            point
        };
        let a = run(&ambient);
        let b = run(&projected);
        assert!(fro_norm(&a.matrix().sub(b.matrix())) > 1e-8, "flag had no effect");
        let (orth, _) = feasibility_residuals(&basis, b.matrix());
        assert!(orth <= 1e-8);
        ambient.project_moments = false;
    }

    #[test]
    fn sgd_descends_a_smooth_quadratic_on_the_manifold() {
        // f(U) = 0.5 ||U - U*||_F^2 restricted to the manifold; 100 trials.
        let basis = Arc::new(ConstraintBasis::empty(8));
        let cfg = InnerOptimizerConfig::sgd(1e-3, 0.0);
        for trial in 0..100u64 {
            let target = random_feasible(&basis, 8, 2, 1000 + trial).unwrap();
            let point = random_feasible(&basis, 8, 2, 2000 + trial).unwrap();
            let state = OptState::new(8, 2, &cfg);
            let grad = point.matrix().sub(target.matrix());
            let f0 = 0.5 * fro_norm(&grad).powi(2);
            let (next, _) = step_constrained(&point, &grad, &state, &cfg).unwrap();
            let f1 = 0.5 * fro_norm(&next.matrix().sub(target.matrix())).powi(2);
            assert!(f1 <= f0 + 1e-12, "trial {trial}: {f0} -> {f1}");
        }
    }
}
