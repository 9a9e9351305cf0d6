//! Outer learning loop: projected gradient descent (or Adam) on `φ_K`.

use std::time::Instant;

use super::{residual_frozen, OuterUpdate, SolverConfig};
use crate::error::{check_dim, Error, Result};
use crate::hypergrad::UnrollTape;
use crate::linalg::{all_finite, BoxSet, Vector};
use crate::operators::ParamVector;
use crate::problems::ProblemInstance;

/// One outer iteration, evaluated at the iterate before the update.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRow {
    pub outer_iter: usize,
    pub phi_k: f64,
    pub hypergrad_g_norm: f64,
    pub fp_residual_g_lb: f64,
    pub inner_k: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct OuterTrace {
    pub rows: Vec<OuterRow>,
    pub omega_final: ParamVector,
}

/// `ω − Proj_Ω(ω − g)`: the gradient with components that would leave Ω
/// removed.
pub fn projected_gradient(w: &Vector, g: &Vector, bounds: &BoxSet) -> Result<Vector> {
    Ok(w - bounds.clamp(&(w - g))?)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vector,
    v: Vector,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vector::zeros(dim),
            v: Vector::zeros(dim),
            t: 0,
        }
    }

    /// Unprojected update direction for gradient `g`, to be subtracted.
    pub fn step(&mut self, g: &Vector) -> Vector {
        self.t += 1;
        self.m = &self.m * self.beta1 + g * (1.0 - self.beta1);
        self.v = &self.v * self.beta2 + g.component_mul(g) * (1.0 - self.beta2);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        Vector::from_fn(g.len(), |i, _| {
            self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps)
        })
    }
}

/// Runs `cfg.outer_steps` iterations, re-starting the inner loop from the
/// problem's `u⁰` each time.
pub fn outer_loop(problem: &ProblemInstance, cfg: &SolverConfig) -> Result<OuterTrace> {
    cfg.validate(problem.metric(), &problem.loss)?;
    let t = problem.averaged(cfg.alpha)?;
    let bounds = match &cfg.omega_box {
        Some(b) => problem.omega_box.intersect(b)?,
        None => problem.omega_box.clone(),
    };
    check_dim("parameter box", problem.omega_init.len(), bounds.dim())?;
    let g_lb = problem.metric().lower_metric();
    let mut w = problem.omega_init.with_flat(bounds.clamp(problem.omega_init.flat())?)?;
    let mut adam = Adam::new(w.len(), cfg.outer_step);
    let mut rows = Vec::with_capacity(cfg.outer_steps);
    for step in 1..=cfg.outer_steps {
        let start = Instant::now();
        let tape = UnrollTape::record(&t, &problem.loss, &w, &problem.u_init, cfg)?;
        let grad = tape.backward(&t, &problem.loss, &w, cfg)?;
        let phi = problem.loss.value(tape.final_state(), &w)?;
        if !phi.is_finite() || !all_finite(&grad) {
            return Err(Error::NonFiniteObjective { step });
        }
        let residual = residual_frozen(&t, tape.final_state(), &w, tape.frozen(), &g_lb)?;
        let eps = projected_gradient(w.flat(), &grad, &bounds)?.norm();
        let direction = match cfg.outer_update {
            OuterUpdate::ProjectedGd => grad * cfg.outer_step,
            OuterUpdate::AdaptiveMoments => adam.step(&grad),
        };
        w = w.with_flat(bounds.clamp(&(w.flat() - direction))?)?;
        rows.push(OuterRow {
            outer_iter: step,
            phi_k: phi,
            hypergrad_g_norm: eps,
            fp_residual_g_lb: residual,
            inner_k: cfg.inner_steps,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(OuterTrace { rows, omega_final: w })
}
