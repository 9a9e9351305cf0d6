//! Inner fixed-point iterations, the outer learning loop and residual
//! diagnostics.
//!
//! The inner step at iteration `k ≥ 1` is
//!
//! ```text
//! v_l = T(u^{k-1}, ω)
//! v_u = u^{k-1} − s_k G⁻¹ ∇_u ℓ(u^{k-1}, ω),     s_k = s / (k + 1)
//! u^k = Proj_U(μ v_u + (1 − μ) v_l)
//! ```
//!
//! in aggregated mode, and `u^k = Proj_U(v_l)` in simplified mode.

mod loss;
mod outer;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{all_finite, project_box_g, BoxSet, Metric, Vector};
use crate::operators::{KmOperator, ParamVector};

pub use loss::{LossFunction, LossKind};
pub use outer::{outer_loop, projected_gradient, Adam, OuterRow, OuterTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMode {
    Aggregated,
    Simplified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterUpdate {
    ProjectedGd,
    AdaptiveMoments,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub mode: InnerMode,
    pub alpha: f64,
    pub mu: f64,
    /// Base step of the diminishing schedule `s_k = s/(k+1)`.
    pub s: f64,
    pub inner_steps: usize,
    pub outer_step: f64,
    pub outer_steps: usize,
    pub outer_update: OuterUpdate,
    /// Constraint set `U` of the state; `None` means unconstrained.
    pub u_box: Option<BoxSet>,
    /// Extra bounds on ω, intersected with the problem's own box.
    pub omega_box: Option<BoxSet>,
    pub seed: u64,
}

pub const DEFAULT_SEED: u64 = 1126;

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: InnerMode::Aggregated,
            alpha: 0.5,
            mu: 0.1,
            s: 0.5,
            inner_steps: 50,
            outer_step: 1e-2,
            outer_steps: 200,
            outer_update: OuterUpdate::ProjectedGd,
            u_box: None,
            omega_box: None,
            seed: DEFAULT_SEED,
        }
    }
}

impl SolverConfig {
    /// Half of the largest admissible base step, `0.5 · λ_min(G) / L_ℓ`.
    pub fn default_step(metric: &Metric, loss: &LossFunction) -> f64 {
        let l = loss.smoothness();
        if l > 0.0 {
            0.5 * metric.lower_bound() / l
        } else {
            0.5 * metric.lower_bound()
        }
    }

    /// Sets `s` to [`SolverConfig::default_step`].
    pub fn with_default_step(mut self, metric: &Metric, loss: &LossFunction) -> Self {
        self.s = Self::default_step(metric, loss);
        self
    }

    /// `μ`, or exactly 0 in simplified mode.
    pub fn effective_mu(&self) -> f64 {
        match self.mode {
            InnerMode::Aggregated => self.mu,
            InnerMode::Simplified => 0.0,
        }
    }

    /// Checks the fields used by the inner iteration.
    pub fn validate_inner(&self, metric: &Metric, loss: &LossFunction) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if !(self.mu >= 0.0 && self.mu < 1.0) {
            return Err(invalid(format!("mu must lie in [0,1), got {}", self.mu)));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(invalid(format!("s must be positive, got {}", self.s)));
        }
        let l = loss.smoothness();
        if self.mode == InnerMode::Aggregated && l > 0.0 && self.s >= metric.lower_bound() / l {
            return Err(invalid(format!(
                "s = {} violates s < λ_min(G)/L_ℓ = {}",
                self.s,
                metric.lower_bound() / l
            )));
        }
        if let Some(b) = &self.u_box {
            check_dim("state box", metric.dim(), b.dim())?;
        }
        Ok(())
    }

    pub fn validate(&self, metric: &Metric, loss: &LossFunction) -> Result<()> {
        self.validate_inner(metric, loss)?;
        if !(self.outer_step >= 0.0 && self.outer_step.is_finite()) {
            return Err(invalid(format!("outer step must be nonnegative, got {}", self.outer_step)));
        }
        if self.outer_steps == 0 {
            return Err(invalid("at least one outer step is required"));
        }
        Ok(())
    }
}

/// `s_k = s / (k + 1)`.
pub fn step_size(k: usize, s: f64) -> Result<f64> {
    if k < 1 {
        return Err(invalid("step schedule is indexed from k = 1"));
    }
    Ok(s / (k as f64 + 1.0))
}

/// Iterates, `G_lb`-norm fixed-point residuals and loss values of one
/// inner run, all indexed `0..=K`.
#[derive(Debug, Clone)]
pub struct InnerTrace {
    pub iterates: Vec<Vector>,
    pub residuals: Vec<f64>,
    pub loss_values: Vec<f64>,
}

impl InnerTrace {
    pub fn final_state(&self) -> &Vector {
        self.iterates.last().expect("trace holds the initial state")
    }
}

pub(crate) struct Step {
    pub u_next: Vector,
    pub pre_projection: Vector,
    pub s_k: f64,
}

/// One inner iteration `u^{k-1} → u^k`.
pub(crate) fn inner_step(
    t: &KmOperator,
    loss: &LossFunction,
    w: &ParamVector,
    frozen: &[f64],
    u_prev: &Vector,
    k: usize,
    cfg: &SolverConfig,
) -> Result<Step> {
    let s_k = step_size(k, cfg.s)?;
    let v_l = t.apply_frozen(u_prev, w, frozen)?;
    let mu = cfg.effective_mu();
    let z = if mu == 0.0 {
        v_l
    } else {
        let grad = loss.grad_u(u_prev)?;
        let v_u = u_prev - t.metric().apply_inverse(&grad) * s_k;
        v_u * mu + v_l * (1.0 - mu)
    };
    let u_next = match &cfg.u_box {
        Some(b) => project_box_g(&z, b, t.metric())?,
        None => z.clone(),
    };
    if !all_finite(&u_next) {
        return Err(Error::NonFiniteIterate { step: k });
    }
    Ok(Step {
        u_next,
        pre_projection: z,
        s_k,
    })
}

fn residual_frozen(t: &KmOperator, u: &Vector, w: &ParamVector, frozen: &[f64], g_lb: &Metric) -> Result<f64> {
    let tu = t.apply_frozen(u, w, frozen)?;
    g_lb.norm(&(u - tu))
}

/// `‖u − T(u, ω)‖_{G_lb}`.
pub fn fixed_point_residual(t: &KmOperator, u: &Vector, w: &ParamVector, g_lb: &Metric) -> Result<f64> {
    residual_frozen(t, u, w, &t.freeze(w)?, g_lb)
}

/// Runs `cfg.inner_steps` iterations from `u0`, recording every iterate.
pub fn inner_loop(
    t: &KmOperator,
    loss: &LossFunction,
    w: &ParamVector,
    u0: &Vector,
    cfg: &SolverConfig,
) -> Result<InnerTrace> {
    check_dim("initial state", t.dim(), u0.len())?;
    check_dim("loss state", t.dim(), loss.state_dim())?;
    cfg.validate_inner(t.metric(), loss)?;
    let frozen = t.freeze(w)?;
    let g_lb = t.metric().lower_metric();
    let mut trace = InnerTrace {
        iterates: Vec::with_capacity(cfg.inner_steps + 1),
        residuals: Vec::with_capacity(cfg.inner_steps + 1),
        loss_values: Vec::with_capacity(cfg.inner_steps + 1),
    };
    let mut u = u0.clone();
    for k in 1..=cfg.inner_steps {
        trace.residuals.push(residual_frozen(t, &u, w, &frozen, &g_lb)?);
        trace.loss_values.push(loss.value(&u, w)?);
        let next = inner_step(t, loss, w, &frozen, &u, k, cfg)?.u_next;
        trace.iterates.push(std::mem::replace(&mut u, next));
    }
    trace.residuals.push(residual_frozen(t, &u, w, &frozen, &g_lb)?);
    trace.loss_values.push(loss.value(&u, w)?);
    trace.iterates.push(u);
    Ok(trace)
}

/// `√((1 + ln(1 + k)) / k^{1/4})`
pub fn envelope(k: usize) -> f64 {
    let k = k as f64;
    ((1.0 + (1.0 + k).ln()) / k.powf(0.25)).sqrt()
}

/// Checks squared residuals `r_k²`, `k = 1, 2, …`, against the decay
/// envelope: `C` is fitted as the largest `r_k² / envelope(k)` over the
/// first half, and the check passes if every second-half entry satisfies
/// `r_k² ≤ 2 C envelope(k)`.
pub fn envelope_check(residuals: &[f64]) -> Result<(f64, bool)> {
    if residuals.len() < 8 {
        return Err(invalid(format!(
            "envelope check needs at least 8 residuals, got {}",
            residuals.len()
        )));
    }
    let half = residuals.len() / 2;
    let ratio = |i: usize| residuals[i].powi(2) / envelope(i + 1);
    let c = (0..half).map(ratio).fold(0.0, f64::max);
    let pass = (half..residuals.len()).all(|i| residuals[i].powi(2) <= 2.0 * c * envelope(i + 1));
    Ok((c, pass))
}
