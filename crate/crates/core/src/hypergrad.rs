//! Reverse-mode differentiation of `φ_K(ω) = ℓ(u^K(ω), ω)` through the
//! unrolled inner loop, with a central-difference oracle.
//!
//! Per step the reverse pass maps the cotangent `ū` of `u^k` to that of
//! `u^{k-1}`:
//!
//! ```text
//! z̄   = ū ⊙ [coordinate not clamped by Proj_U]
//! v̄_l = (1 − μ) z̄,   v̄_u = μ z̄
//! ū'  = (∂T/∂u)ᵀ v̄_l + v̄_u − s_k ∇²ℓ G⁻¹ v̄_u
//! ω̄  += (∂T/∂ω)ᵀ v̄_l
//! ```
//!
//! Normalization constants returned by `freeze` are held fixed.

use crate::error::{check_dim, invalid, Result};
use crate::linalg::{Metric, Vector};
use crate::operators::{KmOperator, ParamVector};
use crate::solvers::{inner_step, LossFunction, SolverConfig};

/// Saved inputs of one inner step.
#[derive(Debug, Clone)]
pub struct TapeStep {
    pub step: usize,
    pub u_prev: Vector,
    pub pre_projection: Vector,
    pub s_k: f64,
}

/// Record of an unrolled inner run.
#[derive(Debug, Clone)]
pub struct UnrollTape {
    operator: &'static str,
    frozen: Vec<f64>,
    u0: Vector,
    steps: Vec<TapeStep>,
    u_final: Vector,
}

impl UnrollTape {
    pub fn record(
        t: &KmOperator,
        loss: &LossFunction,
        w: &ParamVector,
        u0: &Vector,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        check_dim("initial state", t.dim(), u0.len())?;
        check_dim("loss state", t.dim(), loss.state_dim())?;
        cfg.validate_inner(t.metric(), loss)?;
        let frozen = t.freeze(w)?;
        let mut steps = Vec::with_capacity(cfg.inner_steps);
        let mut u = u0.clone();
        for k in 1..=cfg.inner_steps {
            let s = inner_step(t, loss, w, &frozen, &u, k, cfg)?;
            steps.push(TapeStep {
                step: k,
                u_prev: std::mem::replace(&mut u, s.u_next),
                pre_projection: s.pre_projection,
                s_k: s.s_k,
            });
        }
        Ok(Self {
            operator: t.inner().name(),
            frozen,
            u0: u0.clone(),
            steps,
            u_final: u,
        })
    }

    pub fn operator(&self) -> &'static str {
        self.operator
    }

    pub fn steps(&self) -> &[TapeStep] {
        &self.steps
    }

    pub fn frozen(&self) -> &[f64] {
        &self.frozen
    }

    pub fn final_state(&self) -> &Vector {
        &self.u_final
    }

    /// Re-runs the forward pass from the recorded initial state and
    /// frozen constants.
    pub fn replay(&self, t: &KmOperator, loss: &LossFunction, w: &ParamVector, cfg: &SolverConfig) -> Result<Vector> {
        let mut u = self.u0.clone();
        for rec in &self.steps {
            u = inner_step(t, loss, w, &self.frozen, &u, rec.step, cfg)?.u_next;
        }
        Ok(u)
    }

    /// Smallest distance, over all recorded steps, of an operator
    /// pre-activation to its kink or of a projected coordinate to a bound
    /// of `U`.
    pub fn kink_margin(&self, t: &KmOperator, w: &ParamVector, cfg: &SolverConfig) -> Result<f64> {
        let mut margin = f64::INFINITY;
        for rec in &self.steps {
            margin = margin.min(t.inner().kink_margin(&rec.u_prev, w, &self.frozen)?);
            if let Some(b) = &cfg.u_box {
                margin = margin.min(b.margin(&rec.pre_projection));
            }
        }
        Ok(margin)
    }

    /// Gradient of `ℓ(u^K, ω)` with respect to ω.
    pub fn backward(&self, t: &KmOperator, loss: &LossFunction, w: &ParamVector, cfg: &SolverConfig) -> Result<Vector> {
        let mut grad_w = loss.grad_w(w);
        let mut u_bar = loss.grad_u(&self.u_final)?;
        let mu = cfg.effective_mu();
        let metric: &Metric = t.metric();
        for rec in self.steps.iter().rev() {
            let z_bar = match &cfg.u_box {
                Some(b) => Vector::from_fn(u_bar.len(), |i, _| {
                    if b.clamps(i, rec.pre_projection[i]) {
                        0.0
                    } else {
                        u_bar[i]
                    }
                }),
                None => u_bar,
            };
            u_bar = if mu == 0.0 {
                t.vjp(&rec.u_prev, w, &self.frozen, &z_bar, &mut grad_w)?
            } else {
                let v_l_bar = &z_bar * (1.0 - mu);
                let v_u_bar = &z_bar * mu;
                let through_t = t.vjp(&rec.u_prev, w, &self.frozen, &v_l_bar, &mut grad_w)?;
                let curvature = loss.hessian_mul(&metric.apply_inverse(&v_u_bar));
                through_t + v_u_bar - curvature * rec.s_k
            };
        }
        Ok(grad_w)
    }
}

/// `φ_K(ω)` and `∇φ_K(ω)`.
#[derive(Debug, Clone)]
pub struct Hypergradient {
    pub wrt_omega: Vector,
    pub phi_value: f64,
    pub final_state: Vector,
}

pub fn hypergradient(
    t: &KmOperator,
    loss: &LossFunction,
    w: &ParamVector,
    u0: &Vector,
    cfg: &SolverConfig,
) -> Result<Hypergradient> {
    let tape = UnrollTape::record(t, loss, w, u0, cfg)?;
    let wrt_omega = tape.backward(t, loss, w, cfg)?;
    let phi_value = loss.value(tape.final_state(), w)?;
    Ok(Hypergradient {
        wrt_omega,
        phi_value,
        final_state: tape.u_final,
    })
}

/// `φ_K(ω)` with the operator's normalization constants fixed to `frozen`.
pub fn phi_k(
    t: &KmOperator,
    loss: &LossFunction,
    w: &ParamVector,
    frozen: &[f64],
    u0: &Vector,
    cfg: &SolverConfig,
) -> Result<f64> {
    let mut u = u0.clone();
    for k in 1..=cfg.inner_steps {
        u = inner_step(t, loss, w, frozen, &u, k, cfg)?.u_next;
    }
    loss.value(&u, w)
}

/// Central differences of `φ_K` with per-coordinate step `h (1 + |ω_i|)`.
/// Normalization constants are frozen at `w`.
pub fn fd_hypergradient(
    t: &KmOperator,
    loss: &LossFunction,
    w: &ParamVector,
    u0: &Vector,
    cfg: &SolverConfig,
    h: f64,
) -> Result<Vector> {
    if !(h > 0.0) {
        return Err(invalid(format!("finite-difference step must be positive, got {h}")));
    }
    cfg.validate_inner(t.metric(), loss)?;
    let frozen = t.freeze(w)?;
    let mut out = Vector::zeros(w.len());
    for i in 0..w.len() {
        let hi = h * (1.0 + w.flat()[i].abs());
        let mut plus = w.flat().clone();
        plus[i] += hi;
        let mut minus = w.flat().clone();
        minus[i] -= hi;
        let fp = phi_k(t, loss, &w.with_flat(plus)?, &frozen, u0, cfg)?;
        let fm = phi_k(t, loss, &w.with_flat(minus)?, &frozen, u0, cfg)?;
        out[i] = (fp - fm) / (2.0 * hi);
    }
    Ok(out)
}

/// `‖ad − fd‖ / max(‖ad‖, ‖fd‖, 1e-12)` and whether it is within `tol`.
pub fn gradient_check(ad: &Vector, fd: &Vector, tol: f64) -> Result<(f64, bool)> {
    check_dim("gradient check", ad.len(), fd.len())?;
    let rel = (ad - fd).norm() / ad.norm().max(fd.norm()).max(1e-12);
    Ok((rel, rel <= tol))
}
