//! Explicit gradient step `u⁺ = u − η ∇_u f(u; ω)` on a smooth, strongly
//! convex lower-level objective.

use crate::error::{check_dim, invalid, Result};
use crate::linalg::{spectral_norm, Matrix, Metric, Vector};

use super::{ParamOperator, ParamSlot, ParamVector};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Lower-level objectives with analytic gradients and Hessian bounds.
#[derive(Debug, Clone)]
pub enum LowerObjective {
    /// `f(u; ω) = ½ uᵀHu − θᵀu` with `θ` read from `linear`.
    Quadratic { hessian: Matrix, linear: ParamSlot },
    /// `f(u; ω) = (1/n) Σ sigmoid(ω_i) (x_iᵀu − y_i)² + ρ‖u‖²`, one weight
    /// logit per row of `features`.
    WeightedLeastSquares {
        features: Matrix,
        targets: Vector,
        ridge: f64,
        logits: ParamSlot,
    },
}

impl LowerObjective {
    pub fn dim(&self) -> usize {
        match self {
            Self::Quadratic { hessian, .. } => hessian.ncols(),
            Self::WeightedLeastSquares { features, .. } => features.ncols(),
        }
    }

    pub fn value(&self, u: &Vector, w: &ParamVector) -> f64 {
        match self {
            Self::Quadratic { hessian, linear } => {
                let theta = Vector::from_column_slice(w.get(linear));
                0.5 * u.dot(&(hessian * u)) - theta.dot(u)
            }
            Self::WeightedLeastSquares {
                features,
                targets,
                ridge,
                logits,
            } => {
                let r = features * u - targets;
                let n = targets.len() as f64;
                let weighted: f64 = w.get(logits).iter().zip(r.iter()).map(|(l, ri)| sigmoid(*l) * ri * ri).sum();
                weighted / n + ridge * u.norm_squared()
            }
        }
    }

    pub fn gradient(&self, u: &Vector, w: &ParamVector) -> Vector {
        match self {
            Self::Quadratic { hessian, linear } => hessian * u - Vector::from_column_slice(w.get(linear)),
            Self::WeightedLeastSquares {
                features,
                targets,
                ridge,
                logits,
            } => {
                let n = targets.len() as f64;
                let r = features * u - targets;
                let weighted = Vector::from_fn(r.len(), |i, _| sigmoid(w.get(logits)[i]) * r[i]);
                features.tr_mul(&weighted) * (2.0 / n) + u * (2.0 * ridge)
            }
        }
    }

    /// `∇²_uu f · v`
    pub fn hessian_mul(&self, w: &ParamVector, v: &Vector) -> Vector {
        match self {
            Self::Quadratic { hessian, .. } => hessian * v,
            Self::WeightedLeastSquares {
                features,
                targets,
                ridge,
                logits,
            } => {
                let n = targets.len() as f64;
                let xv = features * v;
                let weighted = Vector::from_fn(xv.len(), |i, _| sigmoid(w.get(logits)[i]) * xv[i]);
                features.tr_mul(&weighted) * (2.0 / n) + v * (2.0 * ridge)
            }
        }
    }

    /// Adds `−scale · (∂∇_u f / ∂ω)ᵀ v` into `grad_w`.
    fn accumulate_mixed(&self, u: &Vector, w: &ParamVector, v: &Vector, scale: f64, grad_w: &mut Vector) {
        match self {
            Self::Quadratic { linear, .. } => {
                // ∇_u f = Hu − θ
                for (i, k) in linear.range().enumerate() {
                    grad_w[k] += scale * v[i];
                }
            }
            Self::WeightedLeastSquares {
                features,
                targets,
                logits,
                ..
            } => {
                let n = targets.len() as f64;
                let r = features * u - targets;
                let xv = features * v;
                for (i, k) in logits.range().enumerate() {
                    let s = sigmoid(w.flat()[k]);
                    grad_w[k] -= scale * (2.0 / n) * s * (1.0 - s) * r[i] * xv[i];
                }
            }
        }
    }

    /// Eigenvalue bounds `(μ, L)` of the Hessian valid for every ω.
    pub fn curvature_bounds(&self) -> (f64, f64) {
        match self {
            Self::Quadratic { hessian, .. } => {
                let eig = hessian.clone().symmetric_eigen().eigenvalues;
                (eig.min(), eig.max())
            }
            Self::WeightedLeastSquares {
                features,
                targets,
                ridge,
                ..
            } => {
                let n = targets.len() as f64;
                (2.0 * ridge, 2.0 / n * spectral_norm(features).powi(2) + 2.0 * ridge)
            }
        }
    }
}

/// `u⁺ = u − η ∇_u f(u; ω)`.
#[derive(Debug, Clone)]
pub struct GradientStep {
    objective: LowerObjective,
    step: f64,
    metric: Metric,
    contraction: f64,
}

impl GradientStep {
    pub fn new(objective: LowerObjective, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(invalid(format!("gradient step length must be positive, got {step}")));
        }
        let (lo, hi) = objective.curvature_bounds();
        let contraction = (1.0 - step * lo).abs().max((1.0 - step * hi).abs());
        let metric = Metric::identity(objective.dim());
        Ok(Self {
            objective,
            step,
            metric,
            contraction,
        })
    }

    /// Step `1/L`, which makes the map a contraction with factor `1 − μ/L`.
    pub fn with_inverse_curvature(objective: LowerObjective) -> Result<Self> {
        let (_, hi) = objective.curvature_bounds();
        Self::new(objective, 1.0 / hi)
    }

    pub fn objective(&self) -> &LowerObjective {
        &self.objective
    }

    pub fn step(&self) -> f64 {
        self.step
    }
}

impl ParamOperator for GradientStep {
    fn name(&self) -> &'static str {
        "gradient_step"
    }

    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn metric(&self) -> &Metric {
        &self.metric
    }

    fn apply(&self, u: &Vector, w: &ParamVector, _frozen: &[f64]) -> Result<Vector> {
        check_dim("gradient step", self.dim(), u.len())?;
        Ok(u - self.objective.gradient(u, w) * self.step)
    }

    fn vjp(
        &self,
        u: &Vector,
        w: &ParamVector,
        _frozen: &[f64],
        cot: &Vector,
        grad_w: &mut Vector,
    ) -> Result<Vector> {
        check_dim("gradient step cotangent", self.dim(), cot.len())?;
        self.objective.accumulate_mixed(u, w, cot, self.step, grad_w);
        Ok(cot - self.objective.hessian_mul(w, cot) * self.step)
    }

    fn contraction_bound(&self) -> f64 {
        self.contraction
    }
}
