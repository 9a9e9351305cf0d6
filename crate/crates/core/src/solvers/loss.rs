//! Upper-level losses `ℓ(u, ω)`.
//!
//! All shipped losses are a data term in `u` plus an optional separable
//! penalty `½ρ‖ω‖²`, so the mixed derivative `∂²ℓ/∂u∂ω` vanishes.

use crate::error::{check_dim, invalid, Result};
use crate::linalg::{spectral_norm, Matrix, Vector};
use crate::operators::ParamVector;

#[derive(Debug, Clone)]
pub enum LossKind {
    /// `scale · Σ_j (u[indices_j] − target_j)²`
    SquaredError {
        indices: Vec<usize>,
        target: Vector,
        scale: f64,
    },
    /// `scale · ‖A u − target‖²`
    LinearSquaredError { map: Matrix, target: Vector, scale: f64 },
    /// No dependence on `u`.
    Zero,
}

#[derive(Debug, Clone)]
pub struct LossFunction {
    kind: LossKind,
    state_dim: usize,
    param_penalty: f64,
    smoothness: f64,
}

impl LossFunction {
    /// `scale · ‖u − target‖²` on every coordinate.
    pub fn squared_error(target: Vector, scale: f64) -> Result<Self> {
        let n = target.len();
        Self::squared_error_on(n, (0..n).collect(), target, scale)
    }

    /// `scale · Σ_j (u[indices_j] − target_j)²` for a state of length `state_dim`.
    pub fn squared_error_on(state_dim: usize, indices: Vec<usize>, target: Vector, scale: f64) -> Result<Self> {
        check_dim("loss target", indices.len(), target.len())?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= state_dim) {
            return Err(invalid(format!("loss index {bad} outside a state of length {state_dim}")));
        }
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != indices.len() {
            return Err(invalid("loss indices must be distinct"));
        }
        Self::checked(
            LossKind::SquaredError {
                indices,
                target,
                scale,
            },
            state_dim,
            2.0 * scale,
        )
    }

    /// `scale · ‖A u − target‖²`.
    pub fn linear_squared_error(map: Matrix, target: Vector, scale: f64) -> Result<Self> {
        check_dim("loss target", map.nrows(), target.len())?;
        let state_dim = map.ncols();
        let smoothness = 2.0 * scale * spectral_norm(&map).powi(2);
        Self::checked(LossKind::LinearSquaredError { map, target, scale }, state_dim, smoothness)
    }

    pub fn zero(state_dim: usize) -> Self {
        Self {
            kind: LossKind::Zero,
            state_dim,
            param_penalty: 0.0,
            smoothness: 0.0,
        }
    }

    fn checked(kind: LossKind, state_dim: usize, smoothness: f64) -> Result<Self> {
        if !(smoothness.is_finite() && smoothness >= 0.0) {
            return Err(invalid("loss scale must be finite and nonnegative"));
        }
        Ok(Self {
            kind,
            state_dim,
            param_penalty: 0.0,
            smoothness,
        })
    }

    /// Adds `½ρ‖ω‖²`.
    pub fn with_param_penalty(mut self, rho: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(invalid(format!("parameter penalty must be nonnegative, got {rho}")));
        }
        self.param_penalty = rho;
        Ok(self)
    }

    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Lipschitz constant `L_ℓ` of `∇_u ℓ`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn value(&self, u: &Vector, w: &ParamVector) -> Result<f64> {
        check_dim("loss input", self.state_dim, u.len())?;
        let data = match &self.kind {
            LossKind::SquaredError {
                indices,
                target,
                scale,
            } => scale * indices.iter().zip(target.iter()).map(|(&i, t)| (u[i] - t).powi(2)).sum::<f64>(),
            LossKind::LinearSquaredError { map, target, scale } => scale * (map * u - target).norm_squared(),
            LossKind::Zero => 0.0,
        };
        Ok(data + 0.5 * self.param_penalty * w.flat().norm_squared())
    }

    pub fn grad_u(&self, u: &Vector) -> Result<Vector> {
        check_dim("loss input", self.state_dim, u.len())?;
        Ok(match &self.kind {
            LossKind::SquaredError {
                indices,
                target,
                scale,
            } => {
                let mut g = Vector::zeros(u.len());
                for (&i, t) in indices.iter().zip(target.iter()) {
                    g[i] = 2.0 * scale * (u[i] - t);
                }
                g
            }
            LossKind::LinearSquaredError { map, target, scale } => map.tr_mul(&(map * u - target)) * (2.0 * scale),
            LossKind::Zero => Vector::zeros(u.len()),
        })
    }

    /// Direct term `∂ℓ/∂ω` at fixed `u`.
    pub fn grad_w(&self, w: &ParamVector) -> Vector {
        w.flat() * self.param_penalty
    }

    /// `∇²_uu ℓ · v`
    pub fn hessian_mul(&self, v: &Vector) -> Vector {
        match &self.kind {
            LossKind::SquaredError { indices, scale, .. } => {
                let mut out = Vector::zeros(v.len());
                for &i in indices {
                    out[i] = 2.0 * scale * v[i];
                }
                out
            }
            LossKind::LinearSquaredError { map, scale, .. } => map.tr_mul(&(map * v)) * (2.0 * scale),
            LossKind::Zero => Vector::zeros(v.len()),
        }
    }
}
