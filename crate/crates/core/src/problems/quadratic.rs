//! Quadratic lower level with a closed-form value function.
//!
//! `f(u; ω) = ½ uᵀHu − ωᵀu`, so `u*(ω) = H⁻¹ω`; with `ℓ(u) = ½‖u − c‖²`
//! the value function is `φ(ω) = ½‖H⁻¹ω − c‖²`, minimized at `ω* = Hc`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gaussian_vector, ProblemInstance, ProblemKind};
use crate::error::{check_dim, invalid, Result};
use crate::linalg::{BoxSet, Matrix, Vector};
use crate::operators::{GradientStep, LowerObjective, ParamLayout, ParamVector};
use crate::solvers::LossFunction;

const OMEGA_BOUND: f64 = 1e3;

#[derive(Debug, Clone)]
pub struct QuadraticOracle {
    pub instance: ProblemInstance,
    hessian: Matrix,
    hessian_inv: Matrix,
    target: Vector,
    eig_min: f64,
    eig_max: f64,
}

/// Random symmetric, strictly diagonally dominant `H` with eigenvalues in
/// roughly `[1, 3.6]`, target `c ~ N(0, I)`, `ω⁰ ~ N(0, I)`, gradient step
/// `η = 1/λ_max(H)`.
pub fn quadratic_oracle(dim: usize, seed: u64) -> Result<QuadraticOracle> {
    if dim == 0 {
        return Err(invalid("oracle dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let off_scale = 0.3 / dim as f64;
    let mut h = Matrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..i {
            let v = off_scale * rng.random_range(-1.0..1.0);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    for i in 0..dim {
        let off: f64 = (0..dim).filter(|&j| j != i).map(|j| h[(i, j)].abs()).sum();
        h[(i, i)] = 1.0 + 2.0 * rng.random_range(0.0..1.0) + off;
    }
    let target = gaussian_vector(&mut rng, dim);
    let omega0 = gaussian_vector(&mut rng, dim);
    QuadraticOracle::new(h, target, omega0, seed)
}

impl QuadraticOracle {
    pub fn new(hessian: Matrix, target: Vector, omega0: Vector, seed: u64) -> Result<Self> {
        let dim = hessian.nrows();
        check_dim("oracle Hessian", dim, hessian.ncols())?;
        check_dim("oracle target", dim, target.len())?;
        check_dim("oracle initial ω", dim, omega0.len())?;
        let eig = hessian.clone().symmetric_eigen().eigenvalues;
        let (eig_min, eig_max) = (eig.min(), eig.max());
        if !(eig_min > 0.0) {
            return Err(invalid("oracle Hessian must be positive definite"));
        }
        let hessian_inv = hessian
            .clone()
            .try_inverse()
            .ok_or_else(|| invalid("oracle Hessian is singular"))?;

        let mut layout = ParamLayout::new();
        let linear = layout.push("linear", dim)?;
        let layout = Arc::new(layout);
        let objective = LowerObjective::Quadratic {
            hessian: hessian.clone(),
            linear,
        };
        let operator = GradientStep::new(objective, 1.0 / eig_max)?;
        let loss = LossFunction::squared_error(target.clone(), 0.5)?;
        let mut metadata = BTreeMap::new();
        metadata.insert("dim".into(), dim as f64);
        metadata.insert("seed".into(), seed as f64);
        let instance = ProblemInstance {
            kind: ProblemKind::QuadraticOracle,
            operator: Arc::new(operator),
            loss,
            omega_init: ParamVector::new(layout, omega0)?,
            omega_box: BoxSet::uniform(dim, -OMEGA_BOUND, OMEGA_BOUND)?,
            u_init: Vector::zeros(dim),
            metadata,
        };
        Ok(Self {
            instance,
            hessian,
            hessian_inv,
            target,
            eig_min,
            eig_max,
        })
    }

    pub fn hessian(&self) -> &Matrix {
        &self.hessian
    }

    pub fn target(&self) -> &Vector {
        &self.target
    }

    pub fn eigen_bounds(&self) -> (f64, f64) {
        (self.eig_min, self.eig_max)
    }

    /// Contraction factor `max_i |1 − ηλ_i|` of the gradient step.
    pub fn contraction(&self) -> f64 {
        1.0 - self.eig_min / self.eig_max
    }

    /// `u*(ω) = H⁻¹ω`
    pub fn fixed_point(&self, omega: &Vector) -> Vector {
        &self.hessian_inv * omega
    }

    /// `φ(ω) = ½‖H⁻¹ω − c‖²`
    pub fn phi(&self, omega: &Vector) -> f64 {
        0.5 * (self.fixed_point(omega) - &self.target).norm_squared()
    }

    /// `∇φ(ω) = H⁻ᵀ(H⁻¹ω − c)`
    pub fn grad_phi(&self, omega: &Vector) -> Vector {
        self.hessian_inv.tr_mul(&(self.fixed_point(omega) - &self.target))
    }

    /// `ω* = Hc`
    pub fn argmin(&self) -> Vector {
        &self.hessian * &self.target
    }

    /// `1/L_φ = λ_min(H)²`, the largest step for which gradient descent on
    /// `φ` is guaranteed to decrease it.
    pub fn safe_outer_step(&self) -> f64 {
        self.eig_min * self.eig_min
    }
}
