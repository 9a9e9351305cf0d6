//! Projection onto a coordinate subspace: a non-expansive operator whose
//! fixed points form the whole subspace, paired with `ℓ(u) = ½‖u − c‖²`.
//!
//! The bilevel solution is the truncation of `c` onto the subspace; plain
//! fixed-point iteration instead stops at the truncation of `u⁰`.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{ProblemInstance, ProblemKind};
use crate::error::{check_dim, invalid, Result};
use crate::linalg::{BoxSet, Metric, Vector};
use crate::operators::{CoordinateProjection, ParamVector};
use crate::solvers::LossFunction;

#[derive(Debug, Clone)]
pub struct SubspaceCase {
    pub instance: ProblemInstance,
    keep: usize,
    target: Vector,
}

fn truncate(v: &Vector, keep: usize) -> Vector {
    Vector::from_fn(v.len(), |i, _| if i < keep { v[i] } else { 0.0 })
}

pub fn subspace_case(dim: usize, subspace_dims: usize, target: Vector, u0: Vector) -> Result<SubspaceCase> {
    if !(subspace_dims >= 1 && subspace_dims < dim) {
        return Err(invalid(format!(
            "subspace dimension must lie in [1, {dim}), got {subspace_dims}"
        )));
    }
    check_dim("subspace target", dim, target.len())?;
    check_dim("subspace initial state", dim, u0.len())?;
    let operator = CoordinateProjection::new(Metric::identity(dim), subspace_dims)?;
    let loss = LossFunction::squared_error(target.clone(), 0.5)?;
    let mut metadata = BTreeMap::new();
    metadata.insert("dim".into(), dim as f64);
    metadata.insert("subspace_dims".into(), subspace_dims as f64);
    let instance = ProblemInstance {
        kind: ProblemKind::Subspace,
        operator: Arc::new(operator),
        loss,
        omega_init: ParamVector::empty(),
        omega_box: BoxSet::unbounded(0),
        u_init: u0,
        metadata,
    };
    Ok(SubspaceCase {
        instance,
        keep: subspace_dims,
        target,
    })
}

impl SubspaceCase {
    /// `argmin { ℓ(u) : u ∈ Fix(D) }`
    pub fn bilevel_solution(&self) -> Vector {
        truncate(&self.target, self.keep)
    }

    /// Limit of the simplified iteration started at `u0`.
    pub fn simplified_limit(&self, u0: &Vector) -> Vector {
        truncate(u0, self.keep)
    }
}
