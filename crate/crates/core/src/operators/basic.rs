//! Parameter-free operators used for constructed test cases and the
//! subspace problem.

use crate::error::{check_dim, invalid, Result};
use crate::linalg::{Metric, Vector};

use super::{ParamOperator, ParamVector};

#[derive(Debug, Clone)]
pub struct Identity {
    metric: Metric,
}

impl Identity {
    pub fn new(metric: Metric) -> Self {
        Self { metric }
    }
}

impl ParamOperator for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn metric(&self) -> &Metric {
        &self.metric
    }

    fn apply(&self, u: &Vector, _w: &ParamVector, _frozen: &[f64]) -> Result<Vector> {
        check_dim("identity", self.dim(), u.len())?;
        Ok(u.clone())
    }

    fn vjp(&self, _u: &Vector, _w: &ParamVector, _f: &[f64], cot: &Vector, _g: &mut Vector) -> Result<Vector> {
        Ok(cot.clone())
    }
}

/// `D(u) = c + ρ (u − c)`: a contraction towards `c` when `|ρ| < 1`.
#[derive(Debug, Clone)]
pub struct Scaling {
    metric: Metric,
    factor: f64,
    center: Vector,
}

impl Scaling {
    pub fn new(metric: Metric, factor: f64, center: Vector) -> Result<Self> {
        check_dim("scaling center", metric.dim(), center.len())?;
        if !factor.is_finite() {
            return Err(invalid("scaling factor must be finite"));
        }
        Ok(Self {
            metric,
            factor,
            center,
        })
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }
}

impl ParamOperator for Scaling {
    fn name(&self) -> &'static str {
        "scaling"
    }

    fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn metric(&self) -> &Metric {
        &self.metric
    }

    fn apply(&self, u: &Vector, _w: &ParamVector, _frozen: &[f64]) -> Result<Vector> {
        check_dim("scaling", self.dim(), u.len())?;
        Ok(&self.center + (u - &self.center) * self.factor)
    }

    fn vjp(&self, _u: &Vector, _w: &ParamVector, _f: &[f64], cot: &Vector, _g: &mut Vector) -> Result<Vector> {
        Ok(cot * self.factor)
    }

    fn contraction_bound(&self) -> f64 {
        self.factor.abs()
    }
}

/// `D(u) = c` for every `u`.
#[derive(Debug, Clone)]
pub struct Constant {
    metric: Metric,
    value: Vector,
}

impl Constant {
    pub fn new(metric: Metric, value: Vector) -> Self {
        Self { metric, value }
    }
}

impl ParamOperator for Constant {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn metric(&self) -> &Metric {
        &self.metric
    }

    fn apply(&self, u: &Vector, _w: &ParamVector, _frozen: &[f64]) -> Result<Vector> {
        check_dim("constant", self.dim(), u.len())?;
        Ok(self.value.clone())
    }

    fn vjp(&self, u: &Vector, _w: &ParamVector, _f: &[f64], _cot: &Vector, _g: &mut Vector) -> Result<Vector> {
        Ok(Vector::zeros(u.len()))
    }

    fn contraction_bound(&self) -> f64 {
        0.0
    }
}

/// Orthogonal projection onto the span of the first `keep` coordinates.
/// Its fixed-point set is that whole subspace.
#[derive(Debug, Clone)]
pub struct CoordinateProjection {
    metric: Metric,
    keep: usize,
}

impl CoordinateProjection {
    pub fn new(metric: Metric, keep: usize) -> Result<Self> {
        if keep > metric.dim() {
            return Err(invalid(format!(
                "cannot keep {keep} coordinates of a {}-dimensional state",
                metric.dim()
            )));
        }
        Ok(Self { metric, keep })
    }

    fn mask(&self, v: &Vector) -> Vector {
        Vector::from_fn(v.len(), |i, _| if i < self.keep { v[i] } else { 0.0 })
    }
}

impl ParamOperator for CoordinateProjection {
    fn name(&self) -> &'static str {
        "coordinate_projection"
    }

    fn dim(&self) -> usize {
        self.metric.dim()
    }

    fn metric(&self) -> &Metric {
        &self.metric
    }

    fn apply(&self, u: &Vector, _w: &ParamVector, _frozen: &[f64]) -> Result<Vector> {
        check_dim("coordinate projection", self.dim(), u.len())?;
        Ok(self.mask(u))
    }

    fn vjp(&self, _u: &Vector, _w: &ParamVector, _f: &[f64], cot: &Vector, _g: &mut Vector) -> Result<Vector> {
        Ok(self.mask(cot))
    }
}
