//! Dense vectors and matrices, the diagonal metric geometry, proximal
//! primitives and spectral-norm estimation.
//!
//! Vectors and matrices are plain `nalgebra` dense types. Everything that
//! depends on a metric assumes it is diagonal, which keeps the metric
//! projection, inverse and square roots exact and elementwise.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Iteration cap used whenever a spectral norm is estimated without
/// explicit settings.
pub const POWER_ITERATIONS: usize = 200;
/// Relative Rayleigh-quotient change that stops power iteration early.
pub const POWER_TOLERANCE: f64 = 1e-10;

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// A diagonal positive-definite metric `G` together with the scalar bounds
/// `lower_bound * I <= G <= upper_bound * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    diag: Vector,
    lower_bound: f64,
    upper_bound: f64,
}

impl Metric {
    pub fn new(diag: Vector, lower_bound: f64, upper_bound: f64) -> Result<Self> {
        if diag.is_empty() {
            return Err(invalid("metric must have at least one entry"));
        }
        if !(lower_bound > 0.0 && lower_bound.is_finite()) {
            return Err(invalid(format!("metric lower bound must be positive, got {lower_bound}")));
        }
        if !(upper_bound >= lower_bound && upper_bound.is_finite()) {
            return Err(invalid(format!(
                "metric upper bound {upper_bound} below lower bound {lower_bound}"
            )));
        }
        if let Some(bad) = diag.iter().find(|&&g| !(g >= lower_bound && g <= upper_bound)) {
            return Err(invalid(format!(
                "metric entry {bad} outside [{lower_bound}, {upper_bound}]"
            )));
        }
        Ok(Self {
            diag,
            lower_bound,
            upper_bound,
        })
    }

    /// Metric whose bounds are the extreme diagonal entries.
    pub fn from_diag(diag: Vector) -> Result<Self> {
        let lo = diag.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(diag, lo, hi)
    }

    pub fn uniform(dim: usize, value: f64) -> Result<Self> {
        Self::new(Vector::from_element(dim, value), value, value)
    }

    pub fn identity(dim: usize) -> Self {
        Self::uniform(dim, 1.0).expect("identity metric is valid")
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &Vector {
        &self.diag
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    /// `G_lb = lower_bound * I`, the metric fixed-point residuals are measured in.
    pub fn lower_metric(&self) -> Metric {
        Metric::uniform(self.dim(), self.lower_bound).expect("lower bound already validated")
    }

    /// Same metric repeated `times` over consecutive blocks.
    pub fn tiled(&self, times: usize) -> Metric {
        let n = self.dim();
        let diag = Vector::from_fn(n * times, |i, _| self.diag[i % n]);
        Metric {
            diag,
            lower_bound: self.lower_bound,
            upper_bound: self.upper_bound,
        }
    }

    pub fn norm(&self, v: &Vector) -> Result<f64> {
        g_norm(v, self)
    }

    /// `G v`
    pub fn apply(&self, v: &Vector) -> Vector {
        v.component_mul(&self.diag)
    }

    /// `G^{-1} v`
    pub fn apply_inverse(&self, v: &Vector) -> Vector {
        v.component_div(&self.diag)
    }

    /// `G^{1/2} v`
    pub fn apply_sqrt(&self, v: &Vector) -> Vector {
        Vector::from_fn(v.len(), |i, _| v[i] * self.diag[i].sqrt())
    }

    /// `G^{-1/2} v`
    pub fn apply_inv_sqrt(&self, v: &Vector) -> Vector {
        Vector::from_fn(v.len(), |i, _| v[i] / self.diag[i].sqrt())
    }
}

/// `sqrt(v' G v)` for diagonal `G`.
pub fn g_norm(v: &Vector, g: &Metric) -> Result<f64> {
    check_dim("g_norm", g.dim(), v.len())?;
    Ok(v
        .iter()
        .zip(g.diag.iter())
        .map(|(x, w)| w * x * x)
        .sum::<f64>()
        .sqrt())
}

/// Scalar soft threshold. Returns a positive zero inside the dead zone.
#[inline]
pub fn shrink(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Componentwise `sign(v_i) * max(|v_i| - tau_i, 0)`, the proximal map of
/// the weighted l1 norm.
pub fn soft_threshold(v: &Vector, tau: &Vector) -> Result<Vector> {
    check_dim("soft_threshold", v.len(), tau.len())?;
    if let Some(t) = tau.iter().find(|t| !(**t >= 0.0)) {
        return Err(invalid(format!("soft-threshold weights must be nonnegative, got {t}")));
    }
    Ok(v.zip_map(tau, shrink))
}

/// Largest singular value of `m` by power iteration on `m' m`.
///
/// Starts from the normalized all-ones vector. If that start happens to be
/// annihilated by a nonzero matrix it restarts from the basis vector of the
/// heaviest column, so the estimate stays deterministic. The estimate
/// `||m v_k||` never decreases across iterations.
pub fn power_iteration_norm(m: &Matrix, iters: usize, tol: f64) -> Result<f64> {
    if iters == 0 {
        return Err(invalid("power iteration needs at least one iteration"));
    }
    if !(tol > 0.0) {
        return Err(invalid(format!("power iteration tolerance must be positive, got {tol}")));
    }
    let cols = m.ncols();
    if cols == 0 || m.iter().all(|x| *x == 0.0) {
        return Ok(0.0);
    }
    let mut v = Vector::from_element(cols, 1.0 / (cols as f64).sqrt());
    if (m * &v).norm() == 0.0 {
        let heaviest = (0..cols)
            .max_by(|&a, &b| m.column(a).norm().total_cmp(&m.column(b).norm()))
            .unwrap_or(0);
        v = Vector::zeros(cols);
        v[heaviest] = 1.0;
    }
    let mut estimate = 0.0;
    for _ in 0..iters {
        let mv = m * &v;
        let next = mv.norm();
        let w = m.tr_mul(&mv);
        let wn = w.norm();
        let converged = (next - estimate).abs() <= tol * next;
        estimate = next;
        if wn == 0.0 || converged {
            break;
        }
        v = w / wn;
    }
    Ok(estimate)
}

/// Spectral norm with the crate-wide iteration settings.
pub fn spectral_norm(m: &Matrix) -> f64 {
    power_iteration_norm(m, POWER_ITERATIONS, POWER_TOLERANCE).expect("fixed settings are valid")
}

/// Axis-aligned box `{ x : lo <= x <= hi }`; infinite entries mean unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lo: Vector,
    hi: Vector,
}

impl BoxSet {
    pub fn new(lo: Vector, hi: Vector) -> Result<Self> {
        check_dim("box bounds", lo.len(), hi.len())?;
        for (l, h) in lo.iter().zip(hi.iter()) {
            if l.is_nan() || h.is_nan() || l > h {
                return Err(invalid(format!("box bound lo={l} exceeds hi={h}")));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lo: Vector::from_element(dim, f64::NEG_INFINITY),
            hi: Vector::from_element(dim, f64::INFINITY),
        }
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(Vector::from_element(dim, lo), Vector::from_element(dim, hi))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &Vector {
        &self.lo
    }

    pub fn hi(&self) -> &Vector {
        &self.hi
    }

    pub fn is_unbounded(&self) -> bool {
        self.lo.iter().all(|l| *l == f64::NEG_INFINITY) && self.hi.iter().all(|h| *h == f64::INFINITY)
    }

    /// Intersection with another box of the same dimension.
    pub fn intersect(&self, other: &BoxSet) -> Result<BoxSet> {
        check_dim("box intersection", self.dim(), other.dim())?;
        BoxSet::new(self.lo.sup(&other.lo), self.hi.inf(&other.hi))
    }

    /// Pins coordinate `i` to `value` (both bounds).
    pub fn pin(&mut self, i: usize, value: f64) {
        self.lo[i] = value;
        self.hi[i] = value;
    }

    /// Componentwise clamp.
    pub fn clamp(&self, v: &Vector) -> Result<Vector> {
        check_dim("box clamp", self.dim(), v.len())?;
        Ok(Vector::from_fn(v.len(), |i, _| v[i].max(self.lo[i]).min(self.hi[i])))
    }

    /// Whether coordinate `i` of `z` lies strictly outside the box and is
    /// therefore moved by the projection.
    #[inline]
    pub fn clamps(&self, i: usize, z: f64) -> bool {
        z < self.lo[i] || z > self.hi[i]
    }

    /// Distance of `z_i` to the nearest finite bound (infinite if none).
    pub fn margin(&self, z: &Vector) -> f64 {
        z.iter()
            .enumerate()
            .map(|(i, x)| (x - self.lo[i]).abs().min((self.hi[i] - x).abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `argmin_{x in box} ||x - v||_G`. For a diagonal metric the problem
/// separates per coordinate, so this is a clamp regardless of `G`.
pub fn project_box_g(v: &Vector, bounds: &BoxSet, g: &Metric) -> Result<Vector> {
    check_dim("project_box_g", g.dim(), v.len())?;
    bounds.clamp(v)
}
