//! Parameterized fixed-point operators `D(u, ω)`.
//!
//! Every operator evaluates forward and provides vector-Jacobian products
//! with respect to both the state `u` and the learning variables `ω`; the
//! hypergradient is assembled from these. Quantities that are computed once
//! per parameter value and then held constant through a forward/backward
//! pass (spectral-norm estimates) are returned by [`ParamOperator::freeze`]
//! and threaded through explicitly.

mod basic;
mod gd;
mod net;
mod params;
mod prox;

use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{Metric, Vector};

pub use basic::{Constant, CoordinateProjection, Identity, Scaling};
pub use gd::{GradientStep, LowerObjective};
pub use net::{Activation, NetLayer, SpectralNet};
pub use params::{ParamLayout, ParamSlot, ParamVector, Scalar};
pub use prox::{LinearizedAlm, ProxGradient};

/// A map `D(·, ω)` on a state space with a diagonal metric.
pub trait ParamOperator: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn metric(&self) -> &Metric;

    /// Number of values produced by [`ParamOperator::freeze`].
    fn frozen_len(&self) -> usize {
        0
    }

    /// Per-parameter constants of the forward pass.
    fn freeze(&self, _w: &ParamVector) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }

    fn apply(&self, u: &Vector, w: &ParamVector, frozen: &[f64]) -> Result<Vector>;

    /// Given the cotangent `cot` of the output, returns `(∂D/∂u)ᵀ cot` and
    /// adds `(∂D/∂ω)ᵀ cot` into `grad_w`.
    fn vjp(
        &self,
        _u: &Vector,
        _w: &ParamVector,
        _frozen: &[f64],
        _cot: &Vector,
        _grad_w: &mut Vector,
    ) -> Result<Vector> {
        Err(Error::MissingCotangent(self.name().to_string()))
    }

    /// Advertised Lipschitz factor in [`ParamOperator::state_norm`]:
    /// 1 for non-expansive operators, below 1 for contractions.
    fn contraction_bound(&self) -> f64 {
        1.0
    }

    /// Smallest distance of any internal pre-activation to a point where
    /// the operator is not differentiable.
    fn kink_margin(&self, _u: &Vector, _w: &ParamVector, _frozen: &[f64]) -> Result<f64> {
        Ok(f64::INFINITY)
    }

    /// Norm in which the operator is non-expansive. Defaults to the metric
    /// norm; operators whose natural metric is not diagonal override it.
    fn state_norm(&self, v: &Vector) -> f64 {
        self.metric().norm(v).expect("state dimension matches metric")
    }
}

/// Krasnoselskii–Mann averaging `T(u, ω) = u + α (D(u, ω) − u)`.
#[derive(Debug, Clone)]
pub struct KmOperator {
    inner: Arc<dyn ParamOperator>,
    alpha: f64,
}

impl KmOperator {
    pub fn new(inner: Arc<dyn ParamOperator>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("averaging weight must lie in (0,1), got {alpha}")));
        }
        Ok(Self { inner, alpha })
    }

    pub fn inner(&self) -> &Arc<dyn ParamOperator> {
        &self.inner
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn metric(&self) -> &Metric {
        self.inner.metric()
    }

    pub fn freeze(&self, w: &ParamVector) -> Result<Vec<f64>> {
        self.inner.freeze(w)
    }

    /// `T(u, ω)`, freezing the inner operator at `w`.
    pub fn apply(&self, u: &Vector, w: &ParamVector) -> Result<Vector> {
        let frozen = self.freeze(w)?;
        self.apply_frozen(u, w, &frozen)
    }

    pub fn apply_frozen(&self, u: &Vector, w: &ParamVector, frozen: &[f64]) -> Result<Vector> {
        check_dim("averaged operator input", self.dim(), u.len())?;
        let d = self.inner.apply(u, w, frozen)?;
        Ok(u * (1.0 - self.alpha) + d * self.alpha)
    }

    pub fn vjp(
        &self,
        u: &Vector,
        w: &ParamVector,
        frozen: &[f64],
        cot: &Vector,
        grad_w: &mut Vector,
    ) -> Result<Vector> {
        let scaled = cot * self.alpha;
        let through = self.inner.vjp(u, w, frozen, &scaled, grad_w)?;
        Ok(cot * (1.0 - self.alpha) + through)
    }

    /// Lipschitz factor of `T` implied by the inner operator's bound.
    pub fn contraction_bound(&self) -> f64 {
        (1.0 - self.alpha) + self.alpha * self.inner.contraction_bound()
    }
}

/// `outer ∘ inner`: `inner` is applied first.
#[derive(Debug, Clone)]
pub struct Compose {
    outer: Arc<dyn ParamOperator>,
    inner: Arc<dyn ParamOperator>,
}

impl Compose {
    pub fn new(outer: Arc<dyn ParamOperator>, inner: Arc<dyn ParamOperator>) -> Result<Self> {
        check_dim("composition widths", outer.dim(), inner.dim())?;
        if outer.metric() != inner.metric() {
            return Err(Error::MetricMismatch);
        }
        Ok(Self { outer, inner })
    }

    fn split<'a>(&self, frozen: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        frozen.split_at(self.inner.frozen_len())
    }
}

impl ParamOperator for Compose {
    fn name(&self) -> &'static str {
        "compose"
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn metric(&self) -> &Metric {
        self.inner.metric()
    }

    fn frozen_len(&self) -> usize {
        self.inner.frozen_len() + self.outer.frozen_len()
    }

    fn freeze(&self, w: &ParamVector) -> Result<Vec<f64>> {
        let mut f = self.inner.freeze(w)?;
        f.extend(self.outer.freeze(w)?);
        Ok(f)
    }

    fn apply(&self, u: &Vector, w: &ParamVector, frozen: &[f64]) -> Result<Vector> {
        let (fi, fo) = self.split(frozen);
        let mid = self.inner.apply(u, w, fi)?;
        self.outer.apply(&mid, w, fo)
    }

    fn vjp(
        &self,
        u: &Vector,
        w: &ParamVector,
        frozen: &[f64],
        cot: &Vector,
        grad_w: &mut Vector,
    ) -> Result<Vector> {
        let (fi, fo) = self.split(frozen);
        let mid = self.inner.apply(u, w, fi)?;
        let cot_mid = self.outer.vjp(&mid, w, fo, cot, grad_w)?;
        self.inner.vjp(u, w, fi, &cot_mid, grad_w)
    }

    fn contraction_bound(&self) -> f64 {
        self.outer.contraction_bound() * self.inner.contraction_bound()
    }

    fn kink_margin(&self, u: &Vector, w: &ParamVector, frozen: &[f64]) -> Result<f64> {
        let (fi, fo) = self.split(frozen);
        let mid = self.inner.apply(u, w, fi)?;
        Ok(self
            .inner
            .kink_margin(u, w, fi)?
            .min(self.outer.kink_margin(&mid, w, fo)?))
    }
}

/// `outer(inner(u, ω), ω)`.
pub fn compose_apply(
    outer: &Arc<dyn ParamOperator>,
    inner: &Arc<dyn ParamOperator>,
    u: &Vector,
    w: &ParamVector,
) -> Result<Vector> {
    let c = Compose::new(Arc::clone(outer), Arc::clone(inner))?;
    let frozen = c.freeze(w)?;
    c.apply(u, w, &frozen)
}

/// Largest observed ratio `‖D(u₁) − D(u₂)‖ / ‖u₁ − u₂‖` over `samples`
/// seeded random pairs, in the operator's own state norm.
///
/// Pairs mix scales: `u₁` is Gaussian with a log-uniform scale in
/// `[0.1, 10]`, and `u₂` is `u₁` plus a Gaussian displacement whose
/// relative size is log-uniform in `[1e-3, 1]`.
pub fn estimate_lipschitz(
    op: &dyn ParamOperator,
    w: &ParamVector,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples < 2 {
        return Err(invalid("Lipschitz estimation needs at least two sample pairs"));
    }
    let frozen = op.freeze(w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = op.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let rel = 10f64.powf(rng.random_range(-3.0..0.0));
        let u1 = Vector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
        let u2 = Vector::from_fn(n, |i, _| u1[i] + rel * scale * rng.sample::<f64, _>(StandardNormal));
        let den = op.state_norm(&(&u1 - &u2));
        if den == 0.0 {
            continue;
        }
        let num = op.state_norm(&(op.apply(&u1, w, &frozen)? - op.apply(&u2, w, &frozen)?));
        worst = worst.max(num / den);
    }
    Ok(worst)
}
