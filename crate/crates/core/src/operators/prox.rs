//! Proximal-gradient and linearized augmented-Lagrangian steps for
//! l1-regularized / l1-constrained least squares.
//!
//! Both operators act on a batch of independent problems sharing the
//! dictionary `Q`: the state is a column-major matrix with one column per
//! sample, flattened into a single vector.

use crate::error::{check_dim, invalid, Result};
use crate::linalg::{shrink, spectral_norm, Matrix, Metric, Vector};

use super::{ParamOperator, ParamVector, Scalar};

fn as_matrix(v: &Vector, rows: usize, cols: usize) -> Matrix {
    Matrix::from_column_slice(rows, cols, v.as_slice())
}

fn as_vector(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One proximal-gradient step on `½‖Qu − b‖² + κ‖u‖₁` in the metric `G`:
///
/// `u⁺ = argmin ⟨∇f(u), v − u⟩ + κ‖v‖₁ + (1/2γ)‖v − u‖²_G`
///     `= ST(u − γ G⁻¹ Qᵀ(Qu − b), γκ / G)`.
///
/// Both the step `γ` and the weight `κ` may be learned.
#[derive(Debug, Clone)]
pub struct ProxGradient {
    q: Matrix,
    qtq: Matrix,
    qtb: Matrix,
    metric: Metric,
    step: Scalar,
    weight: Scalar,
    n: usize,
    batch: usize,
}

struct PgForward {
    residual: Matrix,
    pre: Matrix,
    tau: Matrix,
}

impl ProxGradient {
    /// `q` is `m × n`, `b` is `m × batch`, `metric` covers `n · batch` entries.
    pub fn new(q: Matrix, b: Matrix, metric: Metric, step: Scalar, weight: Scalar) -> Result<Self> {
        check_dim("prox-gradient data rows", q.nrows(), b.nrows())?;
        let (n, batch) = (q.ncols(), b.ncols());
        check_dim("prox-gradient metric", n * batch, metric.dim())?;
        let qtq = q.tr_mul(&q);
        let qtb = q.tr_mul(&b);
        Ok(Self {
            q,
            qtq,
            qtb,
            metric,
            step,
            weight,
            n,
            batch,
        })
    }

    pub fn dictionary(&self) -> &Matrix {
        &self.q
    }

    /// Largest `γ` for which the step stays non-expansive in the metric norm.
    pub fn max_stable_step(&self) -> f64 {
        2.0 * self.metric.lower_bound() / spectral_norm(&self.q).powi(2)
    }

    fn coefficients(&self, w: &ParamVector) -> Result<(f64, f64)> {
        let gamma = self.step.value(w);
        let kappa = self.weight.value(w);
        if !(gamma > 0.0) {
            return Err(invalid(format!("proximal step must be positive, got {gamma}")));
        }
        if !(kappa >= 0.0) {
            return Err(invalid(format!("l1 weight must be nonnegative, got {kappa}")));
        }
        Ok((gamma, kappa))
    }

    fn forward(&self, u: &Vector, gamma: f64, kappa: f64) -> PgForward {
        let um = as_matrix(u, self.n, self.batch);
        let residual = &self.qtq * &um - &self.qtb;
        let g = self.metric.diag();
        let mut pre = um;
        let mut tau = Matrix::zeros(self.n, self.batch);
        for (k, (p, t)) in pre.iter_mut().zip(tau.iter_mut()).enumerate() {
            *p -= gamma / g[k] * residual[k];
            *t = gamma * kappa / g[k];
        }
        PgForward { residual, pre, tau }
    }
}

impl ParamOperator for ProxGradient {
    fn name(&self) -> &'static str {
        "prox_gradient"
    }

    fn dim(&self) -> usize {
        self.n * self.batch
    }

    fn metric(&self) -> &Metric {
        &self.metric
    }

    fn apply(&self, u: &Vector, w: &ParamVector, _frozen: &[f64]) -> Result<Vector> {
        check_dim("prox-gradient state", self.dim(), u.len())?;
        let (gamma, kappa) = self.coefficients(w)?;
        let fw = self.forward(u, gamma, kappa);
        Ok(as_vector(&fw.pre.zip_map(&fw.tau, shrink)))
    }

    fn vjp(
        &self,
        u: &Vector,
        w: &ParamVector,
        _frozen: &[f64],
        cot: &Vector,
        grad_w: &mut Vector,
    ) -> Result<Vector> {
        check_dim("prox-gradient cotangent", self.dim(), cot.len())?;
        let (gamma, kappa) = self.coefficients(w)?;
        let fw = self.forward(u, gamma, kappa);
        let g = self.metric.diag();
        let mut pre_bar = Matrix::zeros(self.n, self.batch);
        let (mut d_gamma, mut d_kappa) = (0.0, 0.0);
        for k in 0..self.dim() {
            let p = fw.pre[k];
            if p.abs() > fw.tau[k] {
                let c = cot[k];
                pre_bar[k] = c;
                // ∂ST/∂τ = −sign(p) on the active set
                let tau_bar = -sign(p) * c;
                d_kappa += tau_bar * gamma / g[k];
                d_gamma += tau_bar * kappa / g[k] - c * fw.residual[k] / g[k];
            }
        }
        self.step.accumulate(grad_w, d_gamma);
        self.weight.accumulate(grad_w, d_kappa);
        let mut scaled = pre_bar.clone();
        for (k, s) in scaled.iter_mut().enumerate() {
            *s *= gamma / g[k];
        }
        Ok(as_vector(&(pre_bar - &self.qtq * scaled)))
    }

    fn kink_margin(&self, u: &Vector, w: &ParamVector, _frozen: &[f64]) -> Result<f64> {
        let (gamma, kappa) = self.coefficients(w)?;
        if kappa == 0.0 {
            return Ok(f64::INFINITY);
        }
        let fw = self.forward(u, gamma, kappa);
        Ok(fw
            .pre
            .iter()
            .zip(fw.tau.iter())
            .map(|(p, t)| (p.abs() - t).abs())
            .fold(f64::INFINITY, f64::min))
    }
}

/// Linearized augmented-Lagrangian step for
/// `min κ‖u‖₁ + ν‖uₙ‖₁  s.t.  Qu + uₙ = y` on the stacked state `(u, uₙ, λ)`.
///
/// With `x = (u, uₙ)`, `A = [Q I]` and the proximal metric `σI − βAᵀA`
/// the primal subproblem becomes a soft threshold:
///
/// `x⁺ = ST(x − σ⁻¹ Aᵀ(λ + β(Ax − y)), τ/σ)`, `λ⁺ = λ + β(Ax⁺ − y)`.
///
/// The step is a proximal-point iteration in the (non-diagonal) norm
/// `‖x‖²_{σI−βAᵀA} + ‖λ‖²/β`, which is what [`ParamOperator::state_norm`]
/// reports. The diagonal metric `diag(σ, 1/β)` is used for preconditioning
/// and projections.
#[derive(Debug, Clone)]
pub struct LinearizedAlm {
    q: Matrix,
    y: Matrix,
    beta: f64,
    sigma: f64,
    weight: Scalar,
    noise_weight: f64,
    metric: Metric,
    n: usize,
    m: usize,
    batch: usize,
}

struct AlmForward {
    lambda: Matrix,
    pre: Matrix,
    tau: Matrix,
}

impl LinearizedAlm {
    /// `q` is `m × n`, `y` is `m × batch`. Fails unless `σ > β‖A‖²`.
    pub fn new(q: Matrix, y: Matrix, beta: f64, sigma: f64, weight: Scalar, noise_weight: f64) -> Result<Self> {
        check_dim("ALM data rows", q.nrows(), y.nrows())?;
        if !(beta > 0.0) {
            return Err(invalid(format!("penalty β must be positive, got {beta}")));
        }
        if !(noise_weight >= 0.0) {
            return Err(invalid("noise weight must be nonnegative"));
        }
        let a_norm = spectral_norm(&Self::stacked(&q));
        if !(sigma > beta * a_norm * a_norm) {
            return Err(invalid(format!(
                "proximal metric σI − βAᵀA is not positive definite: σ={sigma}, β‖A‖²={}",
                beta * a_norm * a_norm
            )));
        }
        let (m, n, batch) = (q.nrows(), q.ncols(), y.ncols());
        let rows = n + 2 * m;
        let block = Vector::from_fn(rows, |i, _| if i < n + m { sigma } else { 1.0 / beta });
        let metric = Metric::from_diag(block)?.tiled(batch);
        Ok(Self {
            q,
            y,
            beta,
            sigma,
            weight,
            noise_weight,
            metric,
            n,
            m,
            batch,
        })
    }

    /// Picks `σ = margin · β‖A‖²`; `margin` must exceed 1.
    pub fn with_margin(q: Matrix, y: Matrix, beta: f64, margin: f64, weight: Scalar) -> Result<Self> {
        if !(margin > 1.0) {
            return Err(invalid(format!("σ margin must exceed 1, got {margin}")));
        }
        let a_norm = spectral_norm(&Self::stacked(&q));
        let sigma = margin * beta * a_norm * a_norm;
        Self::new(q, y, beta, sigma, weight, 1.0)
    }

    fn stacked(q: &Matrix) -> Matrix {
        let (m, n) = q.shape();
        let mut a = Matrix::zeros(m, n + m);
        a.view_mut((0, 0), (m, n)).copy_from(q);
        a.view_mut((0, n), (m, m)).fill_with_identity();
        a
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Rows per sample: `n` code entries, `m` noise entries, `m` multipliers.
    pub fn block_rows(&self) -> usize {
        self.n + 2 * self.m
    }

    /// `A x` for a block of primal columns.
    fn a_mul(&self, x: &Matrix) -> Matrix {
        &self.q * x.rows(0, self.n) + x.rows(self.n, self.m)
    }

    /// `Aᵀ v`
    fn at_mul(&self, v: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.n + self.m, v.ncols());
        out.rows_mut(0, self.n).copy_from(&self.q.tr_mul(v));
        out.rows_mut(self.n, self.m).copy_from(v);
        out
    }

    fn kappa(&self, w: &ParamVector) -> Result<f64> {
        let kappa = self.weight.value(w);
        if !(kappa >= 0.0) {
            return Err(invalid(format!("l1 weight must be nonnegative, got {kappa}")));
        }
        Ok(kappa)
    }

    fn forward(&self, z: &Vector, kappa: f64) -> AlmForward {
        let zm = as_matrix(z, self.block_rows(), self.batch);
        let x = zm.rows(0, self.n + self.m).into_owned();
        let lambda = zm.rows(self.n + self.m, self.m).into_owned();
        let r = self.a_mul(&x) - &self.y;
        let grad = self.at_mul(&(&lambda + r * self.beta));
        let pre = &x - grad / self.sigma;
        let tau = Matrix::from_fn(self.n + self.m, self.batch, |i, _| {
            if i < self.n {
                kappa / self.sigma
            } else {
                self.noise_weight / self.sigma
            }
        });
        AlmForward { lambda, pre, tau }
    }

    fn stack(&self, x: &Matrix, lambda: &Matrix) -> Vector {
        let mut out = Matrix::zeros(self.block_rows(), self.batch);
        out.rows_mut(0, self.n + self.m).copy_from(x);
        out.rows_mut(self.n + self.m, self.m).copy_from(lambda);
        as_vector(&out)
    }
}

impl ParamOperator for LinearizedAlm {
    fn name(&self) -> &'static str {
        "linearized_alm"
    }

    fn dim(&self) -> usize {
        self.block_rows() * self.batch
    }

    fn metric(&self) -> &Metric {
        &self.metric
    }

    fn apply(&self, z: &Vector, w: &ParamVector, _frozen: &[f64]) -> Result<Vector> {
        check_dim("ALM state", self.dim(), z.len())?;
        let fw = self.forward(z, self.kappa(w)?);
        let x_next = fw.pre.zip_map(&fw.tau, shrink);
        let lambda_next = &fw.lambda + (self.a_mul(&x_next) - &self.y) * self.beta;
        Ok(self.stack(&x_next, &lambda_next))
    }

    fn vjp(
        &self,
        z: &Vector,
        w: &ParamVector,
        _frozen: &[f64],
        cot: &Vector,
        grad_w: &mut Vector,
    ) -> Result<Vector> {
        check_dim("ALM cotangent", self.dim(), cot.len())?;
        let fw = self.forward(z, self.kappa(w)?);
        let cm = as_matrix(cot, self.block_rows(), self.batch);
        let lambda_out_bar = cm.rows(self.n + self.m, self.m).into_owned();
        // λ⁺ depends on x⁺ through β A x⁺
        let x_next_bar = cm.rows(0, self.n + self.m) + self.at_mul(&lambda_out_bar) * self.beta;

        let mut pre_bar = Matrix::zeros(self.n + self.m, self.batch);
        let mut d_kappa = 0.0;
        for j in 0..self.batch {
            for i in 0..self.n + self.m {
                let p = fw.pre[(i, j)];
                if p.abs() > fw.tau[(i, j)] {
                    let c = x_next_bar[(i, j)];
                    pre_bar[(i, j)] = c;
                    if i < self.n {
                        d_kappa -= sign(p) * c / self.sigma;
                    }
                }
            }
        }
        self.weight.accumulate(grad_w, d_kappa);

        let a_pre_bar = self.a_mul(&pre_bar);
        let x_bar = &pre_bar - self.at_mul(&a_pre_bar) * (self.beta / self.sigma);
        let lambda_bar = lambda_out_bar - a_pre_bar / self.sigma;
        Ok(self.stack(&x_bar, &lambda_bar))
    }

    fn kink_margin(&self, z: &Vector, w: &ParamVector, _frozen: &[f64]) -> Result<f64> {
        let fw = self.forward(z, self.kappa(w)?);
        Ok(fw
            .pre
            .iter()
            .zip(fw.tau.iter())
            .filter(|(_, t)| **t > 0.0)
            .map(|(p, t)| (p.abs() - t).abs())
            .fold(f64::INFINITY, f64::min))
    }

    fn state_norm(&self, v: &Vector) -> f64 {
        let vm = as_matrix(v, self.block_rows(), self.batch);
        let x = vm.rows(0, self.n + self.m).into_owned();
        let lambda = vm.rows(self.n + self.m, self.m);
        let sq = self.sigma * x.norm_squared() - self.beta * self.a_mul(&x).norm_squared()
            + lambda.norm_squared() / self.beta;
        sq.max(0.0).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::operators::testutil::vjp_fd_error;
    use crate::operators::{estimate_lipschitz, ParamLayout};
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Cyclic coordinate descent for `smooth(x) + Σ l1_i |x_i|`, each
    /// coordinate minimized by bisection on the one-sided derivative, with
    /// the smooth derivative taken by central differences.
    fn cd_minimize(smooth: &dyn Fn(&Vector) -> f64, l1: &Vector, x0: &Vector) -> Vector {
        let mut x = x0.clone();
        let h = 1e-4;
        for _ in 0..400 {
            for i in 0..x.len() {
                let right_derivative = |t: f64, x: &Vector| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] = t + h;
                    xm[i] = t - h;
                    let ds = (smooth(&xp) - smooth(&xm)) / (2.0 * h);
                    ds + if t >= 0.0 { l1[i] } else { -l1[i] }
                };
                let (mut lo, mut hi) = (x[i] - 50.0, x[i] + 50.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if right_derivative(mid, &x) >= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                x[i] = hi;
            }
        }
        x
    }

    fn kappa_layout() -> (Arc<ParamLayout>, Scalar, Scalar) {
        let mut l = ParamLayout::new();
        let k = l.push("kappa", 1).unwrap();
        let s = l.push("step", 1).unwrap();
        (Arc::new(l), Scalar::learned(&k), Scalar::learned(&s))
    }

    fn pg(q: Matrix, b: Matrix, metric: Metric) -> (ProxGradient, Arc<ParamLayout>) {
        let (l, k, s) = kappa_layout();
        (ProxGradient::new(q, b, metric, s, k).unwrap(), l)
    }

    #[test]
    fn pg_identity_dictionary_example() {
        let (op, l) = pg(Matrix::identity(2, 2), dmatrix![2.0; 0.1], Metric::identity(2));
        let w = ParamVector::new(l, dvector![0.5, 1.0]).unwrap();
        let out = op.apply(&Vector::zeros(2), &w, &[]).unwrap();
        assert!((out - dvector![1.5, 0.0]).norm() < 1e-15);
    }

    #[test]
    fn pg_matches_numerical_subproblem_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let q = Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
            let b = Matrix::from_fn(4, 1, |_, _| rng.random_range(-2.0..2.0));
            let g = Metric::from_diag(Vector::from_fn(3, |_, _| rng.random_range(0.5..2.0))).unwrap();
            let u = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let (gamma, kappa) = (0.3, 0.2);
            let (op, l) = pg(q.clone(), b.clone(), g.clone());
            let w = ParamVector::new(l, dvector![kappa, gamma]).unwrap();
            let got = op.apply(&u, &w, &[]).unwrap();

            let grad = q.tr_mul(&(&q * &u - b.column(0)));
            let smooth = |v: &Vector| grad.dot(&(v - &u)) + g.norm(&(v - &u)).unwrap().powi(2) / (2.0 * gamma);
            let oracle = cd_minimize(&smooth, &Vector::from_element(3, kappa), &u);
            assert!((got - oracle).norm() < 1e-8);
        }
    }

    #[test]
    fn pg_zero_weight_is_gradient_step() {
        let q = dmatrix![1.0, 2.0; 0.5, -1.0; 0.0, 1.0];
        let b = dmatrix![1.0; 2.0; 3.0];
        let g = Metric::from_diag(dvector![2.0, 0.5]).unwrap();
        let (op, l) = pg(q.clone(), b.clone(), g.clone());
        let w = ParamVector::new(l, dvector![0.0, 0.1]).unwrap();
        let u = dvector![0.3, -0.7];
        let expected = &u - g.apply_inverse(&(q.tr_mul(&(&q * &u - b.column(0))))) * 0.1;
        assert!((op.apply(&u, &w, &[]).unwrap() - expected).norm() < 1e-14);

        // the least-squares minimizer is a fixed point
        let ustar = (q.tr_mul(&q)).lu().solve(&q.tr_mul(&b)).unwrap().column(0).into_owned();
        assert!((op.apply(&ustar, &w, &[]).unwrap() - &ustar).norm() < 1e-12);
    }

    #[test]
    fn pg_rejects_bad_coefficients() {
        let (op, l) = pg(Matrix::identity(2, 2), dmatrix![1.0; 1.0], Metric::identity(2));
        let bad_step = ParamVector::new(l.clone(), dvector![0.1, 0.0]).unwrap();
        assert!(op.apply(&Vector::zeros(2), &bad_step, &[]).is_err());
        let bad_kappa = ParamVector::new(l, dvector![-0.1, 1.0]).unwrap();
        assert!(op.apply(&Vector::zeros(2), &bad_kappa, &[]).is_err());
    }

    #[test]
    fn pg_beats_random_perturbations_of_its_subproblem() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let q = Matrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = Matrix::from_fn(5, 1, |_, _| rng.random_range(-1.0..1.0));
        let g = Metric::from_diag(Vector::from_fn(4, |_, _| rng.random_range(0.5..2.0))).unwrap();
        let (op, l) = pg(q.clone(), b.clone(), g.clone());
        let (kappa, gamma) = (0.15, 0.4);
        let w = ParamVector::new(l, dvector![kappa, gamma]).unwrap();
        let u = Vector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let grad = q.tr_mul(&(&q * &u - b.column(0)));
        let obj = |v: &Vector| {
            grad.dot(&(v - &u)) + kappa * v.lp_norm(1) + g.norm(&(v - &u)).unwrap().powi(2) / (2.0 * gamma)
        };
        let best = op.apply(&u, &w, &[]).unwrap();
        for _ in 0..1000 {
            let scale = 10f64.powf(rng.random_range(-6.0..0.0));
            let p = &best + Vector::from_fn(4, |_, _| scale * rng.random_range(-1.0..1.0));
            assert!(obj(&best) <= obj(&p) + 1e-15);
        }
    }

    #[test]
    fn pg_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Matrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let b = Matrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let g = Metric::from_diag(Vector::from_fn(6, |_, _| rng.random_range(0.5..2.0))).unwrap();
        let (op, l) = pg(q, b, g);
        let w = ParamVector::new(l, dvector![0.05, 0.2]).unwrap();
        let u = Vector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        assert!(op.kink_margin(&u, &w, &[]).unwrap() > 1e-4);
        assert!(vjp_fd_error(&op, &u, &w, 3) < 1e-6);
    }

    #[test]
    fn pg_is_nonexpansive_at_stable_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = Matrix::from_fn(8, 5, |_, _| rng.random_range(-1.0..1.0));
        let b = Matrix::from_fn(8, 1, |_, _| rng.random_range(-1.0..1.0));
        let g = Metric::from_diag(Vector::from_fn(5, |_, _| rng.random_range(0.5..2.0))).unwrap();
        let (op, l) = pg(q, b, g);
        let w = ParamVector::new(l, dvector![0.1, 0.99 * op.max_stable_step()]).unwrap();
        assert!(estimate_lipschitz(&op, &w, 2000, 4).unwrap() <= 1.0 + 1e-8);
    }

    fn alm(q: Matrix, y: Matrix, beta: f64, margin: f64) -> (LinearizedAlm, Arc<ParamLayout>) {
        let (l, k, _) = kappa_layout();
        (LinearizedAlm::with_margin(q, y, beta, margin, k).unwrap(), l)
    }

    #[test]
    fn alm_kkt_point_is_fixed() {
        let q = dmatrix![1.0, 0.5; -0.3, 2.0];
        let x = dvector![0.4, -0.2];
        let y = &q * &x;
        let (l, k, _) = kappa_layout();
        let op = LinearizedAlm::new(q.clone(), Matrix::from_column_slice(2, 1, y.as_slice()), 1.0, 20.0, k, 0.0).unwrap();
        let w = ParamVector::new(l, dvector![0.0, 0.0]).unwrap();
        // state (u, u_n = 0, λ = 0) with Au = y and τ = 0
        let z = dvector![0.4, -0.2, 0.0, 0.0, 0.0, 0.0];
        assert!((op.apply(&z, &w, &[]).unwrap() - &z).norm() < 1e-14);
    }

    #[test]
    fn alm_multiplier_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let q = Matrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = Matrix::from_fn(3, 1, |_, _| rng.random_range(-1.0..1.0));
        let (op, l) = alm(q.clone(), y.clone(), 1.0, 1.5);
        let w = ParamVector::new(l, dvector![0.3, 0.0]).unwrap();
        let z = Vector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let out = op.apply(&z, &w, &[]).unwrap();
        let x_next = out.rows(0, 5).into_owned();
        let ax = &q * x_next.rows(0, 2) + x_next.rows(2, 3);
        let expected = z.rows(5, 3) + (ax - y.column(0));
        assert!((out.rows(5, 3) - expected).norm() < 1e-14);
    }

    #[test]
    fn alm_primal_step_solves_subproblem() {
        // two primal variables (u, u_n), one constraint
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..5 {
            let qv = rng.random_range(0.5..1.5);
            let q = dmatrix![qv];
            let y = dmatrix![rng.random_range(-2.0..2.0)];
            let beta = 0.7;
            let (op, l) = alm(q.clone(), y.clone(), beta, 1.3);
            let kappa = 0.4;
            let w = ParamVector::new(l, dvector![kappa, 0.0]).unwrap();
            let z = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let got = op.apply(&z, &w, &[]).unwrap();

            let a = dmatrix![qv, 1.0];
            let xk = z.rows(0, 2).into_owned();
            let lam = z[2];
            let p = Matrix::identity(2, 2) * op.sigma() - a.tr_mul(&a) * beta;
            let smooth = |x: &Vector| {
                let r = (&a * x)[0] - y[0];
                let d = x - &xk;
                lam * r + 0.5 * beta * r * r + 0.5 * d.dot(&(&p * &d))
            };
            let oracle = cd_minimize(&smooth, &dvector![kappa, 1.0], &xk);
            assert!((got.rows(0, 2) - &oracle).norm() < 1e-8, "{got} vs {oracle}");
        }
    }

    #[test]
    fn alm_rejects_indefinite_metric() {
        let q = dmatrix![1.0, 0.0; 0.0, 1.0];
        let (_, k, _) = kappa_layout();
        // ‖[Q I]‖² = 2
        assert!(LinearizedAlm::new(q.clone(), dmatrix![0.0; 0.0], 1.0, 2.0, k.clone(), 1.0).is_err());
        assert!(LinearizedAlm::new(q, dmatrix![0.0; 0.0], 1.0, 2.01, k, 1.0).is_ok());
    }

    #[test]
    fn alm_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = Matrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = Matrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let (op, l) = alm(q, y, 0.8, 1.2);
        let w = ParamVector::new(l, dvector![0.2, 0.0]).unwrap();
        let z = Vector::from_fn(op.dim(), |_, _| rng.random_range(-1.0..1.0));
        assert!(op.kink_margin(&z, &w, &[]).unwrap() > 1e-4);
        assert!(vjp_fd_error(&op, &z, &w, 6) < 1e-6);
    }

    #[test]
    fn alm_is_nonexpansive_in_its_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let q = Matrix::from_fn(4, 6, |_, _| rng.random_range(-1.0..1.0));
        let y = Matrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let (op, l) = alm(q, y, 1.0, 1.05);
        let w = ParamVector::new(l, dvector![0.5, 0.0]).unwrap();
        assert!(estimate_lipschitz(&op, &w, 2000, 5).unwrap() <= 1.0 + 1e-8);
    }
}
