//! Synthetic sparse coding: recover sparse codes `u` from `b = Qu + n`.
//!
//! The regularized variant iterates proximal gradient on
//! `½‖Qu − b‖² + κ‖u‖₁`, optionally preceded by a spectrally normalized
//! network. The constrained variant runs linearized ALM on
//! `min κ‖u‖₁ + ‖u_n‖₁ s.t. Qu + u_n = b`. Samples are batched as columns.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ProblemInstance, ProblemKind};
use crate::error::{invalid, Result};
use crate::hypergrad::phi_k;
use crate::linalg::{spectral_norm, BoxSet, Matrix, Metric, Vector};
use crate::operators::{
    Activation, Compose, LinearizedAlm, ParamLayout, ParamOperator, ParamVector, ProxGradient, Scalar, SpectralNet,
};
use crate::solvers::{InnerMode, LossFunction, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparseVariant {
    Regularized,
    Constrained,
}

/// Which learning variables are free; the rest are pinned in Ω.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnSet {
    All,
    StepOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparseCodingSpec {
    pub m: usize,
    pub n: usize,
    pub density: f64,
    pub noise: f64,
    pub n_samples: usize,
    /// Held-out samples drawn from the same dictionary.
    pub n_test: usize,
    pub variant: SparseVariant,
    /// Initial ℓ1 weight; 0.1 (regularized) or 1.0 (constrained) if unset.
    pub kappa: Option<f64>,
    /// Depth of the network applied before each proximal step; 0 disables it.
    pub net_layers: usize,
    pub spectral_norm: bool,
    /// Scale of the identity-like initial weights.
    pub net_weight_scale: f64,
    /// Bias shift of the identity-like initialization.
    pub net_shift: f64,
    pub learn: LearnSet,
    /// ALM penalty β.
    pub beta: f64,
    /// ALM proximal constant as a multiple of β‖[Q I]‖².
    pub alm_margin: f64,
    pub seed: u64,
}

impl Default for SparseCodingSpec {
    fn default() -> Self {
        Self {
            m: 500,
            n: 250,
            density: 0.1,
            noise: 0.01,
            n_samples: 20,
            n_test: 0,
            variant: SparseVariant::Regularized,
            kappa: None,
            net_layers: 0,
            spectral_norm: true,
            net_weight_scale: 1.0,
            net_shift: 5.0,
            learn: LearnSet::All,
            beta: 1.0,
            alm_margin: 1.05,
            seed: crate::solvers::DEFAULT_SEED,
        }
    }
}

impl SparseCodingSpec {
    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.n_samples == 0 {
            return Err(invalid("sparse coding dimensions and sample count must be positive"));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(invalid(format!("density must lie in (0,1], got {}", self.density)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(invalid(format!("noise level must be nonnegative, got {}", self.noise)));
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return Err(invalid(format!("initial κ must be positive, got {k}")));
            }
        }
        if self.variant == SparseVariant::Constrained && (self.net_layers > 0 || self.learn == LearnSet::StepOnly) {
            return Err(invalid("the constrained variant has no network and no learned step"));
        }
        if !(self.net_weight_scale.is_finite() && self.net_shift.is_finite()) {
            return Err(invalid("network initialization must be finite"));
        }
        Ok(())
    }

    fn default_kappa(&self) -> f64 {
        self.kappa.unwrap_or(match self.variant {
            SparseVariant::Regularized => 0.1,
            SparseVariant::Constrained => 1.0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SparseCoding {
    pub instance: ProblemInstance,
    /// Held-out instance with the same operator skeleton and layout.
    pub test: Option<ProblemInstance>,
    pub dictionary: Matrix,
    /// True codes, `n × (n_samples + n_test)`.
    pub codes: Matrix,
    /// Observations, `m × (n_samples + n_test)`.
    pub observations: Matrix,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gen_sparse_coding(spec: &SparseCodingSpec) -> Result<SparseCoding> {
    spec.validate()?;
    let (m, n) = (spec.m, spec.n);
    let total = spec.n_samples + spec.n_test;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut q = Matrix::from_fn(m, n, |_, _| normal(&mut rng));
    for mut col in q.column_iter_mut() {
        let norm = col.norm();
        col /= norm;
    }
    let mut codes = Matrix::zeros(n, total);
    for j in 0..total {
        for i in 0..n {
            if rng.random_bool(spec.density) {
                codes[(i, j)] = normal(&mut rng);
            }
        }
    }
    let noise = Matrix::from_fn(m, total, |_, _| spec.noise * normal(&mut rng));
    let observations = &q * &codes + noise;

    let train = build(
        spec,
        &q,
        observations.columns(0, spec.n_samples).into_owned(),
        codes.columns(0, spec.n_samples).into_owned(),
    )?;
    let test = if spec.n_test > 0 {
        Some(build(
            spec,
            &q,
            observations.columns(spec.n_samples, spec.n_test).into_owned(),
            codes.columns(spec.n_samples, spec.n_test).into_owned(),
        )?)
    } else {
        None
    };
    Ok(SparseCoding {
        instance: train,
        test,
        dictionary: q,
        codes,
        observations,
    })
}

fn build(spec: &SparseCodingSpec, q: &Matrix, b: Matrix, codes: Matrix) -> Result<ProblemInstance> {
    let (m, n, batch) = (spec.m, spec.n, b.ncols());
    let kappa0 = spec.default_kappa();
    let mut layout = ParamLayout::new();
    let mut init: Vec<(String, Vec<f64>)> = Vec::new();
    let mut lo: Vec<f64> = Vec::new();
    let mut hi: Vec<f64> = Vec::new();

    let (operator, kind, rows): (Arc<dyn ParamOperator>, ProblemKind, usize) = match spec.variant {
        SparseVariant::Regularized => {
            let lip = spectral_norm(q).powi(2);
            let step = layout.push("step", 1)?;
            let kappa = layout.push("kappa", 1)?;
            init.push(("step".into(), vec![1.0 / lip]));
            init.push(("kappa".into(), vec![kappa0]));
            lo.extend([0.1 / lip, 1e-4]);
            hi.extend([1.9 / lip, 10.0]);
            let metric = Metric::identity(n * batch);
            let pg = ProxGradient::new(
                q.clone(),
                b,
                metric.clone(),
                Scalar::learned(&step),
                Scalar::learned(&kappa),
            )?;
            let op: Arc<dyn ParamOperator> = if spec.net_layers > 0 {
                let mut net = SpectralNet::new(&mut layout, "net", spec.net_layers, batch, metric, Activation::Identity)?;
                if !spec.spectral_norm {
                    net = net.without_normalization();
                }
                let net_len = layout.len() - lo.len();
                lo.extend(std::iter::repeat_n(-100.0, net_len));
                hi.extend(std::iter::repeat_n(100.0, net_len));
                let mut tmp = ParamVector::zeros(Arc::new(layout.clone()));
                net.init_shifted_identity(&mut tmp, spec.net_shift, spec.net_weight_scale)?;
                for slot in layout.slots().iter().skip(2) {
                    init.push((slot.name.clone(), tmp.get(slot).to_vec()));
                }
                Arc::new(Compose::new(Arc::new(pg), Arc::new(net))?)
            } else {
                Arc::new(pg)
            };
            (op, ProblemKind::SparseCodingRegularized, n)
        }
        SparseVariant::Constrained => {
            let kappa = layout.push("kappa", 1)?;
            init.push(("kappa".into(), vec![kappa0]));
            lo.push(1e-4);
            hi.push(10.0);
            let alm = LinearizedAlm::with_margin(q.clone(), b, spec.beta, spec.alm_margin, Scalar::learned(&kappa))?;
            (Arc::new(alm), ProblemKind::SparseCodingConstrained, n + 2 * m)
        }
    };

    let layout = Arc::new(layout);
    let omega_init = ParamVector::from_named(layout, &init)?;
    let mut omega_box = BoxSet::new(Vector::from_vec(lo), Vector::from_vec(hi))?;
    let indices: Vec<usize> = (0..batch).flat_map(|j| (0..n).map(move |i| j * rows + i)).collect();
    let loss = LossFunction::squared_error_on(
        rows * batch,
        indices,
        Vector::from_column_slice(codes.as_slice()),
        1.0 / (n * batch) as f64,
    )?;
    let mut metadata = BTreeMap::new();
    metadata.insert("m".into(), m as f64);
    metadata.insert("n".into(), n as f64);
    metadata.insert("samples".into(), batch as f64);
    metadata.insert("density".into(), spec.density);
    metadata.insert("noise".into(), spec.noise);
    metadata.insert("seed".into(), spec.seed as f64);
    if spec.learn == LearnSet::StepOnly {
        let step = omega_init.layout().find("step").expect("regularized layout has a step").offset;
        for i in (0..omega_init.len()).filter(|&i| i != step) {
            omega_box.pin(i, omega_init.flat()[i]);
        }
    }
    Ok(ProblemInstance {
        kind,
        u_init: Vector::zeros(rows * batch),
        operator,
        loss,
        omega_init,
        omega_box,
        metadata,
    })
}

impl SparseCoding {
    /// Code MSE on the held-out samples after `inner_steps` plain
    /// fixed-point iterations with learning variables `w`. The iteration
    /// does not see the true codes.
    pub fn test_mse(&self, w: &ParamVector, alpha: f64, inner_steps: usize) -> Result<f64> {
        let test = self.test.as_ref().ok_or_else(|| invalid("instance has no held-out samples"))?;
        let wt = test.omega_init.with_flat(w.flat().clone())?;
        let t = test.averaged(alpha)?;
        let cfg = SolverConfig {
            mode: InnerMode::Simplified,
            alpha,
            inner_steps,
            ..SolverConfig::default()
        };
        phi_k(&t, &test.loss, &wt, &t.freeze(&wt)?, &test.u_init, &cfg)
    }

    /// Number of nonzeros in each true code.
    pub fn support_sizes(&self) -> Vec<usize> {
        self.codes
            .column_iter()
            .map(|c| c.iter().filter(|v| **v != 0.0).count())
            .collect()
    }
}
