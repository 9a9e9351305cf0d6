//! Data hyper-cleaning on a planted linear model: learn one weight logit
//! per training sample so that the weighted ridge fit generalizes to a
//! clean validation set.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ProblemInstance, ProblemKind};
use crate::error::{invalid, Result};
use crate::linalg::{BoxSet, Matrix, Vector};
use crate::operators::{GradientStep, LowerObjective, ParamLayout, ParamVector};
use crate::solvers::LossFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperCleaningSpec {
    pub d: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub corrupt_frac: f64,
    /// Standard deviation of the label noise.
    pub noise: f64,
    /// Magnitude of the offset added to corrupted labels, with the sign of
    /// the clean label so that corruption inflates it.
    pub offset: f64,
    pub ridge: f64,
    /// Bound on the weight logits.
    pub logit_bound: f64,
    pub seed: u64,
}

impl Default for HyperCleaningSpec {
    fn default() -> Self {
        Self {
            d: 5,
            n_train: 100,
            n_val: 100,
            corrupt_frac: 0.3,
            noise: 0.1,
            offset: 5.0,
            ridge: 0.01,
            logit_bound: 10.0,
            seed: crate::solvers::DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HyperCleaning {
    pub instance: ProblemInstance,
    pub features: Matrix,
    pub labels: Vector,
    pub corrupted: Vec<bool>,
    pub planted: Vector,
    pub val_features: Matrix,
    pub val_labels: Vector,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gen_hypercleaning(spec: &HyperCleaningSpec) -> Result<HyperCleaning> {
    if !(spec.corrupt_frac >= 0.0 && spec.corrupt_frac < 1.0) {
        return Err(invalid(format!("corruption fraction must lie in [0,1), got {}", spec.corrupt_frac)));
    }
    if spec.d == 0 || spec.n_train == 0 || spec.n_val == 0 {
        return Err(invalid("hyper-cleaning dimensions must be positive"));
    }
    if !(spec.noise >= 0.0 && spec.ridge > 0.0 && spec.logit_bound > 0.0 && spec.offset.is_finite()) {
        return Err(invalid("hyper-cleaning needs noise ≥ 0, ridge > 0 and a positive logit bound"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let planted = Vector::from_fn(spec.d, |_, _| normal(&mut rng));
    let features = Matrix::from_fn(spec.n_train, spec.d, |_, _| normal(&mut rng));
    let mut labels = &features * &planted + Vector::from_fn(spec.n_train, |_, _| spec.noise * normal(&mut rng));
    let val_features = Matrix::from_fn(spec.n_val, spec.d, |_, _| normal(&mut rng));
    let val_labels = &val_features * &planted + Vector::from_fn(spec.n_val, |_, _| spec.noise * normal(&mut rng));

    // partial Fisher-Yates picks exactly round(frac·n) distinct samples
    let n_bad = (spec.corrupt_frac * spec.n_train as f64).round() as usize;
    let mut order: Vec<usize> = (0..spec.n_train).collect();
    let mut corrupted = vec![false; spec.n_train];
    for i in 0..n_bad {
        let j = rng.random_range(i..spec.n_train);
        order.swap(i, j);
        let idx = order[i];
        corrupted[idx] = true;
        labels[idx] += spec.offset.copysign(labels[idx]);
    }

    let mut layout = ParamLayout::new();
    let logits = layout.push("logits", spec.n_train)?;
    let layout = Arc::new(layout);
    let objective = LowerObjective::WeightedLeastSquares {
        features: features.clone(),
        targets: labels.clone(),
        ridge: spec.ridge,
        logits,
    };
    let operator = GradientStep::with_inverse_curvature(objective)?;
    let loss = LossFunction::linear_squared_error(val_features.clone(), val_labels.clone(), 1.0 / spec.n_val as f64)?;
    let mut metadata = BTreeMap::new();
    metadata.insert("d".into(), spec.d as f64);
    metadata.insert("n_train".into(), spec.n_train as f64);
    metadata.insert("n_val".into(), spec.n_val as f64);
    metadata.insert("corrupted".into(), n_bad as f64);
    metadata.insert("noise".into(), spec.noise);
    metadata.insert("seed".into(), spec.seed as f64);
    let instance = ProblemInstance {
        kind: ProblemKind::HyperCleaning,
        operator: Arc::new(operator),
        loss,
        omega_init: ParamVector::zeros(layout),
        omega_box: BoxSet::uniform(spec.n_train, -spec.logit_bound, spec.logit_bound)?,
        u_init: Vector::zeros(spec.d),
        metadata,
    };
    Ok(HyperCleaning {
        instance,
        features,
        labels,
        corrupted,
        planted,
        val_features,
        val_labels,
    })
}

impl HyperCleaning {
    /// Mean `sigmoid(ω_i)` over corrupted and over clean samples.
    pub fn mean_weights(&self, w: &ParamVector) -> (f64, f64) {
        let (mut bad, mut good) = ((0.0, 0usize), (0.0, 0usize));
        for (i, &l) in w.flat().iter().enumerate() {
            let s = 1.0 / (1.0 + (-l).exp());
            let acc = if self.corrupted[i] { &mut bad } else { &mut good };
            acc.0 += s;
            acc.1 += 1;
        }
        (bad.0 / bad.1.max(1) as f64, good.0 / good.1.max(1) as f64)
    }
}
