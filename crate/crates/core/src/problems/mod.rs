//! Seeded bilevel test problems.

mod cleaning;
mod quadratic;
mod sparse;
mod subspace;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::linalg::{BoxSet, Metric, Vector};
use crate::operators::{KmOperator, ParamOperator, ParamVector};
use crate::solvers::{LossFunction, SolverConfig};

pub use cleaning::{gen_hypercleaning, HyperCleaning, HyperCleaningSpec};
pub use quadratic::{quadratic_oracle, QuadraticOracle};
pub use sparse::{gen_sparse_coding, LearnSet, SparseCoding, SparseCodingSpec, SparseVariant};
pub use subspace::{subspace_case, SubspaceCase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    SparseCodingRegularized,
    SparseCodingConstrained,
    QuadraticOracle,
    Subspace,
    HyperCleaning,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SparseCodingRegularized => "sparse_coding_regularized",
            Self::SparseCodingConstrained => "sparse_coding_constrained",
            Self::QuadraticOracle => "quadratic_oracle",
            Self::Subspace => "subspace",
            Self::HyperCleaning => "hypercleaning",
        }
    }
}

/// Operator `D`, loss and initializations of one bilevel task.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub kind: ProblemKind,
    pub operator: Arc<dyn ParamOperator>,
    pub loss: LossFunction,
    pub omega_init: ParamVector,
    /// Feasible set Ω of the learning variables.
    pub omega_box: BoxSet,
    pub u_init: Vector,
    pub metadata: BTreeMap<String, f64>,
}

impl ProblemInstance {
    pub fn metric(&self) -> &Metric {
        self.operator.metric()
    }

    /// `T = (1 − α) I + α D`.
    pub fn averaged(&self, alpha: f64) -> Result<KmOperator> {
        KmOperator::new(self.operator.clone(), alpha)
    }

    /// Default solver settings with `s` at half its admissible bound.
    pub fn default_solver(&self) -> SolverConfig {
        SolverConfig::default().with_default_step(self.metric(), &self.loss)
    }

    /// Restricts learning to the named slots by pinning every other entry
    /// of Ω to its initial value.
    pub fn pin_all_except(&mut self, keep: &[&str]) -> Result<()> {
        for name in keep {
            if self.omega_init.layout().find(name).is_none() {
                return Err(invalid(format!("unknown parameter slot `{name}`")));
            }
        }
        let layout = self.omega_init.layout().clone();
        for slot in layout.slots().iter().filter(|s| !keep.contains(&s.name.as_str())) {
            for i in slot.range() {
                self.omega_box.pin(i, self.omega_init.flat()[i]);
            }
        }
        Ok(())
    }

    /// `ω_init + scale · N(0, I)` clamped into Ω.
    pub fn perturbed_params(&self, seed: u64, scale: f64) -> Result<ParamVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = gaussian_vector(&mut rng, self.omega_init.len());
        let moved = self.omega_init.flat() + noise * scale;
        self.omega_init.with_flat(self.omega_box.clamp(&moved)?)
    }
}

pub(crate) fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> Vector {
    Vector::from_fn(len, |_, _| StandardNormal.sample(rng))
}
