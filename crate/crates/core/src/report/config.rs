//! JSON experiment configuration.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BoxSet, Vector};
use crate::problems::{
    gen_hypercleaning, gen_sparse_coding, quadratic_oracle, subspace_case, HyperCleaningSpec, ProblemInstance,
    SparseCodingSpec,
};
use crate::solvers::{InnerMode, OuterUpdate, SolverConfig, DEFAULT_SEED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub report: ReportOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    SparseCoding(SparseCodingSpec),
    QuadraticOracle(QuadraticSpec),
    Subspace(SubspaceSpec),
    Hypercleaning(HyperCleaningSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub seed: u64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        Self { dim: 10, seed: DEFAULT_SEED }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubspaceSpec {
    pub dim: usize,
    pub subspace_dims: usize,
    pub target: Vec<f64>,
    pub u0: Vec<f64>,
}

/// The same scalar bounds on every coordinate; a missing side is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

impl BoxSpec {
    pub fn to_box(self, dim: usize) -> Result<BoxSet> {
        BoxSet::uniform(dim, self.lo.unwrap_or(f64::NEG_INFINITY), self.hi.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub mode: InnerMode,
    pub alpha: f64,
    pub mu: f64,
    /// Base inner step; half the admissible bound when unset.
    pub s: Option<f64>,
    pub inner_steps: usize,
    pub outer_step: f64,
    pub outer_steps: usize,
    pub outer_update: OuterUpdate,
    pub u_box: Option<BoxSpec>,
    pub omega_box: Option<BoxSpec>,
    pub seed: u64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            mode: d.mode,
            alpha: d.alpha,
            mu: d.mu,
            s: None,
            inner_steps: d.inner_steps,
            outer_step: d.outer_step,
            outer_steps: d.outer_steps,
            outer_update: d.outer_update,
            u_box: None,
            omega_box: None,
            seed: d.seed,
        }
    }
}

impl SolverSection {
    /// Resolves the section against a built problem and validates it.
    pub fn to_solver_config(&self, problem: &ProblemInstance) -> Result<SolverConfig> {
        let s = match self.s {
            Some(s) => s,
            None => SolverConfig::default_step(problem.metric(), &problem.loss),
        };
        if self.inner_steps == 0 {
            return Err(Error::Config("solver.inner_steps must be at least 1".into()));
        }
        let cfg = SolverConfig {
            mode: self.mode,
            alpha: self.alpha,
            mu: self.mu,
            s,
            inner_steps: self.inner_steps,
            outer_step: self.outer_step,
            outer_steps: self.outer_steps,
            outer_update: self.outer_update,
            u_box: self.u_box.map(|b| b.to_box(problem.u_init.len())).transpose()?,
            omega_box: self.omega_box.map(|b| b.to_box(problem.omega_init.len())).transpose()?,
            seed: self.seed,
        };
        cfg.validate(problem.metric(), &problem.loss)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    /// Also write the inner residual sequence at the final ω.
    pub emit_inner_residuals: bool,
    /// Values swept by `ablate-mu`.
    pub mu_values: Vec<f64>,
    /// Network weight scale used by `ablate-sn`.
    pub sn_weight_scale: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            emit_inner_residuals: false,
            mu_values: vec![0.0, 0.1, 0.3, 0.5, 0.7, 0.9],
            sn_weight_scale: 3.0,
        }
    }
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ProblemInstance> {
        Ok(match self {
            Self::SparseCoding(spec) => gen_sparse_coding(spec)?.instance,
            Self::QuadraticOracle(spec) => quadratic_oracle(spec.dim, spec.seed)?.instance,
            Self::Subspace(spec) => {
                subspace_case(
                    spec.dim,
                    spec.subspace_dims,
                    Vector::from_vec(spec.target.clone()),
                    Vector::from_vec(spec.u0.clone()),
                )?
                .instance
            }
            Self::Hypercleaning(spec) => gen_hypercleaning(spec)?.instance,
        })
    }

    fn set_seed(&mut self, seed: u64) {
        match self {
            Self::SparseCoding(s) => s.seed = seed,
            Self::QuadraticOracle(s) => s.seed = seed,
            Self::Subspace(_) => {}
            Self::Hypercleaning(s) => s.seed = seed,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Seed for both the problem generator and the solver.
    pub fn set_seed(&mut self, seed: u64) {
        self.problem.set_seed(seed);
        self.solver.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "problem": {"kind": "sparse_coding", "m": 40, "n": 20, "n_samples": 4, "net_layers": 2},
        "solver": {"mu": 0.2, "inner_steps": 10, "outer_steps": 3, "outer_update": "adaptive_moments",
                   "omega_box": {"lo": -5.0}},
        "output": "out.csv",
        "report": {"emit_inner_residuals": true}
    }"#;

    #[test]
    fn round_trips_unchanged() {
        let cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let ProblemConfig::SparseCoding(spec) = &cfg.problem else { panic!() };
        assert_eq!((spec.m, spec.n, spec.net_layers), (40, 20, 2));
        assert_eq!(cfg.solver.outer_update, OuterUpdate::AdaptiveMoments);
        assert_eq!(cfg.solver.omega_box, Some(BoxSpec { lo: Some(-5.0), hi: None }));
    }

    #[test]
    fn rejects_unknown_keys() {
        for bad in [
            r#"{"problem": {"kind": "quadratic_oracle", "dims": 3}}"#,
            r#"{"problem": {"kind": "quadratic_oracle"}, "solver": {"mu2": 0.1}}"#,
            r#"{"problem": {"kind": "quadratic_oracle"}, "extra": 1}"#,
            r#"{"problem": {"kind": "nope"}}"#,
            r#"{"problem": {"kind": "hypercleaning", "d": 3, "corrupt": 0.1}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn seed_override_reaches_problem_and_solver() {
        let mut cfg = ExperimentConfig::from_json(r#"{"problem": {"kind": "quadratic_oracle", "dim": 4}}"#).unwrap();
        assert_eq!(cfg.solver.seed, DEFAULT_SEED);
        cfg.set_seed(7);
        assert_eq!(cfg.problem, ProblemConfig::QuadraticOracle(QuadraticSpec { dim: 4, seed: 7 }));
        assert_eq!(cfg.solver.seed, 7);
    }

    #[test]
    fn solver_validation_catches_mu() {
        let cfg = ExperimentConfig::from_json(r#"{"problem": {"kind": "quadratic_oracle"}, "solver": {"mu": 1.0}}"#)
            .unwrap();
        let p = cfg.problem.build().unwrap();
        assert!(matches!(cfg.solver.to_solver_config(&p), Err(Error::InvalidArgument(_))));
    }
}
