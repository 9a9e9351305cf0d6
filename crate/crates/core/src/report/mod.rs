//! Config-driven experiment runner and its entry points: single runs,
//! gradient checks and the μ / spectral-normalization ablations.

mod config;
mod metrics;

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hypergrad::{fd_hypergradient, gradient_check, UnrollTape};
use crate::problems::{
    gen_hypercleaning, gen_sparse_coding, quadratic_oracle, HyperCleaningSpec, ProblemInstance, SparseCodingSpec,
    SparseVariant,
};
use crate::solvers::{inner_loop, outer_loop, InnerMode, OuterTrace, SolverConfig};

pub use config::{BoxSpec, ExperimentConfig, ProblemConfig, QuadraticSpec, ReportOptions, SolverSection, SubspaceSpec};
pub use metrics::{emit_metrics, parse_metrics, render_metrics, MetricsFile, HEADER};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit status for an error: 2 invalid configuration, 3 numeric
/// failure, 4 I/O.
pub fn exit_status(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => 2,
        Error::NonFiniteIterate { .. }
        | Error::NonFiniteObjective { .. }
        | Error::MissingCotangent(_)
        | Error::MetricMismatch => 3,
        Error::Io(_) | Error::Trace(_) => 4,
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub no_timing: bool,
}

/// Result of one experiment run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: MetricsFile,
    pub trace: OuterTrace,
    pub path: PathBuf,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json(&text)
}

/// Hex SHA-256 of the canonical JSON form of `cfg`.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn provenance(cfg: &ExperimentConfig, problem: &ProblemInstance) -> Vec<(String, String)> {
    vec![
        ("version".into(), format!("bilevel-core {VERSION}")),
        ("config_sha256".into(), config_hash(cfg)),
        ("seed".into(), cfg.solver.seed.to_string()),
        ("problem".into(), problem.kind.name().into()),
    ]
}

/// Runs the outer loop for `cfg` and returns the metrics without writing.
pub fn run_config(cfg: &ExperimentConfig, no_timing: bool) -> Result<(MetricsFile, OuterTrace)> {
    let problem = cfg.problem.build()?;
    let solver = cfg.solver.to_solver_config(&problem)?;
    let mut trace = outer_loop(&problem, &solver)?;
    if no_timing {
        for r in &mut trace.rows {
            r.wall_ms = 0.0;
        }
    }
    let metrics = MetricsFile {
        provenance: provenance(cfg, &problem),
        rows: trace.rows.clone(),
    };
    Ok((metrics, trace))
}

/// Applies the overrides, validates, runs and writes the metrics CSV (and,
/// if requested, a per-inner-step residual CSV next to it).
pub fn run_experiment(config_path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.set_seed(seed);
    }
    let path = opts
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output path: set `output` or pass --out".into()))?;
    let (metrics, trace) = run_config(&cfg, opts.no_timing)?;
    emit_metrics(&metrics, &path)?;
    if cfg.report.emit_inner_residuals {
        let problem = cfg.problem.build()?;
        let solver = cfg.solver.to_solver_config(&problem)?;
        let t = problem.averaged(solver.alpha)?;
        let inner = inner_loop(&t, &problem.loss, &trace.omega_final, &problem.u_init, &solver)?;
        let mut text = String::from("k,fp_residual_g_lb,loss\n");
        for (k, (r, l)) in inner.residuals.iter().zip(&inner.loss_values).enumerate() {
            text.push_str(&format!("{k},{r:.16e},{l:.16e}\n"));
        }
        std::fs::write(path.with_extension("inner.csv"), text)?;
    }
    Ok(RunOutcome { metrics, trace, path })
}

/// One line of the gradient-check table.
#[derive(Debug, Clone)]
pub struct GradcheckRow {
    pub problem: &'static str,
    pub seed: u64,
    pub params: usize,
    pub rel_error: f64,
    pub kink_margin: f64,
    pub pass: bool,
}

pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_H: f64 = 1e-5;
const KINK_MARGIN: f64 = 1e-6;

/// Compares the reverse-mode hypergradient with central differences at a
/// perturbed initial point, re-drawing the point while any kink of the
/// unrolled computation is closer than 1e-6.
pub fn gradcheck_problem(problem: &ProblemInstance, cfg: &SolverConfig, seed: u64, scale: f64) -> Result<GradcheckRow> {
    let t = problem.averaged(cfg.alpha)?;
    let mut draw = seed;
    let (w, margin) = loop {
        let w = problem.perturbed_params(draw, scale)?;
        let tape = UnrollTape::record(&t, &problem.loss, &w, &problem.u_init, cfg)?;
        let margin = tape.kink_margin(&t, &w, cfg)?;
        if margin >= KINK_MARGIN || draw >= seed + 50 {
            break (w, margin);
        }
        draw += 1;
    };
    let tape = UnrollTape::record(&t, &problem.loss, &w, &problem.u_init, cfg)?;
    let ad = tape.backward(&t, &problem.loss, &w, cfg)?;
    let fd = fd_hypergradient(&t, &problem.loss, &w, &problem.u_init, cfg, GRADCHECK_H)?;
    let (rel_error, pass) = gradient_check(&ad, &fd, GRADCHECK_TOL)?;
    Ok(GradcheckRow {
        problem: problem.kind.name(),
        seed,
        params: w.len(),
        rel_error,
        kink_margin: margin,
        pass,
    })
}

/// Gradient checks on every problem family at desk scale.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradcheckRow>> {
    let mut rows = Vec::new();
    let oracle = quadratic_oracle(10, seed)?;
    rows.push(check_with(&oracle.instance, 20, seed, 0.5)?);

    let regularized = gen_sparse_coding(&SparseCodingSpec {
        m: 40,
        n: 20,
        n_samples: 4,
        net_layers: 2,
        seed,
        ..SparseCodingSpec::default()
    })?;
    rows.push(check_with(&regularized.instance, 30, seed, 0.05)?);

    let constrained = gen_sparse_coding(&SparseCodingSpec {
        m: 20,
        n: 10,
        n_samples: 4,
        variant: SparseVariant::Constrained,
        seed,
        ..SparseCodingSpec::default()
    })?;
    rows.push(check_with(&constrained.instance, 30, seed, 0.05)?);

    let cleaning = gen_hypercleaning(&HyperCleaningSpec {
        d: 5,
        n_train: 20,
        n_val: 20,
        seed,
        ..HyperCleaningSpec::default()
    })?;
    rows.push(check_with(&cleaning.instance, 30, seed, 1.0)?);
    Ok(rows)
}

fn check_with(problem: &ProblemInstance, k: usize, seed: u64, scale: f64) -> Result<GradcheckRow> {
    let cfg = SolverConfig {
        inner_steps: k,
        ..problem.default_solver()
    };
    gradcheck_problem(problem, &cfg, seed, scale)
}

/// Runs the config once per μ, writing `mu_<μ>.csv` into `out_dir`.
pub fn ablate_mu(config_path: &Path, out_dir: &Path, opts: &RunOptions) -> Result<Vec<(f64, MetricsFile)>> {
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.set_seed(seed);
    }
    if cfg.report.mu_values.is_empty() {
        return Err(Error::Config("report.mu_values is empty".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut out = Vec::new();
    for &mu in &cfg.report.mu_values.clone() {
        let mut run = cfg.clone();
        run.solver.mu = mu;
        run.solver.mode = InnerMode::Aggregated;
        let (metrics, _) = run_config(&run, opts.no_timing)?;
        emit_metrics(&metrics, &out_dir.join(format!("mu_{mu}.csv")))?;
        out.push((mu, metrics));
    }
    Ok(out)
}

/// Runs a sparse-coding config with the network weights scaled by
/// `report.sn_weight_scale`, once with spectral normalization and once
/// without, writing `sn_on.csv` / `sn_off.csv` into `out_dir`.
pub fn ablate_sn(config_path: &Path, out_dir: &Path, opts: &RunOptions) -> Result<[MetricsFile; 2]> {
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.set_seed(seed);
    }
    let ProblemConfig::SparseCoding(spec) = &cfg.problem else {
        return Err(Error::Config("ablate-sn needs a sparse_coding problem".into()));
    };
    if spec.net_layers == 0 || spec.variant != SparseVariant::Regularized {
        return Err(Error::Config("ablate-sn needs the regularized variant with net_layers > 0".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    for (normalize, name) in [(true, "sn_on.csv"), (false, "sn_off.csv")] {
        let mut run = cfg.clone();
        if let ProblemConfig::SparseCoding(s) = &mut run.problem {
            s.spectral_norm = normalize;
            s.net_weight_scale = cfg.report.sn_weight_scale;
        }
        let (metrics, _) = run_config(&run, opts.no_timing)?;
        emit_metrics(&metrics, &out_dir.join(name))?;
        files.push(metrics);
    }
    let off = files.pop().expect("two runs");
    let on = files.pop().expect("two runs");
    Ok([on, off])
}
