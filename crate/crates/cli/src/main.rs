use std::path::PathBuf;
use std::process::ExitCode;

use bilevel_core::report::{self, RunOptions};
use bilevel_core::solvers::DEFAULT_SEED;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bilevel", version, about = "Bilevel fixed-point learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics CSV.
    Run(Common),
    /// Compare reverse-mode and finite-difference hypergradients on every problem family.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep μ over `report.mu_values`, one CSV per value in the --out directory.
    AblateMu(Common),
    /// Run the sparse-coding network with and without spectral normalization.
    AblateSn(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write 0 in the wall_ms column.
    #[arg(long)]
    no_timing: bool,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            out: self.out.clone(),
            seed: self.seed,
            no_timing: self.no_timing,
        }
    }

    fn out_dir(&self) -> bilevel_core::Result<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| bilevel_core::Error::Config("--out <dir> is required".into()))
    }
}

fn run(cli: Cli) -> bilevel_core::Result<bool> {
    match cli.command {
        Command::Run(c) => {
            let outcome = report::run_experiment(&c.config, &c.options())?;
            if let Some(last) = outcome.metrics.rows.last() {
                println!(
                    "wrote {} ({} rows, final phi_K {:.6e})",
                    outcome.path.display(),
                    outcome.metrics.rows.len(),
                    last.phi_k
                );
            }
        }
        Command::Gradcheck { seed } => {
            let seed = seed.unwrap_or(DEFAULT_SEED);
            println!("{:<28} {:>6} {:>12} {:>12}  status", "problem", "params", "rel_error", "kink_margin");
            let mut ok = true;
            for row in report::gradcheck_suite(seed)? {
                ok &= row.pass;
                println!(
                    "{:<28} {:>6} {:>12.3e} {:>12.3e}  {}",
                    row.problem,
                    row.params,
                    row.rel_error,
                    row.kink_margin,
                    if row.pass { "ok" } else { "FAIL" }
                );
            }
            return Ok(ok);
        }
        Command::AblateMu(c) => {
            let dir = c.out_dir()?;
            for (mu, m) in report::ablate_mu(&c.config, &dir, &c.options())? {
                let last = m.rows.last().expect("at least one row");
                println!(
                    "mu {mu:<6} final phi_K {:.6e}  hypergrad {:.6e}",
                    last.phi_k, last.hypergrad_g_norm
                );
            }
        }
        Command::AblateSn(c) => {
            let dir = c.out_dir()?;
            let [on, off] = report::ablate_sn(&c.config, &dir, &c.options())?;
            for (name, m) in [("sn_on", on), ("sn_off", off)] {
                let last = m.rows.last().expect("at least one row");
                println!(
                    "{name:<7} final phi_K {:.6e}  hypergrad {:.6e}",
                    last.phi_k, last.hypergrad_g_norm
                );
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(report::exit_status(&e) as u8)
        }
    }
}
