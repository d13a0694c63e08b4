//! `mfg-fd`: solve, study and verify finite-difference mean field games on the torus.

mod study;
mod verify;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use torus_mfg::archive::{write_json, write_stationary, write_trajectories};
use torus_mfg::config::ProblemKind;
use torus_mfg::solver::ergodic::solve_ergodic_report;
use torus_mfg::solver::evolutive::solve_evolutive_report;
use torus_mfg::{MfgError, RunConfig};

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_NONCONVERGENCE: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;
pub const EXIT_NOT_DECREASING: u8 = 4;

const THREADS_ENV: &str = "MFG_FD_THREADS";

#[derive(Parser)]
#[command(name = "mfg-fd", version, about = "Finite-difference mean field games on the 2-torus")]
struct Cli {
    /// Worker threads for study levels (overridden by MFG_FD_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one evolutive or ergodic problem and write its archive.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `[output] dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a refinement study over the `[study] levels` of the config.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sampled verification suites.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Exponents to check, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [1.5, 2.0, 3.0])]
        beta: Vec<f64>,
        #[arg(long, default_value = "verify-reports")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Lemmas,
    Identity,
    Adjoint,
    All,
}

/// A message and the exit status it maps to.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<MfgError> for Failure {
    fn from(e: MfgError) -> Self {
        let code = match e {
            MfgError::NonConvergence { .. }
            | MfgError::OuterNonConvergence { .. }
            | MfgError::InversePowerStall { .. }
            | MfgError::LinearSolve(_)
            | MfgError::NegativeDensity { .. } => EXIT_NONCONVERGENCE,
            _ => EXIT_CONFIG,
        };
        Self::new(code, e.to_string())
    }
}

pub type Outcome = std::result::Result<(), Failure>;

/// Loads the config with every path made absolute, so the echo in
/// `meta.json` is self-contained.
pub fn load_config(path: &Path) -> std::result::Result<RunConfig, Failure> {
    let abs = path
        .canonicalize()
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::load(&abs)?;
    if let (Some(dir), Some(base)) = (cfg.output.dir.as_mut(), abs.parent()) {
        if dir.is_relative() {
            *dir = base.join(&*dir);
        }
    }
    Ok(cfg)
}

pub fn output_dir(cli: Option<PathBuf>, cfg: &RunConfig) -> std::result::Result<PathBuf, Failure> {
    cli.or_else(|| cfg.output.dir.clone()).ok_or_else(|| {
        Failure::new(EXIT_CONFIG, "no output directory: pass --out or set [output] dir")
    })
}

fn cmd_solve(config: &Path, out: Option<PathBuf>) -> Outcome {
    let cfg = load_config(config)?;
    let dir = output_dir(out, &cfg)?;
    let solver = cfg.solver_config();
    let (converged, summary) = match cfg.problem.kind {
        ProblemKind::Evolutive => {
            let p = cfg.evolutive()?;
            let sol = solve_evolutive_report(&p, &solver)?;
            write_trajectories(&dir, &sol.u, &sol.m)?;
            let meta = json!({
                "kind": "evolutive",
                "config": cfg,
                "solver_settings": solver,
                "converged": sol.converged,
                "partial": !sol.converged,
                "n_side": p.grid().n_side(),
                "n_steps": p.mesh.n_steps(),
                "h": p.grid().h(),
                "dt": p.mesh.dt(),
                "outer_iters": sol.outer_iters,
                "final_change": sol.final_change,
                "residual_history": sol.residual_history,
                "hjb_residual": sol.hjb_residual,
                "fp_residual": sol.fp_residual,
                "max_clamp": sol.max_clamp,
                "newton_fallbacks": sol.newton_fallbacks,
                "densities": sol.density_diagnostics(),
                "monitors": sol.monitors,
            });
            write_json(&dir.join("meta.json"), &meta)?;
            let summary = format!(
                "evolutive N_h={} N_T={}: {} outer iterations, final change {:.3e}, residuals hjb {:.3e} fp {:.3e}",
                p.grid().n_side(),
                p.mesh.n_steps(),
                sol.outer_iters,
                sol.final_change,
                sol.hjb_residual,
                sol.fp_residual
            );
            (sol.converged, summary)
        }
        ProblemKind::Ergodic => {
            let p = cfg.ergodic()?;
            let sol = solve_ergodic_report(&p, &solver)?;
            write_stationary(&dir, &sol.u, &sol.m)?;
            let meta = json!({
                "kind": "ergodic",
                "config": cfg,
                "solver_settings": solver,
                "converged": sol.converged,
                "partial": !sol.converged,
                "n_side": p.grid().n_side(),
                "h": p.grid().h(),
                "lambda": sol.lambda,
                "outer_iters": sol.outer_iters,
                "final_change": sol.final_change,
                "residual_history": sol.residual_history,
                "hjb_residual": sol.hjb_residual,
                "fp_residual": sol.fp_residual,
                "mass_residual": sol.mass_residual,
                "u_mean": sol.u_mean,
                "min_density": sol.m.min(),
            });
            write_json(&dir.join("meta.json"), &meta)?;
            let summary = format!(
                "ergodic N_h={}: {} outer iterations, final change {:.3e}, residuals hjb {:.3e} fp {:.3e}, lambda {:.12}",
                p.grid().n_side(),
                sol.outer_iters,
                sol.final_change,
                sol.hjb_residual,
                sol.fp_residual,
                sol.lambda
            );
            (sol.converged, summary)
        }
    };
    println!("{summary}");
    if converged {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_NONCONVERGENCE,
            format!("not converged; partial archive written to {}", dir.display()),
        ))
    }
}

fn configure_threads(flag: Option<usize>) -> Outcome {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
            Failure::new(EXIT_CONFIG, format!("{THREADS_ENV} must be a positive integer, got {v:?}"))
        })?),
        Err(_) => flag,
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::new(EXIT_CONFIG, "thread count must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Solve { config, out } => cmd_solve(&config, out),
        Command::Study { config, out } => study::cmd_study(&config, out),
        Command::Verify {
            suite,
            seed,
            samples,
            beta,
            out,
        } => verify::cmd_verify(suite, seed, samples, &beta, &out),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which is reserved for non-convergence
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
