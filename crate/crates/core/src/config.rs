//! Run configuration (TOML) and the built-in data presets.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::read_field_csv;
use crate::cost::{CostOperator, DiscreteDensity, LocalCost, NonlocalSmoothingCost};
use crate::dynamics::{HjbStepConfig, LinearMethod, LinearSolveContract};
use crate::error::{MfgError, Result};
use crate::grid::{cell_average, GridField, TimeMesh, TorusGrid};
use crate::hamiltonian::PowerHamiltonian;
use crate::solver::ergodic::ErgodicProblem;
use crate::solver::evolutive::EvolutiveProblem;
use crate::solver::study::StudyLevel;
use crate::solver::{FixedPointConfig, SolverConfig};

/// `A sin(2 pi x1) sin(2 pi x2)`.
pub fn sines_field(grid: TorusGrid, amplitude: f64) -> GridField {
    GridField::from_fn(grid, |x1, x2| amplitude * (2.0 * PI * x1).sin() * (2.0 * PI * x2).sin())
}

/// `A cos(2 pi x1) cos(2 pi x2)`.
pub fn cosine_field(grid: TorusGrid, amplitude: f64) -> GridField {
    GridField::from_fn(grid, |x1, x2| amplitude * (2.0 * PI * x1).cos() * (2.0 * PI * x2).cos())
}

/// Cell averages of the periodic bump
/// `exp(kappa (cos 2 pi (x1 - c1) + cos 2 pi (x2 - c2)))`, scaled to unit mass.
pub fn bump_density(grid: TorusGrid, kappa: f64, center: [f64; 2]) -> Result<DiscreteDensity> {
    let f = move |x1: f64, x2: f64| {
        (kappa * ((2.0 * PI * (x1 - center[0])).cos() + (2.0 * PI * (x2 - center[1])).cos())).exp()
    };
    DiscreteDensity::normalized(cell_average(f, grid))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Evolutive,
    Ergodic,
}

fn one() -> f64 {
    1.0
}

fn half_half() -> [f64; 2] {
    [0.5, 0.5]
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldPreset {
    #[default]
    Zero,
    Sines {
        #[serde(default = "one")]
        amplitude: f64,
    },
    Cosine {
        #[serde(default = "one")]
        amplitude: f64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase", deny_unknown_fields)]
pub enum DensityPreset {
    #[default]
    Uniform,
    Bump {
        #[serde(default = "one")]
        kappa: f64,
        #[serde(default = "half_half")]
        center: [f64; 2],
    },
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    pub nu: f64,
    pub beta: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    pub n_side: usize,
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub hamiltonian: FieldPreset,
    #[serde(default)]
    pub u0: FieldPreset,
    #[serde(default)]
    pub m_terminal: DensityPreset,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Local,
    Bilaplacian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalKind {
    Linear,
    Power,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalSection {
    pub preset: LocalKind,
    #[serde(default)]
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub kind: CostKind,
    #[serde(default)]
    pub local: Option<LocalSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub damping: Option<f64>,
    pub outer_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub newton_tol: Option<f64>,
    pub max_newton: Option<usize>,
    pub armijo_c: Option<f64>,
    pub min_step: Option<f64>,
    pub residual_tol: Option<f64>,
    pub linear_method: Option<LinearMethod>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    /// `[N_h, N_T]` pairs for evolutive runs; `N_T` is ignored for ergodic runs.
    pub levels: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    pub cost: CostSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub study: Option<StudySection>,
}

fn config_error(field: &str, message: impl Into<String>) -> MfgError {
    MfgError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(
                || "<file>".to_string(),
                |s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                },
            );
            config_error(&field, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML file, or the `config` entry of a `meta.json` archive.
    /// Relative file-preset paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let inner = value
                .get("config")
                .ok_or_else(|| config_error("config", "meta.json has no `config` entry"))?;
            let cfg: RunConfig = serde_json::from_value(inner.clone())
                .map_err(|e| config_error("config", e.to_string()))?;
            cfg.validate()?;
            cfg
        } else {
            Self::from_toml_str(&text)?
        };
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for preset in [&mut self.problem.hamiltonian, &mut self.problem.u0] {
            if let FieldPreset::File { path } = preset {
                fix(path);
            }
        }
        if let DensityPreset::File { path } = &mut self.problem.m_terminal {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if !(p.nu > 0.0 && p.nu.is_finite()) {
            return Err(config_error("problem.nu", format!("nu > 0 is required, got {}", p.nu)));
        }
        if !(p.beta > 1.0 && p.beta.is_finite()) {
            return Err(config_error(
                "problem.beta",
                format!("beta > 1 is required, got {}", p.beta),
            ));
        }
        if !(p.horizon > 0.0 && p.horizon.is_finite()) {
            return Err(config_error("problem.horizon", "horizon must be positive"));
        }
        if p.n_side == 0 {
            return Err(config_error("problem.n_side", "n_side must be positive"));
        }
        if p.kind == ProblemKind::Evolutive && p.n_steps.unwrap_or(0) == 0 {
            return Err(config_error(
                "problem.n_steps",
                "a positive n_steps is required for evolutive problems",
            ));
        }
        if p.kind == ProblemKind::Ergodic && self.cost.kind != CostKind::Local {
            return Err(config_error("cost.kind", "ergodic problems need a local cost"));
        }
        self.local_cost_opt()?;
        self.solver_config()
            .validate()
            .map_err(|e| config_error("solver", e.to_string()))?;
        if let Some(study) = &self.study {
            let levels = study.levels.iter().map(|l| StudyLevel::from((l[0], l[1])));
            let levels: Vec<StudyLevel> = levels.collect();
            if levels.is_empty() {
                return Err(config_error("study.levels", "no levels given"));
            }
        }
        Ok(())
    }

    fn local_cost_opt(&self) -> Result<Option<LocalCost>> {
        if self.cost.kind != CostKind::Local {
            return Ok(None);
        }
        let local = self
            .cost
            .local
            .as_ref()
            .ok_or_else(|| config_error("cost.local", "a [cost.local] section is required"))?;
        match local.preset {
            LocalKind::Linear => Ok(Some(LocalCost::linear())),
            LocalKind::Power => {
                let alpha = local
                    .alpha
                    .ok_or_else(|| config_error("cost.local.alpha", "alpha is required"))?;
                LocalCost::power(alpha)
                    .map(Some)
                    .map_err(|e| config_error("cost.local.alpha", e.to_string()))
            }
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        let fp = FixedPointConfig::default();
        let hjb = HjbStepConfig::default();
        let lin = LinearSolveContract::default();
        SolverConfig {
            fixed_point: FixedPointConfig {
                damping: s.damping.unwrap_or(fp.damping),
                outer_tol: s.outer_tol.unwrap_or(fp.outer_tol),
                max_outer: s.max_outer.unwrap_or(fp.max_outer),
            },
            hjb: HjbStepConfig {
                newton_tol: s.newton_tol.unwrap_or(hjb.newton_tol),
                max_newton: s.max_newton.unwrap_or(hjb.max_newton),
                armijo_c: s.armijo_c.unwrap_or(hjb.armijo_c),
                min_step: s.min_step.unwrap_or(hjb.min_step),
            },
            linear: LinearSolveContract {
                method: s.linear_method.unwrap_or(lin.method),
                residual_tol: s.residual_tol.unwrap_or(lin.residual_tol),
            },
        }
    }

    fn field(&self, preset: &FieldPreset, grid: TorusGrid, name: &str) -> Result<GridField> {
        match preset {
            FieldPreset::Zero => Ok(GridField::zeros(grid)),
            FieldPreset::Sines { amplitude } => Ok(sines_field(grid, *amplitude)),
            FieldPreset::Cosine { amplitude } => Ok(cosine_field(grid, *amplitude)),
            FieldPreset::File { path } => read_preset_file(path, grid, name),
        }
    }

    pub fn hamiltonian(&self, grid: TorusGrid) -> Result<PowerHamiltonian> {
        let calh = self.field(&self.problem.hamiltonian, grid, "problem.hamiltonian")?;
        PowerHamiltonian::new(self.problem.beta, calh)
    }

    pub fn u0(&self, grid: TorusGrid) -> Result<GridField> {
        self.field(&self.problem.u0, grid, "problem.u0")
    }

    pub fn m_terminal(&self, grid: TorusGrid) -> Result<DiscreteDensity> {
        match &self.problem.m_terminal {
            DensityPreset::Uniform => Ok(DiscreteDensity::uniform(grid)),
            DensityPreset::Bump { kappa, center } => bump_density(grid, *kappa, *center),
            DensityPreset::File { path } => {
                let f = read_preset_file(path, grid, "problem.m_terminal")?;
                DiscreteDensity::new(f)
                    .map_err(|e| config_error("problem.m_terminal", e.to_string()))
            }
        }
    }

    pub fn cost(&self, grid: TorusGrid) -> Result<CostOperator> {
        Ok(match self.local_cost_opt()? {
            Some(c) => CostOperator::Local(c),
            None => CostOperator::Bilaplacian(NonlocalSmoothingCost::new(grid)),
        })
    }

    /// The evolutive problem on `N_h = n_side` with `N_T = n_steps`.
    pub fn evolutive_problem(&self, n_side: usize, n_steps: usize) -> Result<EvolutiveProblem> {
        let grid = TorusGrid::new(n_side)?;
        EvolutiveProblem::new(
            self.problem.nu,
            self.hamiltonian(grid)?,
            self.cost(grid)?,
            self.u0(grid)?,
            self.m_terminal(grid)?,
            TimeMesh::new(self.problem.horizon, n_steps)?,
        )
    }

    /// The evolutive problem at the configured resolution.
    pub fn evolutive(&self) -> Result<EvolutiveProblem> {
        let n_steps = self.problem.n_steps.unwrap_or(0);
        self.evolutive_problem(self.problem.n_side, n_steps)
    }

    pub fn ergodic_problem(&self, n_side: usize) -> Result<ErgodicProblem> {
        let grid = TorusGrid::new(n_side)?;
        let cost = self
            .local_cost_opt()?
            .ok_or_else(|| config_error("cost.kind", "ergodic problems need a local cost"))?;
        ErgodicProblem::new(self.problem.nu, self.hamiltonian(grid)?, cost)
    }

    pub fn ergodic(&self) -> Result<ErgodicProblem> {
        self.ergodic_problem(self.problem.n_side)
    }

    pub fn study_levels(&self) -> Result<Vec<StudyLevel>> {
        let study = self
            .study
            .as_ref()
            .ok_or_else(|| config_error("study", "a [study] section with `levels` is required"))?;
        Ok(study.levels.iter().map(|l| (l[0], l[1]).into()).collect())
    }
}

fn read_preset_file(path: &Path, grid: TorusGrid, name: &str) -> Result<GridField> {
    if !path.exists() {
        return Err(config_error(name, format!("file {} does not exist", path.display())));
    }
    read_field_csv(path, grid).map_err(|e| config_error(name, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNIFORM: &str = r#"
[problem]
kind = "evolutive"
nu = 1.0
beta = 2.0
n_side = 8
n_steps = 8

[cost]
kind = "local"
[cost.local]
preset = "linear"
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = RunConfig::from_toml_str(UNIFORM).unwrap();
        assert_eq!(cfg.problem.horizon, 1.0);
        assert_eq!(cfg.problem.hamiltonian, FieldPreset::Zero);
        assert_eq!(cfg.solver_config(), SolverConfig::default());
        let p = cfg.evolutive().unwrap();
        assert_eq!(p.mesh.n_steps(), 8);
    }

    #[test]
    fn beta_constraint_is_named() {
        let text = UNIFORM.replace("beta = 2.0", "beta = 0.5");
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("problem.beta") && err.contains("beta > 1"), "{err}");
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = UNIFORM.replace("nu = 1.0", "nu = 1.0\nnux = 2");
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        // the text starts with a newline, so `nux` is on line 5
        assert!(err.contains("line 5") && err.contains("nux"), "{err}");
    }

    #[test]
    fn bump_is_a_density() {
        let m = bump_density(TorusGrid::new(16).unwrap(), 1.0, [0.5, 0.5]).unwrap();
        assert!((m.field().mass() - 1.0).abs() < 1e-14);
        assert!(m.field().min() > 0.0);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig::from_toml_str(UNIFORM).unwrap();
        let json = serde_json::to_value(&cfg).unwrap();
        let back: RunConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, cfg);
    }
}
