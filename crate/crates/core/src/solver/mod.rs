//! Coupled forward-backward solvers and their verification layer.

pub mod ergodic;
pub mod evolutive;
pub mod identity;
pub mod monitors;
pub mod study;

use serde::{Deserialize, Serialize};

use crate::dynamics::{HjbStepConfig, LinearSolveContract};
use crate::error::{invalid, Result};

/// Damped Picard iteration on the density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedPointConfig {
    pub damping: f64,
    pub outer_tol: f64,
    pub max_outer: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            outer_tol: 1e-9,
            max_outer: 500,
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(invalid("damping", "must lie in (0, 1]"));
        }
        if !(self.outer_tol > 0.0) {
            return Err(invalid("outer_tol", "must be positive"));
        }
        if self.max_outer == 0 {
            return Err(invalid("max_outer", "must be positive"));
        }
        Ok(())
    }
}

/// Everything the coupled solvers need besides the problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub fixed_point: FixedPointConfig,
    pub hjb: HjbStepConfig,
    pub linear: LinearSolveContract,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.fixed_point.validate()?;
        self.hjb.validate()?;
        self.linear.validate()
    }
}

/// Most halvings of the damping factor within one outer iteration.
pub const MAX_DAMPING_HALVINGS: usize = 6;

pub(crate) struct Picard<E> {
    pub eval: E,
    pub change: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped fixed-point driver. `eval(s)` computes the map at `s`; `image`
/// extracts `T(s)` from the evaluation; `done` decides termination given the
/// current state, its evaluation and the fixed-point change.
pub(crate) fn damped_picard<S, E>(
    cfg: &FixedPointConfig,
    init: S,
    mut eval: impl FnMut(&S) -> Result<E>,
    image: impl Fn(&E) -> &S,
    distance: impl Fn(&S, &S) -> f64,
    mix: impl Fn(&S, &S, f64) -> S,
    mut done: impl FnMut(&S, &E, f64) -> Result<bool>,
    history: &mut Vec<f64>,
) -> Result<Picard<E>> {
    let mut state = init;
    let mut current = eval(&state)?;
    let mut change = distance(&state, image(&current));
    history.push(change);
    let mut theta = cfg.damping;
    for it in 0..cfg.max_outer {
        if done(&state, &current, change)? {
            return Ok(Picard {
                eval: current,
                change,
                iterations: it,
                converged: true,
            });
        }
        let mut halvings = 0;
        loop {
            let trial = mix(&state, image(&current), theta);
            let trial_eval = eval(&trial)?;
            let trial_change = distance(&trial, image(&trial_eval));
            if trial_change <= change || halvings == MAX_DAMPING_HALVINGS {
                state = trial;
                current = trial_eval;
                change = trial_change;
                break;
            }
            theta *= 0.5;
            halvings += 1;
        }
        if halvings == 0 {
            theta = (2.0 * theta).min(cfg.damping);
        }
        history.push(change);
    }
    let converged = done(&state, &current, change)?;
    Ok(Picard {
        eval: current,
        change,
        iterations: cfg.max_outer,
        converged,
    })
}
