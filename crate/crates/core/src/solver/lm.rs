use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::linearize::{estimation_error, linearize, residuals};
use super::step::damped_step;
use super::{clamp_lambda, ParamVector, SolverError};
use crate::policy::{DampingPolicy, History};
use crate::scene::BAProblem;

/// Floor of the denominator in the relative-decrease test.
pub const CONVERGENCE_EPS: f64 = 1e-30;

/// Source of per-iteration durations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    #[default]
    Wall,
    /// Every iteration costs exactly one unit. Makes traces reproducible.
    Unit,
}

impl Clock {
    fn elapsed(self, start: Instant) -> f64 {
        match self {
            Clock::Wall => start.elapsed().as_secs_f64().max(1e-9),
            Clock::Unit => 1.0,
        }
    }

    pub fn deterministic(deterministic: bool) -> Self {
        if deterministic {
            Clock::Unit
        } else {
            Clock::Wall
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub threshold: f64,
    /// Roll back steps that increase the error. Off for every reported
    /// experiment: the environment applies each step unconditionally.
    pub accept_only_improving: bool,
    pub clock: Clock,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iterations: 100, threshold: 1e-6, accept_only_improving: false, clock: Clock::Wall }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Converged,
    IterationCap,
    NumericalFailure,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Converged => "converged",
            Outcome::IterationCap => "iteration-cap",
            Outcome::NumericalFailure => "numerical-failure",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of a solve trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub lambda: f64,
    /// Estimation error after the step.
    pub error: f64,
    pub duration_s: f64,
}

/// Mutable state of a single solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub params: ParamVector,
    /// Estimation error before the first step and after every step.
    pub error_history: Vec<f64>,
    pub durations: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub iteration: usize,
    pub converged: bool,
    pub failed: bool,
}

impl SolverState {
    pub fn new(problem: &BAProblem) -> Result<Self, SolverError> {
        Self::from_params(problem, ParamVector::from_problem(problem))
    }

    pub fn from_params(problem: &BAProblem, params: ParamVector) -> Result<Self, SolverError> {
        let e0 = estimation_error(&residuals(problem, &params)?, problem.pixel_sigma());
        if !e0.is_finite() {
            return Err(SolverError::NonFinite("initial error"));
        }
        Ok(Self {
            params,
            error_history: vec![e0],
            durations: Vec::new(),
            lambdas: Vec::new(),
            iteration: 0,
            converged: false,
            failed: false,
        })
    }

    pub fn current_error(&self) -> f64 {
        *self.error_history.last().expect("error history is never empty")
    }

    pub fn is_terminal(&self) -> bool {
        self.converged || self.failed
    }
}

/// Performs one LM iteration with damping `lambda`: linearize, solve the
/// damped system, apply the step.
pub fn lm_iterate(
    problem: &BAProblem,
    state: &mut SolverState,
    lambda: f64,
    options: &SolveOptions,
) -> Result<IterationRecord, SolverError> {
    if state.is_terminal() {
        return Err(SolverError::Terminal);
    }
    let start = Instant::now();
    let result = (|| {
        let lin = linearize(problem, &state.params)?;
        let delta = damped_step(&lin, lambda)?;
        let mut candidate = state.params.clone();
        candidate.apply(&delta);
        if !candidate.is_finite() {
            return Err(SolverError::NonFinite("parameters"));
        }
        let err = estimation_error(&residuals(problem, &candidate)?, problem.pixel_sigma());
        if !err.is_finite() {
            return Err(SolverError::NonFinite("estimation error"));
        }
        Ok((candidate, err))
    })();

    let (candidate, err) = match result {
        Ok(v) => v,
        Err(e) => {
            state.failed = true;
            return Err(e);
        }
    };
    let current = state.current_error();
    let err = if options.accept_only_improving && err > current {
        current
    } else {
        state.params = candidate;
        err
    };
    let duration_s = options.clock.elapsed(start);
    state.error_history.push(err);
    state.durations.push(duration_s);
    state.lambdas.push(lambda);
    state.iteration += 1;
    Ok(IterationRecord { iter: state.iteration, lambda, error: err, duration_s })
}

/// True when the last step decreased the error by less than `threshold`
/// relative to the previous error.
pub fn convergence_check(error_history: &[f64], threshold: f64) -> bool {
    match error_history {
        [.., prev, last] => (prev - last).abs() / prev.max(CONVERGENCE_EPS) < threshold,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicMode {
    /// Halve when the error grew, double otherwise, as the rule is usually quoted.
    Paper,
    /// Halve on improvement, double otherwise (textbook LM).
    #[default]
    Standard,
}

pub fn classic_lambda_update(lambda: f64, err_t: f64, err_prev: f64, mode: ClassicMode) -> f64 {
    let next = match mode {
        ClassicMode::Paper if err_t > err_prev => lambda * 0.5,
        ClassicMode::Paper => lambda * 2.0,
        ClassicMode::Standard if err_t < err_prev => lambda * 0.5,
        ClassicMode::Standard => lambda * 2.0,
    };
    clamp_lambda(next)
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub params: ParamVector,
    pub outcome: Outcome,
    pub iterations: usize,
    pub total_time_s: f64,
    pub initial_error: f64,
    pub final_error: f64,
    pub records: Vec<IterationRecord>,
}

/// JSON view of a [`SolveResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub outcome: Outcome,
    pub iterations: usize,
    pub total_time_s: f64,
    pub final_error: f64,
    pub records: Vec<IterationRecord>,
}

impl SolveResult {
    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            outcome: self.outcome,
            iterations: self.iterations,
            total_time_s: self.total_time_s,
            final_error: self.final_error,
            records: self.records.clone(),
        }
    }

    /// Errors before the first step and after each step.
    pub fn error_trace(&self) -> Vec<f64> {
        std::iter::once(self.initial_error).chain(self.records.iter().map(|r| r.error)).collect()
    }
}

/// Trace as CSV with header `iter,lambda,error,duration_s`.
pub fn records_to_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from("iter,lambda,error,duration_s\n");
    for r in records {
        let _ = writeln!(out, "{},{:e},{:e},{:e}", r.iter, r.lambda, r.error, r.duration_s);
    }
    out
}

/// Runs LM until convergence, the iteration cap, or a numerical failure,
/// asking `policy` for the damping factor before every iteration.
pub fn solve(problem: &BAProblem, policy: &mut dyn DampingPolicy, options: &SolveOptions) -> SolveResult {
    let start = Instant::now();
    policy.reset();
    let mut state = match SolverState::new(problem) {
        Ok(s) => s,
        Err(_) => {
            return SolveResult {
                params: ParamVector::from_problem(problem),
                outcome: Outcome::NumericalFailure,
                iterations: 0,
                total_time_s: 0.0,
                initial_error: f64::NAN,
                final_error: f64::NAN,
                records: Vec::new(),
            }
        }
    };
    let initial_error = state.current_error();
    let mut history = History::new(initial_error);
    let mut records = Vec::new();

    let outcome = loop {
        if state.iteration >= options.max_iterations {
            break Outcome::IterationCap;
        }
        let obs = history.observe(policy.window(), policy.state_kind());
        let lambda = clamp_lambda(policy.next_lambda(&obs));
        match lm_iterate(problem, &mut state, lambda, options) {
            Ok(rec) => {
                history.record(rec.error, lambda, rec.duration_s, -rec.duration_s);
                records.push(rec);
            }
            Err(_) => break Outcome::NumericalFailure,
        }
        if convergence_check(&state.error_history, options.threshold) {
            state.converged = true;
            break Outcome::Converged;
        }
    };

    let total_time_s = match options.clock {
        Clock::Wall => start.elapsed().as_secs_f64(),
        Clock::Unit => state.durations.iter().sum(),
    };
    SolveResult {
        params: state.params.clone(),
        outcome,
        iterations: records.len(),
        total_time_s,
        initial_error,
        final_error: state.current_error(),
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_examples() {
        assert!(convergence_check(&[10.0, 10.0], 1e-6));
        assert!(!convergence_check(&[10.0, 5.0], 1e-6));
        assert!(convergence_check(&[1e-8, 1e-8 * (1.0 - 1e-7)], 1e-6));
        assert!(!convergence_check(&[10.0], 1e-6));
        assert!(convergence_check(&[0.0, 0.0], 1e-6));
    }

    #[test]
    fn classic_update_examples() {
        assert_eq!(classic_lambda_update(0.25, 2.0, 1.0, ClassicMode::Paper), 0.125);
        assert_eq!(classic_lambda_update(0.25, 1.0, 1.0, ClassicMode::Paper), 0.5);
        assert_eq!(classic_lambda_update(0.25, 0.5, 1.0, ClassicMode::Paper), 0.5);
        assert_eq!(classic_lambda_update(0.25, 0.5, 1.0, ClassicMode::Standard), 0.125);
        assert_eq!(classic_lambda_update(0.25, 2.0, 1.0, ClassicMode::Standard), 0.5);
    }

    #[test]
    fn classic_update_is_clamped() {
        assert_eq!(classic_lambda_update(1e-16, 0.5, 1.0, ClassicMode::Standard), 1e-16);
        assert_eq!(classic_lambda_update(1e16, 2.0, 1.0, ClassicMode::Standard), 1e16);
    }

    #[test]
    fn csv_header() {
        let csv = records_to_csv(&[IterationRecord { iter: 1, lambda: 0.25, error: 3.0, duration_s: 1.0 }]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iter,lambda,error,duration_s"));
        assert_eq!(lines.next(), Some("1,2.5e-1,3e0,1e0"));
    }
}
