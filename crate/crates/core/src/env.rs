//! Bundle adjustment as an episodic game: each step is one LM iteration with
//! the damping factor chosen by the agent.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{History, PolicyObservation, StateKind, DEFAULT_WINDOW};
use crate::scene::BAProblem;
use crate::solver::{clamp_lambda, convergence_check, lm_iterate, Clock, Outcome, SolveOptions, SolverError, SolverState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    /// Negative iteration time, bonus on convergence.
    #[default]
    Duration,
    /// Constant -1 per iteration, bonus on convergence.
    Constant,
    /// Nothing per iteration; the bonus decays with the iteration count.
    Reduction,
    /// Durations become the state and the negative error the reward.
    Reversed,
}

impl RewardVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardVariant::Duration => "duration",
            RewardVariant::Constant => "constant",
            RewardVariant::Reduction => "reduction",
            RewardVariant::Reversed => "reversed",
        }
    }

    pub fn state_kind(self) -> StateKind {
        match self {
            RewardVariant::Reversed => StateKind::NegDurations,
            _ => StateKind::Errors,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub reward_variant: RewardVariant,
    pub convergence_bonus: f64,
    pub reduction_rate: f64,
    pub window: usize,
    pub max_iterations: usize,
    pub threshold: f64,
    pub deterministic_time: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            reward_variant: RewardVariant::Duration,
            convergence_bonus: 10.0,
            reduction_rate: 0.01,
            window: DEFAULT_WINDOW,
            max_iterations: 100,
            threshold: 1e-6,
            deterministic_time: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.convergence_bonus > 0.0) {
            return Err(EnvError::InvalidConfig("convergence_bonus must be positive".into()));
        }
        if !(self.reduction_rate > 0.0 && self.reduction_rate < 1.0) {
            return Err(EnvError::InvalidConfig("reduction_rate must lie in (0, 1)".into()));
        }
        if self.window == 0 || self.max_iterations == 0 {
            return Err(EnvError::InvalidConfig("window and max_iterations must be positive".into()));
        }
        Ok(())
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_iterations: self.max_iterations,
            threshold: self.threshold,
            accept_only_improving: false,
            clock: Clock::deterministic(self.deterministic_time),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode; call reset first")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Estimation error after the step (the last finite one on failure).
    pub error: f64,
    pub duration_s: f64,
    pub iteration: usize,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: PolicyObservation,
    pub reward: f64,
    pub done: bool,
    /// Episode ended by the iteration cap rather than a true terminal state.
    pub timeout: bool,
    pub info: StepInfo,
}

/// Reward of one step. `iteration` is the number of iterations performed
/// so far, `error` the estimation error after the step.
pub fn compute_reward(
    duration_s: f64,
    converged: bool,
    iteration: usize,
    error: f64,
    variant: RewardVariant,
    config: &EnvConfig,
) -> f64 {
    let bonus = config.convergence_bonus;
    match variant {
        RewardVariant::Duration if converged => bonus,
        RewardVariant::Duration => -duration_s,
        RewardVariant::Constant if converged => bonus,
        RewardVariant::Constant => -1.0,
        RewardVariant::Reduction if converged => bonus * (1.0 - config.reduction_rate).powi(iteration as i32),
        RewardVariant::Reduction => 0.0,
        RewardVariant::Reversed if converged => bonus,
        RewardVariant::Reversed => -error,
    }
}

/// Reversed-role state over negated durations; zeros before any iteration.
pub fn make_reversed_state(duration_history: &[f64], window: usize) -> Vec<f64> {
    let neg: Vec<f64> = duration_history.iter().map(|d| -d).collect();
    crate::policy::padded_window(&neg, window, 0.0)
}

/// One row of an episode trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub iter: usize,
    pub lambda: f64,
    pub error: f64,
    pub duration_s: f64,
    pub reward: f64,
}

pub fn episode_to_csv(steps: &[EpisodeStep]) -> String {
    let mut out = String::from("iter,lambda,error,duration_s,reward\n");
    for s in steps {
        let _ = writeln!(out, "{},{:e},{:e},{:e},{:e}", s.iter, s.lambda, s.error, s.duration_s, s.reward);
    }
    out
}

struct Episode {
    problem: BAProblem,
    solver: SolverState,
    history: History,
    done: bool,
}

pub struct BaEnv {
    config: EnvConfig,
    options: SolveOptions,
    episode: Option<Episode>,
    trace: Vec<EpisodeStep>,
}

impl BaEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config, options: config.solve_options(), episode: None, trace: Vec::new() })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn reset(&mut self, problem: &BAProblem) -> Result<PolicyObservation, EnvError> {
        let solver = SolverState::new(problem)?;
        let history = History::new(solver.current_error());
        let ep = Episode { problem: problem.clone(), solver, history, done: false };
        let obs = self.observe(&ep);
        self.episode = Some(ep);
        self.trace.clear();
        Ok(obs)
    }

    fn observe(&self, ep: &Episode) -> PolicyObservation {
        ep.history.observe(self.config.window, self.config.reward_variant.state_kind())
    }

    pub fn step(&mut self, lambda: f64) -> Result<StepOutcome, EnvError> {
        let mut ep = self.episode.take().ok_or(EnvError::NotReset)?;
        if ep.done {
            self.episode = Some(ep);
            return Err(EnvError::StepAfterDone);
        }
        let lambda = clamp_lambda(lambda);
        let cfg = self.config;
        let (error, duration_s, outcome) = match lm_iterate(&ep.problem, &mut ep.solver, lambda, &self.options) {
            Ok(rec) => {
                let outcome = if convergence_check(&ep.solver.error_history, cfg.threshold) {
                    ep.solver.converged = true;
                    Some(Outcome::Converged)
                } else if ep.solver.iteration >= cfg.max_iterations {
                    Some(Outcome::IterationCap)
                } else {
                    None
                };
                (rec.error, rec.duration_s, outcome)
            }
            Err(_) => {
                let duration_s = if cfg.deterministic_time { 1.0 } else { 0.0 };
                (ep.solver.current_error(), duration_s, Some(Outcome::NumericalFailure))
            }
        };
        let iteration = ep.solver.iteration;
        let converged = outcome == Some(Outcome::Converged);
        let reward = compute_reward(duration_s, converged, iteration, error, cfg.reward_variant, &cfg);
        ep.history.record(error, lambda, duration_s, reward);
        ep.done = outcome.is_some();
        self.trace.push(EpisodeStep { iter: ep.history.iteration(), lambda, error, duration_s, reward });

        let out = StepOutcome {
            state: self.observe(&ep),
            reward,
            done: ep.done,
            timeout: outcome == Some(Outcome::IterationCap),
            info: StepInfo { error, duration_s, iteration, outcome },
        };
        self.episode = Some(ep);
        Ok(out)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.done)
    }

    pub fn iteration(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.solver.iteration)
    }

    /// Solver state of the running episode, for trial steps on copies.
    pub fn solver_state(&self) -> Option<&SolverState> {
        self.episode.as_ref().map(|e| &e.solver)
    }

    pub fn problem(&self) -> Option<&BAProblem> {
        self.episode.as_ref().map(|e| &e.problem)
    }

    pub fn history(&self) -> Option<&History> {
        self.episode.as_ref().map(|e| &e.history)
    }

    pub fn trace(&self) -> &[EpisodeStep] {
        &self.trace
    }

    pub fn solve_options(&self) -> &SolveOptions {
        &self.options
    }
}
