//! Damping policies: the per-iteration interface every lambda chooser
//! implements, plus the non-learned choosers.

use serde::{Deserialize, Serialize};

use crate::solver::{clamp_lambda, classic_lambda_update, ClassicMode};

/// Default number of recent values in a state vector.
pub const DEFAULT_WINDOW: usize = 5;
/// Upper clip applied to every error entering a state vector.
pub const STATE_CLIP: f64 = 1000.0;
/// Starting damping of the classic rule.
pub const CLASSIC_LAMBDA0: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Classic,
    ConstantScheduler,
    Fixed,
    Agent,
    ZeroNet,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Classic => "classic",
            PolicyKind::ConstantScheduler => "constant_scheduler",
            PolicyKind::Fixed => "fixed",
            PolicyKind::Agent => "agent",
            PolicyKind::ZeroNet => "zero_net",
        }
    }
}

/// What a policy sees in its state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    /// Recent estimation errors.
    #[default]
    Errors,
    /// Recent iteration durations, negated.
    NegDurations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyObservation {
    pub state: Vec<f64>,
    pub iteration: usize,
    pub last_lambda: Option<f64>,
    /// Current estimation error and the one before the last step.
    pub error: f64,
    pub prev_error: Option<f64>,
    /// Last `window` damping factors, left-padded with [`CLASSIC_LAMBDA0`].
    pub recent_lambdas: Vec<f64>,
    /// Last `window` rewards, left-padded with zeros.
    pub recent_rewards: Vec<f64>,
}

pub trait DampingPolicy {
    fn kind(&self) -> PolicyKind;

    /// Damping for the next iteration. Callers clamp the result to the global
    /// lambda range.
    fn next_lambda(&mut self, obs: &PolicyObservation) -> f64;

    /// Prepares the policy for a fresh solve.
    fn reset(&mut self) {}

    fn window(&self) -> usize {
        DEFAULT_WINDOW
    }

    fn state_kind(&self) -> StateKind {
        StateKind::Errors
    }
}

impl<P: DampingPolicy + ?Sized> DampingPolicy for Box<P> {
    fn kind(&self) -> PolicyKind {
        (**self).kind()
    }
    fn next_lambda(&mut self, obs: &PolicyObservation) -> f64 {
        (**self).next_lambda(obs)
    }
    fn reset(&mut self) {
        (**self).reset()
    }
    fn window(&self) -> usize {
        (**self).window()
    }
    fn state_kind(&self) -> StateKind {
        (**self).state_kind()
    }
}

/// Last `window` entries of `values`, left-padded by repeating the earliest
/// entry (or `empty` when there is none).
pub fn padded_window(values: &[f64], window: usize, empty: f64) -> Vec<f64> {
    let tail = &values[values.len().saturating_sub(window)..];
    let pad = tail.first().copied().unwrap_or(empty);
    std::iter::repeat_n(pad, window - tail.len()).chain(tail.iter().copied()).collect()
}

/// State vector of recent errors: the last `window` entries, padded by
/// repeating the earliest one, each clipped at [`STATE_CLIP`].
pub fn make_state(error_history: &[f64], window: usize) -> Vec<f64> {
    assert!(!error_history.is_empty(), "make_state needs at least one error");
    padded_window(error_history, window, 0.0).into_iter().map(|e| e.min(STATE_CLIP)).collect()
}

/// Running record of a solve from a policy's point of view.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub errors: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub durations: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl History {
    pub fn new(initial_error: f64) -> Self {
        Self { errors: vec![initial_error], ..Self::default() }
    }

    pub fn record(&mut self, error: f64, lambda: f64, duration_s: f64, reward: f64) {
        self.errors.push(error);
        self.lambdas.push(lambda);
        self.durations.push(duration_s);
        self.rewards.push(reward);
    }

    pub fn iteration(&self) -> usize {
        self.lambdas.len()
    }

    /// Reversed-role state: negated recent durations, zeros before the first
    /// iteration.
    pub fn reversed_state(&self, window: usize) -> Vec<f64> {
        let neg: Vec<f64> = self.durations.iter().map(|d| -d).collect();
        padded_window(&neg, window, 0.0)
    }

    pub fn observe(&self, window: usize, kind: StateKind) -> PolicyObservation {
        let state = match kind {
            StateKind::Errors => make_state(&self.errors, window),
            StateKind::NegDurations => self.reversed_state(window),
        };
        let n = self.errors.len();
        PolicyObservation {
            state,
            iteration: self.iteration(),
            last_lambda: self.lambdas.last().copied(),
            error: self.errors[n - 1],
            prev_error: n.checked_sub(2).map(|i| self.errors[i]),
            recent_lambdas: padded_window(&self.lambdas, window, CLASSIC_LAMBDA0),
            recent_rewards: pad_zeros(&self.rewards, window),
        }
    }
}

fn pad_zeros(values: &[f64], window: usize) -> Vec<f64> {
    let tail = &values[values.len().saturating_sub(window)..];
    std::iter::repeat_n(0.0, window - tail.len()).chain(tail.iter().copied()).collect()
}

/// Multiplicative LM rule: start at `lambda0`, then halve or double depending
/// on whether the last step changed the error for the better.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicPolicy {
    pub mode: ClassicMode,
    pub lambda0: f64,
    current: f64,
}

impl ClassicPolicy {
    pub fn new(mode: ClassicMode) -> Self {
        Self::with_lambda0(mode, CLASSIC_LAMBDA0)
    }

    pub fn with_lambda0(mode: ClassicMode, lambda0: f64) -> Self {
        Self { mode, lambda0, current: lambda0 }
    }
}

impl Default for ClassicPolicy {
    fn default() -> Self {
        Self::new(ClassicMode::Standard)
    }
}

impl DampingPolicy for ClassicPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Classic
    }

    fn next_lambda(&mut self, obs: &PolicyObservation) -> f64 {
        self.current = match obs.prev_error {
            None => self.lambda0,
            Some(prev) => classic_lambda_update(self.current, obs.error, prev, self.mode),
        };
        clamp_lambda(self.current)
    }

    fn reset(&mut self) {
        self.current = self.lambda0;
    }
}

/// Cycles through a fixed list of damping factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledPolicy {
    pub schedule: Vec<f64>,
}

impl ScheduledPolicy {
    pub fn new(schedule: Vec<f64>) -> Self {
        assert!(!schedule.is_empty(), "schedule must not be empty");
        Self { schedule }
    }
}

impl DampingPolicy for ScheduledPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::ConstantScheduler
    }

    fn next_lambda(&mut self, obs: &PolicyObservation) -> f64 {
        clamp_lambda(self.schedule[obs.iteration % self.schedule.len()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPolicy {
    pub value: f64,
}

impl FixedPolicy {
    pub fn new(value: f64) -> Self {
        Self { value }
    }
}

impl DampingPolicy for FixedPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Fixed
    }

    fn next_lambda(&mut self, _obs: &PolicyObservation) -> f64 {
        clamp_lambda(self.value)
    }
}

/// Policy entry of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ClassicMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<std::path::PathBuf>,
}

impl PolicySpec {
    pub fn classic(mode: ClassicMode) -> Self {
        Self { kind: PolicyKind::Classic, mode: Some(mode), schedule: None, value: None, checkpoint_path: None }
    }

    pub fn scheduler(schedule: Vec<f64>) -> Self {
        Self { kind: PolicyKind::ConstantScheduler, mode: None, schedule: Some(schedule), value: None, checkpoint_path: None }
    }

    pub fn fixed(value: f64) -> Self {
        Self { kind: PolicyKind::Fixed, mode: None, schedule: None, value: Some(value), checkpoint_path: None }
    }

    pub fn from_checkpoint(kind: PolicyKind, path: impl Into<std::path::PathBuf>) -> Self {
        Self { kind, mode: None, schedule: None, value: None, checkpoint_path: Some(path.into()) }
    }

    /// Short label used in result tables.
    pub fn label(&self) -> String {
        match self.kind {
            PolicyKind::Classic => format!("classic-{}", self.mode.unwrap_or_default().as_str()),
            PolicyKind::Fixed => format!("fixed-{:e}", self.value.unwrap_or(f64::NAN)),
            kind => kind.as_str().to_string(),
        }
    }
}

impl ClassicMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassicMode::Paper => "paper",
            ClassicMode::Standard => "standard",
        }
    }
}
