//! Supervised "zero-net" baseline: regresses the damping factor toward the
//! one-step greedy choice on a fixed candidate grid.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{mlp_train_step, AdamConfig, Mlp, MlpCheckpoint, NnError, OptimState};
use crate::policy::{ClassicPolicy, DampingPolicy, History, PolicyKind, PolicyObservation, StateKind, DEFAULT_WINDOW};
use crate::sac::{action_to_lambda, lambda_to_action};
use crate::scene::BAProblem;
use crate::solver::{clamp_lambda, convergence_check, lm_iterate, SolveOptions, SolverError, SolverState};

pub const ZERO_NET_HIDDEN: usize = 1280;
/// Candidate damping factors for the greedy oracle.
pub const DEFAULT_GRID: [f64; 11] = [1e-16, 1e-12, 1e-8, 1e-4, 1e-2, 0.1, 0.25, 0.5, 1.0, 10.0, 1e3];
/// Regression targets are `atanh(u)` with `u` kept inside this bound.
const TARGET_U_BOUND: f64 = 0.995;
/// State entries are scaled like the agent's.
const STATE_SCALE: f64 = 1e-3;
const ZERO_NET_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("every oracle candidate failed")]
    AllCandidatesFailed,
    #[error("empty candidate grid")]
    EmptyGrid,
    #[error("no training problems")]
    NoProblems,
    #[error("expected three windows of length {expected}, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Next estimation error for each candidate, `None` where the trial step
/// failed. The live state is never touched.
pub fn oracle_trials(
    problem: &BAProblem,
    state: &SolverState,
    grid: &[f64],
    options: &SolveOptions,
) -> Vec<(f64, Option<f64>)> {
    grid.iter()
        .map(|&lambda| {
            let mut trial = state.clone();
            let err = lm_iterate(problem, &mut trial, lambda, options).ok().map(|r| r.error);
            (lambda, err)
        })
        .collect()
}

/// Candidate with the smallest next error; ties go to the smaller lambda.
pub fn zero_net_oracle(
    problem: &BAProblem,
    state: &SolverState,
    grid: &[f64],
    options: &SolveOptions,
) -> Result<f64, BaselineError> {
    if grid.is_empty() {
        return Err(BaselineError::EmptyGrid);
    }
    pick_best(&oracle_trials(problem, state, grid, options)).ok_or(BaselineError::AllCandidatesFailed)
}

/// Lambda of the lowest finite trial error; ties go to the smaller lambda.
pub fn pick_best(trials: &[(f64, Option<f64>)]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(lambda, err) in trials {
        let Some(err) = err.filter(|e| e.is_finite()) else { continue };
        best = match best {
            Some((bl, be)) if err > be || (err == be && lambda > bl) => Some((bl, be)),
            _ => Some((lambda, err)),
        };
    }
    best.map(|(l, _)| l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroNet {
    pub mlp: Mlp,
    pub window: usize,
}

impl ZeroNet {
    pub fn new(window: usize, seed: u64) -> Result<Self, NnError> {
        let mlp = Mlp::new(&[3 * window, ZERO_NET_HIDDEN, ZERO_NET_HIDDEN, ZERO_NET_HIDDEN, 1], seed)?;
        Ok(Self { mlp, window })
    }

    pub fn with_hidden(window: usize, hidden: usize, seed: u64) -> Result<Self, NnError> {
        let mlp = Mlp::new(&[3 * window, hidden, hidden, hidden, 1], seed)?;
        Ok(Self { mlp, window })
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        let ck = ZeroNetCheckpoint { version: ZERO_NET_CHECKPOINT_VERSION, window: self.window, net: MlpCheckpoint::new(&self.mlp, None, None) };
        std::fs::write(path, serde_json::to_vec(&ck)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let ck: ZeroNetCheckpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if ck.version != ZERO_NET_CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported zero-net version {}", ck.version)).into());
        }
        Ok(Self { mlp: ck.net.to_mlp()?, window: ck.window })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ZeroNetCheckpoint {
    version: u32,
    window: usize,
    net: MlpCheckpoint,
}

/// Network input: scaled states, actions as raw `u`, rewards.
pub fn zero_net_features(states: &[f64], actions: &[f64], rewards: &[f64]) -> Vec<f64> {
    states
        .iter()
        .map(|s| s * STATE_SCALE)
        .chain(actions.iter().map(|&l| lambda_to_action(clamp_lambda(l))))
        .chain(rewards.iter().copied())
        .collect()
}

fn observation_features(obs: &PolicyObservation) -> Vec<f64> {
    zero_net_features(&obs.state, &obs.recent_lambdas, &obs.recent_rewards)
}

pub fn zero_net_predict(net: &ZeroNet, states: &[f64], actions: &[f64], rewards: &[f64]) -> Result<f64, BaselineError> {
    for len in [states.len(), actions.len(), rewards.len()] {
        if len != net.window {
            return Err(BaselineError::ShapeMismatch { expected: net.window, found: len });
        }
    }
    let y = net.mlp.forward(&zero_net_features(states, actions, rewards))?[0];
    Ok(action_to_lambda(y.tanh()))
}

#[derive(Debug, Clone)]
pub struct ZeroNetPolicy {
    net: ZeroNet,
}

impl ZeroNetPolicy {
    pub fn new(net: ZeroNet) -> Self {
        Self { net }
    }
}

impl DampingPolicy for ZeroNetPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::ZeroNet
    }

    fn next_lambda(&mut self, obs: &PolicyObservation) -> f64 {
        zero_net_predict(&self.net, &obs.state, &obs.recent_lambdas, &obs.recent_rewards)
            .unwrap_or(crate::solver::LAMBDA_MAX)
    }

    fn window(&self) -> usize {
        self.net.window
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroNetConfig {
    pub grid: Vec<f64>,
    pub epochs: usize,
    pub seed: u64,
    pub window: usize,
    pub hidden: usize,
    /// Gradient steps on the aggregated data set after each epoch.
    pub fit_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ZeroNetConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID.to_vec(),
            epochs: 3,
            seed: 0,
            window: DEFAULT_WINDOW,
            hidden: ZERO_NET_HIDDEN,
            fit_steps: 100,
            batch_size: 64,
            learning_rate: 1e-4,
        }
    }
}

/// One labeled visit: network features and the oracle's choice.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub lambda_star: f64,
}

/// Rolls out `policy` on `problem`, labeling every visited state with the
/// oracle before the policy's own step is applied.
pub fn collect_labels(
    problem: &BAProblem,
    policy: &mut dyn DampingPolicy,
    grid: &[f64],
    window: usize,
    options: &SolveOptions,
) -> Result<Vec<LabeledSample>, BaselineError> {
    policy.reset();
    let mut state = SolverState::new(problem)?;
    let mut history = History::new(state.current_error());
    let mut out = Vec::new();
    while state.iteration < options.max_iterations {
        let obs = history.observe(window, StateKind::Errors);
        let lambda_star = zero_net_oracle(problem, &state, grid, options)?;
        out.push(LabeledSample { features: observation_features(&obs), lambda_star });
        let lambda = clamp_lambda(policy.next_lambda(&obs));
        let Ok(rec) = lm_iterate(problem, &mut state, lambda, options) else { break };
        history.record(rec.error, lambda, rec.duration_s, -rec.duration_s);
        if convergence_check(&state.error_history, options.threshold) {
            break;
        }
    }
    Ok(out)
}

/// Data-aggregation training: epoch 0 follows the classic rule, later epochs
/// follow the current network, and every visited state is labeled greedily.
pub fn zero_net_train(problems: &[BAProblem], config: &ZeroNetConfig, options: &SolveOptions) -> Result<ZeroNet, BaselineError> {
    if problems.is_empty() {
        return Err(BaselineError::NoProblems);
    }
    if config.grid.is_empty() {
        return Err(BaselineError::EmptyGrid);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = ZeroNet::with_hidden(config.window, config.hidden, rng.random())?;
    let mut optim = OptimState::new(&net.mlp, AdamConfig { lr: config.learning_rate, ..AdamConfig::default() });
    let mut data: Vec<LabeledSample> = Vec::new();

    for epoch in 0..config.epochs {
        for problem in problems {
            let samples = if epoch == 0 {
                collect_labels(problem, &mut ClassicPolicy::default(), &config.grid, config.window, options)?
            } else {
                let mut p = ZeroNetPolicy::new(net.clone());
                collect_labels(problem, &mut p, &config.grid, config.window, options)?
            };
            data.extend(samples);
        }
        if data.is_empty() {
            continue;
        }
        let width = 3 * config.window;
        for _ in 0..config.fit_steps {
            let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..data.len())).collect();
            let inputs = DMatrix::from_fn(width, idx.len(), |r, c| data[idx[c]].features[r]);
            let targets = DMatrix::from_fn(1, idx.len(), |_, c| {
                lambda_to_action(data[idx[c]].lambda_star).clamp(-TARGET_U_BOUND, TARGET_U_BOUND).atanh()
            });
            mlp_train_step(&mut net.mlp, &mut optim, &inputs, &targets)?;
        }
    }
    Ok(net)
}
