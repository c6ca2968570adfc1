//! Soft actor-critic over the damping factor.
//!
//! Five networks: a squashed-Gaussian policy, two soft Q critics, a state
//! value network and its delayed target copy. The raw action `u` lives in
//! `(-1, 1)` and maps to `lambda = 10^(9u - 7)`.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{BaEnv, EnvConfig, EnvError};
use crate::nn::{mse, AdamConfig, Grads, Mlp, MlpCheckpoint, NnError, OptimState};
use crate::policy::{DampingPolicy, PolicyKind, PolicyObservation, StateKind};
use crate::scene::BAProblem;
use crate::solver::{clamp_lambda, Outcome};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const HIDDEN: usize = 256;
const AGENT_CHECKPOINT_VERSION: u32 = 1;

/// `lambda = 10^(9u - 7)`, so `u` in `[-1, 1]` covers `[1e-16, 1e2]`.
pub fn action_to_lambda(u: f64) -> f64 {
    clamp_lambda(10f64.powf(9.0 * u - 7.0))
}

/// Inverse of [`action_to_lambda`] on its range.
pub fn lambda_to_action(lambda: f64) -> f64 {
    ((lambda.log10() + 7.0) / 9.0).clamp(-1.0, 1.0)
}

/// `log(1 - tanh(x)^2)` without cancellation for large `|x|`.
pub fn log_one_minus_tanh_sq(x: f64) -> f64 {
    let softplus = |z: f64| if z > 30.0 { z } else { z.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - x - softplus(-2.0 * x))
}

/// Log-density of `u = tanh(x)` for `x ~ N(mu, exp(log_std)^2)`.
pub fn squashed_log_prob(mu: f64, log_std: f64, x: f64) -> f64 {
    let std = log_std.exp();
    let z = (x - mu) / std;
    -0.5 * z * z - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln() - log_one_minus_tanh_sq(x)
}

#[derive(Debug, Error)]
pub enum SacError {
    #[error("network: {0}")]
    Nn(#[from] NnError),
    #[error("episode {episode}: {source}")]
    Env { episode: usize, source: EnvError },
    #[error("non-finite {0} loss after {1} updates")]
    NonFiniteLoss(&'static str, u64),
    #[error("non-finite policy output")]
    NonFiniteOutput,
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error("no training problems")]
    NoProblems,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticMode {
    /// Both critics trained; targets use their minimum.
    #[default]
    Min,
    /// The second critic is a delayed copy of the first, refreshed with the
    /// target value network.
    Delayed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub random_warmup_actions: usize,
    pub batch_size: usize,
    pub capacity: usize,
    pub discount: f64,
    pub entropy_coeff: f64,
    pub target_update_period: u64,
    /// 1.0 copies the value net into the target every period; smaller values
    /// blend it in after every update.
    pub soft_update_rate: f64,
    pub critic_mode: CriticMode,
    pub episodes: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// Multiplier applied to state vectors before they enter a network.
    pub state_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            random_warmup_actions: 500,
            batch_size: 256,
            capacity: 100_000,
            discount: 0.99,
            entropy_coeff: 0.2,
            target_update_period: 5,
            soft_update_rate: 1.0,
            critic_mode: CriticMode::Min,
            episodes: 500,
            seed: 0,
            learning_rate: 1e-3,
            state_scale: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action_raw: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub timeout: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::with_capacity(capacity.min(4096)), next: 0 }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Uniform indices, with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>, SacError> {
        if self.items.len() < n {
            return Err(SacError::BufferTooSmall { have: self.items.len(), need: n });
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Losses {
    pub policy: f64,
    pub critic1: f64,
    pub critic2: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentNets {
    pub policy: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub value: Mlp,
    pub target_value: Mlp,
}

impl AgentNets {
    pub fn new(window: usize, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let policy = Mlp::with_rng(&[window, HIDDEN, HIDDEN, HIDDEN, 2], rng)?;
        let critic1 = Mlp::with_rng(&[window + 1, HIDDEN, HIDDEN, 1], rng)?;
        let critic2 = Mlp::with_rng(&[window + 1, HIDDEN, HIDDEN, 1], rng)?;
        let value = Mlp::with_rng(&[window, HIDDEN, HIDDEN, 1], rng)?;
        let target_value = value.clone();
        Ok(Self { policy, critic1, critic2, value, target_value })
    }

    pub fn window(&self) -> usize {
        self.policy.input_width()
    }
}

/// Policy head outputs for a batch: means and clamped log-stds, plus a mask of
/// entries where the clamp was inactive.
struct Heads {
    mu: Vec<f64>,
    log_std: Vec<f64>,
    unclamped: Vec<bool>,
}

fn split_heads(out: &DMatrix<f64>) -> Heads {
    let n = out.ncols();
    let mut h = Heads { mu: Vec::with_capacity(n), log_std: Vec::with_capacity(n), unclamped: Vec::with_capacity(n) };
    for c in 0..n {
        let ls = out[(1, c)];
        h.mu.push(out[(0, c)]);
        h.log_std.push(ls.clamp(LOG_STD_MIN, LOG_STD_MAX));
        h.unclamped.push((LOG_STD_MIN..=LOG_STD_MAX).contains(&ls));
    }
    h
}

/// Optimizers and counters that travel with the networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub policy: OptimState,
    pub critic1: OptimState,
    pub critic2: OptimState,
    pub value: OptimState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub nets: AgentNets,
    pub optim: Optimizers,
    pub config: TrainConfig,
    pub state_kind: StateKind,
    pub updates: u64,
}

impl SacAgent {
    pub fn new(window: usize, state_kind: StateKind, config: TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let nets = AgentNets::new(window, rng)?;
        let adam = AdamConfig { lr: config.learning_rate, ..AdamConfig::default() };
        let optim = Optimizers {
            policy: OptimState::new(&nets.policy, adam),
            critic1: OptimState::new(&nets.critic1, adam),
            critic2: OptimState::new(&nets.critic2, adam),
            value: OptimState::new(&nets.value, adam),
        };
        Ok(Self { nets, optim, config, state_kind, updates: 0 })
    }

    pub fn window(&self) -> usize {
        self.nets.window()
    }

    fn scaled(&self, state: &[f64]) -> Vec<f64> {
        state.iter().map(|v| v * self.config.state_scale).collect()
    }

    fn state_batch<'a>(&self, states: impl Iterator<Item = &'a [f64]>) -> DMatrix<f64> {
        let cols: Vec<f64> = states.flat_map(|s| s.iter().map(|v| v * self.config.state_scale)).collect();
        let n = cols.len() / self.window();
        DMatrix::from_vec(self.window(), n, cols)
    }

    /// Mean and clamped log-std of the policy at `state`.
    pub fn policy_heads(&self, state: &[f64]) -> Result<(f64, f64), SacError> {
        let out = self.nets.policy.forward(&self.scaled(state))?;
        if !out.iter().all(|v| v.is_finite()) {
            return Err(SacError::NonFiniteOutput);
        }
        Ok((out[0], out[1].clamp(LOG_STD_MIN, LOG_STD_MAX)))
    }

    /// Returns `(lambda, u)`. Deterministic actions use the squashed mean.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        deterministic: bool,
        rng: &mut R,
    ) -> Result<(f64, f64), SacError> {
        let (mu, log_std) = self.policy_heads(state)?;
        let x = if deterministic {
            mu
        } else {
            let eps: f64 = rng.sample(StandardNormal);
            mu + log_std.exp() * eps
        };
        let u = x.tanh();
        Ok((action_to_lambda(u), u))
    }

    /// Policy objective `mean(alpha log pi - min Q)` for fixed reparameterization
    /// noise, with its gradient in the policy parameters.
    pub fn policy_objective(&self, states: &DMatrix<f64>, noise: &[f64], alpha: f64) -> Result<(f64, Grads), SacError> {
        let cache = self.nets.policy.forward_cached(states)?;
        let heads = split_heads(cache.output());
        let n = states.ncols();
        let mut xs = Vec::with_capacity(n);
        let mut logp = Vec::with_capacity(n);
        let mut critic_in = DMatrix::zeros(states.nrows() + 1, n);
        critic_in.rows_mut(0, states.nrows()).copy_from(states);
        for k in 0..n {
            let x = heads.mu[k] + heads.log_std[k].exp() * noise[k];
            xs.push(x);
            logp.push(squashed_log_prob(heads.mu[k], heads.log_std[k], x));
            critic_in[(states.nrows(), k)] = x.tanh();
        }
        let (min_q, dq_du) = self.min_critic_with_action_grad(&critic_in)?;

        let mut loss = 0.0;
        let mut grad_out = DMatrix::zeros(2, n);
        let inv_n = 1.0 / n as f64;
        for k in 0..n {
            let u = xs[k].tanh();
            loss += (alpha * logp[k] - min_q[k]) * inv_n;
            let dl_dx = 2.0 * alpha * u - dq_du[k] * (1.0 - u * u);
            grad_out[(0, k)] = dl_dx * inv_n;
            if heads.unclamped[k] {
                grad_out[(1, k)] = (dl_dx * heads.log_std[k].exp() * noise[k] - alpha) * inv_n;
            }
        }
        let (grads, _) = self.nets.policy.backward(&cache, &grad_out);
        Ok((loss, grads))
    }

    /// Per-sample `min(Q1, Q2)` and its derivative in the action input.
    fn min_critic_with_action_grad(&self, critic_in: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>), SacError> {
        let n = critic_in.ncols();
        let c1 = self.nets.critic1.forward_cached(critic_in)?;
        let c2 = self.nets.critic2.forward_cached(critic_in)?;
        let (q1, q2) = (c1.output(), c2.output());
        let mut g1 = DMatrix::zeros(1, n);
        let mut g2 = DMatrix::zeros(1, n);
        let mut min_q = Vec::with_capacity(n);
        for k in 0..n {
            if q1[(0, k)] <= q2[(0, k)] {
                min_q.push(q1[(0, k)]);
                g1[(0, k)] = 1.0;
            } else {
                min_q.push(q2[(0, k)]);
                g2[(0, k)] = 1.0;
            }
        }
        let (_, d1) = self.nets.critic1.backward(&c1, &g1);
        let (_, d2) = self.nets.critic2.backward(&c2, &g2);
        let a = critic_in.nrows() - 1;
        let dq_du = (0..n).map(|k| d1[(a, k)] + d2[(a, k)]).collect();
        Ok((min_q, dq_du))
    }

    /// One SAC update from a uniform batch of `buffer`.
    pub fn update(&mut self, buffer: &ReplayBuffer, rng: &mut ChaCha8Rng) -> Result<Losses, SacError> {
        let cfg = self.config;
        let idx = buffer.sample_indices(cfg.batch_size, rng)?;
        let batch: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
        let noise: Vec<f64> = (0..batch.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.update_on(&batch, &noise)
    }

    /// Update on an explicit batch with explicit reparameterization noise.
    pub fn update_on(&mut self, batch: &[&Transition], noise: &[f64]) -> Result<Losses, SacError> {
        let cfg = self.config;
        let n = batch.len();
        let w = self.window();
        let states = self.state_batch(batch.iter().map(|t| t.state.as_slice()));
        let next_states = self.state_batch(batch.iter().map(|t| t.next_state.as_slice()));

        // soft Q targets bootstrap through the target value network
        let v_next = self.nets.target_value.forward_batch(&next_states)?;
        let q_target = DMatrix::from_fn(1, n, |_, k| {
            let t = batch[k];
            let cont = if t.done && !t.timeout { 0.0 } else { 1.0 };
            t.reward + cfg.discount * cont * v_next[(0, k)]
        });
        let mut critic_in = DMatrix::zeros(w + 1, n);
        critic_in.rows_mut(0, w).copy_from(&states);
        for (k, t) in batch.iter().enumerate() {
            critic_in[(w, k)] = t.action_raw;
        }
        let c1 = self.nets.critic1.forward_cached(&critic_in)?;
        let (l1, g1) = mse(c1.output(), &q_target);
        let (gc1, _) = self.nets.critic1.backward(&c1, &g1);
        let c2 = self.nets.critic2.forward_cached(&critic_in)?;
        let (l2, g2) = mse(c2.output(), &q_target);
        let (gc2, _) = self.nets.critic2.backward(&c2, &g2);

        // value target: min Q at a fresh policy sample minus the entropy term
        let pcache = self.nets.policy.forward_cached(&states)?;
        let heads = split_heads(pcache.output());
        let mut fresh_in = DMatrix::zeros(w + 1, n);
        fresh_in.rows_mut(0, w).copy_from(&states);
        let mut logp = Vec::with_capacity(n);
        for k in 0..n {
            let x = heads.mu[k] + heads.log_std[k].exp() * noise[k];
            logp.push(squashed_log_prob(heads.mu[k], heads.log_std[k], x));
            fresh_in[(w, k)] = x.tanh();
        }
        let (min_q, _) = self.min_critic_with_action_grad(&fresh_in)?;
        let v_target = DMatrix::from_fn(1, n, |_, k| min_q[k] - cfg.entropy_coeff * logp[k]);
        let vcache = self.nets.value.forward_cached(&states)?;
        let (lv, gv) = mse(vcache.output(), &v_target);
        let (gval, _) = self.nets.value.backward(&vcache, &gv);

        let (lp, gpol) = self.policy_objective(&states, noise, cfg.entropy_coeff)?;

        for (name, l) in [("critic1", l1), ("critic2", l2), ("value", lv), ("policy", lp)] {
            if !l.is_finite() {
                return Err(SacError::NonFiniteLoss(name, self.updates));
            }
        }
        self.optim.critic1.apply(&mut self.nets.critic1, &gc1);
        if cfg.critic_mode == CriticMode::Min {
            self.optim.critic2.apply(&mut self.nets.critic2, &gc2);
        }
        self.optim.value.apply(&mut self.nets.value, &gval);
        self.optim.policy.apply(&mut self.nets.policy, &gpol);
        self.updates += 1;

        if cfg.soft_update_rate >= 1.0 {
            if self.updates % cfg.target_update_period == 0 {
                self.nets.target_value.copy_from(&self.nets.value);
            }
        } else {
            self.nets.target_value.soft_update(&self.nets.value, cfg.soft_update_rate);
        }
        if cfg.critic_mode == CriticMode::Delayed && self.updates % cfg.target_update_period == 0 {
            self.nets.critic2.copy_from(&self.nets.critic1);
        }
        Ok(Losses { policy: lp, critic1: l1, critic2: l2, value: lv })
    }

    pub fn value_of(&self, state: &[f64]) -> Result<f64, SacError> {
        Ok(self.nets.value.forward(&self.scaled(state))?[0])
    }

    pub fn save(&self, path: &Path, rng: Option<&ChaCha8Rng>) -> Result<(), SacError> {
        let ck = AgentCheckpoint::new(self, rng);
        std::fs::write(path, serde_json::to_vec(&ck)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SacError> {
        let ck: AgentCheckpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        ck.into_agent()
    }
}

/// Uniform `u` on `(-1, 1)` mapped to a damping factor.
pub fn warmup_action<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let u = loop {
        let u: f64 = rng.random_range(-1.0..1.0);
        if u > -1.0 {
            break u;
        }
    };
    (action_to_lambda(u), u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub state_kind: StateKind,
    pub updates: u64,
    pub policy: MlpCheckpoint,
    pub critic1: MlpCheckpoint,
    pub critic2: MlpCheckpoint,
    pub value: MlpCheckpoint,
    pub target_value: MlpCheckpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<ChaCha8Rng>,
}

impl AgentCheckpoint {
    pub fn new(agent: &SacAgent, rng: Option<&ChaCha8Rng>) -> Self {
        let n = &agent.nets;
        let o = &agent.optim;
        Self {
            version: AGENT_CHECKPOINT_VERSION,
            config: agent.config,
            state_kind: agent.state_kind,
            updates: agent.updates,
            policy: MlpCheckpoint::new(&n.policy, Some(&o.policy), None),
            critic1: MlpCheckpoint::new(&n.critic1, Some(&o.critic1), None),
            critic2: MlpCheckpoint::new(&n.critic2, Some(&o.critic2), None),
            value: MlpCheckpoint::new(&n.value, Some(&o.value), None),
            target_value: MlpCheckpoint::new(&n.target_value, None, None),
            rng: rng.cloned(),
        }
    }

    pub fn into_agent(self) -> Result<SacAgent, SacError> {
        if self.version != AGENT_CHECKPOINT_VERSION {
            return Err(SacError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let nets = AgentNets {
            policy: self.policy.to_mlp()?,
            critic1: self.critic1.to_mlp()?,
            critic2: self.critic2.to_mlp()?,
            value: self.value.to_mlp()?,
            target_value: self.target_value.to_mlp()?,
        };
        let adam = AdamConfig { lr: self.config.learning_rate, ..AdamConfig::default() };
        let restore = |ck: MlpCheckpoint, mlp: &Mlp| ck.optim.unwrap_or_else(|| OptimState::new(mlp, adam));
        let optim = Optimizers {
            policy: restore(self.policy, &nets.policy),
            critic1: restore(self.critic1, &nets.critic1),
            critic2: restore(self.critic2, &nets.critic2),
            value: restore(self.value, &nets.value),
        };
        Ok(SacAgent { nets, optim, config: self.config, state_kind: self.state_kind, updates: self.updates })
    }
}

/// A trained agent used as a damping policy, acting on its mean action.
#[derive(Debug, Clone)]
pub struct AgentPolicy {
    agent: SacAgent,
}

impl AgentPolicy {
    pub fn new(agent: SacAgent) -> Self {
        Self { agent }
    }

    pub fn agent(&self) -> &SacAgent {
        &self.agent
    }
}

impl DampingPolicy for AgentPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Agent
    }

    fn next_lambda(&mut self, obs: &PolicyObservation) -> f64 {
        // the deterministic path never touches the RNG
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match self.agent.select_action(&obs.state, true, &mut rng) {
            Ok((lambda, _)) => lambda,
            Err(_) => crate::solver::LAMBDA_MAX,
        }
    }

    fn window(&self) -> usize {
        self.agent.window()
    }

    fn state_kind(&self) -> StateKind {
        self.agent.state_kind
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub iterations: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub outcome: Outcome,
}

pub struct TrainOutput {
    pub agent: SacAgent,
    pub log: Vec<EpisodeLog>,
    pub rng: ChaCha8Rng,
}

/// Trains an agent on episodes drawn uniformly from `problems`.
pub fn train(problems: &[BAProblem], env_config: &EnvConfig, config: &TrainConfig) -> Result<TrainOutput, SacError> {
    train_with_callback(problems, env_config, config, |_| {})
}

pub fn train_with_callback(
    problems: &[BAProblem],
    env_config: &EnvConfig,
    config: &TrainConfig,
    mut on_episode: impl FnMut(&EpisodeLog),
) -> Result<TrainOutput, SacError> {
    if problems.is_empty() {
        return Err(SacError::NoProblems);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agent = SacAgent::new(env_config.window, env_config.reward_variant.state_kind(), *config, &mut rng)?;
    let mut env = BaEnv::new(*env_config).map_err(|source| SacError::Env { episode: 0, source })?;
    let mut buffer = ReplayBuffer::new(config.capacity);
    let mut steps = 0usize;
    let mut log = Vec::with_capacity(config.episodes);

    for episode in 0..config.episodes {
        let problem = &problems[rng.random_range(0..problems.len())];
        let env_err = |source| SacError::Env { episode, source };
        let mut obs = env.reset(problem).map_err(env_err)?;
        let mut ret = 0.0;
        loop {
            let (lambda, u) = if steps < config.random_warmup_actions {
                warmup_action(&mut rng)
            } else {
                agent.select_action(&obs.state, false, &mut rng)?
            };
            let out = env.step(lambda).map_err(env_err)?;
            steps += 1;
            ret += out.reward;
            buffer.push(Transition {
                state: obs.state.clone(),
                action_raw: u,
                reward: out.reward,
                next_state: out.state.state.clone(),
                done: out.done,
                timeout: out.timeout,
            });
            if steps >= config.random_warmup_actions && buffer.len() >= config.batch_size {
                agent.update(&buffer, &mut rng)?;
            }
            obs = out.state;
            if out.done {
                let entry = EpisodeLog {
                    episode,
                    iterations: out.info.iteration,
                    episode_return: ret,
                    outcome: out.info.outcome.unwrap_or(Outcome::NumericalFailure),
                };
                on_episode(&entry);
                log.push(entry);
                break;
            }
        }
    }
    Ok(TrainOutput { agent, log, rng })
}

/// Training log as JSON lines.
pub fn write_log_jsonl(log: &[EpisodeLog], mut out: impl std::io::Write) -> Result<(), SacError> {
    for entry in log {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
