//! Library side of the command-line tool. Every command reads a [`RunConfig`],
//! writes its outputs under an output directory and returns the paths it
//! wrote. With `deterministic_time` set, outputs depend only on the config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::profile::profiles_csv;
use super::{
    ablation_suite, convergence_trace, extract_schedule, performance_profile, run_comparison,
    AblationKind, AblationSetup, ComparisonTable, NamedPolicy, ProfileError, RunRecord,
};
use crate::baselines::{zero_net_train, BaselineError, ZeroNet, ZeroNetConfig, ZeroNetPolicy};
use crate::env::EnvConfig;
use crate::nn::NnError;
use crate::policy::{ClassicPolicy, DampingPolicy, FixedPolicy, PolicyKind, PolicySpec, ScheduledPolicy};
use crate::sac::{train_with_callback, write_log_jsonl, AgentPolicy, SacAgent, SacError, TrainConfig};
use crate::scene::{generate_synthetic, read_bal_file, write_bal_file, BAProblem, BalError, SceneError, SyntheticConfig};
use crate::solver::{records_to_csv, solve, ClassicMode};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Bal(#[from] BalError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io { path: path.to_path_buf(), source }
}

/// Full experiment configuration, readable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub deterministic_time: bool,
    /// Template for synthetic scenes; its seed is replaced per scene.
    pub scene: SyntheticConfig,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Test scene `i` uses seed `seed + test_seed_offset + i`.
    pub test_seed_offset: u64,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub zero_net: ZeroNetConfig,
    pub policies: Vec<PolicySpec>,
    pub seeds: Vec<u64>,
    pub profile_taus: Vec<f64>,
    pub scheduler_length: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            deterministic_time: false,
            scene: SyntheticConfig::default(),
            train_scenes: 10,
            test_scenes: 10,
            test_seed_offset: 1000,
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            zero_net: ZeroNetConfig::default(),
            policies: vec![PolicySpec::classic(ClassicMode::Standard)],
            seeds: vec![0],
            profile_taus: vec![0.1, 0.001],
            scheduler_length: 4,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CommandError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self, CommandError> {
        Self::from_toml_str(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Applies command-line overrides. The seed propagates to every seeded
    /// component; deterministic time propagates to the environment.
    pub fn with_overrides(mut self, seed: Option<u64>, deterministic_time: bool) -> Self {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        self.train.seed = self.seed;
        self.zero_net.seed = self.seed;
        self.deterministic_time |= deterministic_time;
        self.env.deterministic_time = self.deterministic_time;
        self
    }

    pub fn scene_config(&self, seed: u64) -> SyntheticConfig {
        self.scene.with_seed(seed)
    }

    pub fn train_problems(&self) -> Result<Vec<BAProblem>, CommandError> {
        (0..self.train_scenes as u64)
            .map(|i| Ok(generate_synthetic(&self.scene_config(self.seed + i))?))
            .collect()
    }

    pub fn test_problems(&self) -> Result<Vec<(String, BAProblem)>, CommandError> {
        (0..self.test_scenes as u64)
            .map(|i| {
                let seed = self.seed + self.test_seed_offset + i;
                Ok((format!("synthetic-{seed}"), generate_synthetic(&self.scene_config(seed))?))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a RunConfig,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_manifest(
    out_dir: &Path,
    command: &str,
    config: &RunConfig,
    outputs: &[PathBuf],
    extra: Option<serde_json::Value>,
) -> Result<PathBuf, CommandError> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        outputs: outputs.iter().map(|p| file_name(p)).collect(),
        extra,
    };
    let path = out_dir.join(format!("{command}_manifest.json"));
    write_file(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(path)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CommandError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<(), CommandError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Joins relative paths onto `out_dir`.
pub fn resolve_path(out_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

/// Builds a policy from its config entry. Relative checkpoint paths are
/// resolved against `out_dir`.
pub fn build_policy(spec: &PolicySpec, out_dir: &Path) -> Result<Box<dyn DampingPolicy>, CommandError> {
    let checkpoint = || {
        spec.checkpoint_path
            .as_deref()
            .map(|p| resolve_path(out_dir, p))
            .ok_or_else(|| CommandError::Config(format!("policy {} needs checkpoint_path", spec.kind.as_str())))
    };
    Ok(match spec.kind {
        PolicyKind::Classic => Box::new(ClassicPolicy::new(spec.mode.unwrap_or_default())),
        PolicyKind::Fixed => Box::new(FixedPolicy::new(
            spec.value.ok_or_else(|| CommandError::Config("fixed policy needs value".into()))?,
        )),
        PolicyKind::ConstantScheduler => {
            let schedule = spec.schedule.clone().unwrap_or_default();
            if schedule.is_empty() {
                return Err(CommandError::Config("constant_scheduler needs a non-empty schedule".into()));
            }
            Box::new(ScheduledPolicy::new(schedule))
        }
        PolicyKind::Agent => Box::new(AgentPolicy::new(SacAgent::load(&checkpoint()?)?)),
        PolicyKind::ZeroNet => Box::new(ZeroNetPolicy::new(ZeroNet::load(&checkpoint()?)?)),
    })
}

/// Writes `count` synthetic scenes as BAL files, seeds `first_seed..`.
pub fn generate(config: &RunConfig, out_dir: &Path, count: usize, first_seed: u64) -> Result<Vec<PathBuf>, CommandError> {
    ensure_dir(out_dir)?;
    let mut outputs = Vec::with_capacity(count + 1);
    for seed in first_seed..first_seed + count as u64 {
        let problem = generate_synthetic(&config.scene_config(seed))?;
        let path = out_dir.join(format!("synthetic-{seed}.bal"));
        write_bal_file(&problem, &path).map_err(io_err(&path))?;
        outputs.push(path);
    }
    let extra = serde_json::json!({ "first_seed": first_seed, "count": count });
    outputs.push(write_manifest(out_dir, "generate", config, &outputs, Some(extra))?);
    Ok(outputs)
}

pub enum ProblemSource {
    Bal(PathBuf),
    Synthetic(u64),
}

/// Solves one problem with one policy; writes the trace CSV and summary JSON.
pub fn solve_one(
    config: &RunConfig,
    source: &ProblemSource,
    spec: &PolicySpec,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CommandError> {
    ensure_dir(out_dir)?;
    let problem = match source {
        ProblemSource::Bal(p) => read_bal_file(p)?,
        ProblemSource::Synthetic(seed) => generate_synthetic(&config.scene_config(*seed))?,
    };
    let mut policy = build_policy(spec, out_dir)?;
    let res = solve(&problem, policy.as_mut(), &config.env.solve_options());
    let trace = out_dir.join("solve_trace.csv");
    write_file(&trace, records_to_csv(&res.records).as_bytes())?;
    let summary = out_dir.join("solve_summary.json");
    write_file(&summary, serde_json::to_string_pretty(&res.summary())?.as_bytes())?;
    let mut outputs = vec![trace, summary];
    outputs.push(write_manifest(out_dir, "solve", config, &outputs, Some(serde_json::to_value(spec)?))?);
    Ok(outputs)
}

/// Trains the SAC agent; writes `agent.json` and `train_log.jsonl`.
pub fn train_agent(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CommandError> {
    train_agent_with_progress(config, out_dir, |_| {})
}

pub fn train_agent_with_progress(
    config: &RunConfig,
    out_dir: &Path,
    on_episode: impl FnMut(&crate::sac::EpisodeLog),
) -> Result<Vec<PathBuf>, CommandError> {
    ensure_dir(out_dir)?;
    let problems = config.train_problems()?;
    let out = train_with_callback(&problems, &config.env, &config.train, on_episode)?;
    let ckpt = out_dir.join("agent.json");
    out.agent.save(&ckpt, Some(&out.rng))?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut buf = Vec::new();
    write_log_jsonl(&out.log, &mut buf)?;
    write_file(&log_path, &buf)?;
    let mut outputs = vec![ckpt, log_path];
    outputs.push(write_manifest(out_dir, "train", config, &outputs, None)?);
    Ok(outputs)
}

/// Trains the zero-net baseline; writes `zero_net.json`.
pub fn train_zero_net(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CommandError> {
    ensure_dir(out_dir)?;
    let problems = config.train_problems()?;
    let net = zero_net_train(&problems, &config.zero_net, &config.env.solve_options())?;
    let ckpt = out_dir.join("zero_net.json");
    net.save(&ckpt)?;
    let mut outputs = vec![ckpt];
    outputs.push(write_manifest(out_dir, "train_zero_net", config, &outputs, None)?);
    Ok(outputs)
}

/// Evaluates every configured policy on the held-out suite.
pub fn evaluate(config: &RunConfig, out_dir: &Path) -> Result<(ComparisonTable, Vec<PathBuf>), CommandError> {
    ensure_dir(out_dir)?;
    let problems = config.test_problems()?;
    let mut policies = config
        .policies
        .iter()
        .map(|spec| Ok(NamedPolicy { label: spec.label(), policy: build_policy(spec, out_dir)? }))
        .collect::<Result<Vec<_>, CommandError>>()?;
    let table = run_comparison(&problems, &mut policies, &config.env.solve_options(), &config.seeds);
    let runs_csv = out_dir.join("eval_runs.csv");
    write_file(&runs_csv, table.runs_csv().as_bytes())?;
    let agg_csv = out_dir.join("eval_aggregates.csv");
    write_file(&agg_csv, table.aggregates_csv().as_bytes())?;
    let runs_json = out_dir.join("eval_runs.json");
    write_file(&runs_json, serde_json::to_string(&table.runs)?.as_bytes())?;
    let mut outputs = vec![runs_csv, agg_csv, runs_json];
    outputs.push(write_manifest(out_dir, "eval", config, &outputs, None)?);
    Ok((table, outputs))
}

pub fn load_runs(path: &Path) -> Result<Vec<RunRecord>, CommandError> {
    Ok(serde_json::from_slice(&fs::read(path).map_err(io_err(path))?)?)
}

/// Performance profiles at every configured tolerance, plus one convergence
/// trace per run.
pub fn profile(config: &RunConfig, runs: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>, CommandError> {
    ensure_dir(out_dir)?;
    let mut outputs = Vec::new();
    for &tau in &config.profile_taus {
        let curves = performance_profile(runs, tau)?;
        let path = out_dir.join(format!("profile_tau_{tau}.csv"));
        write_file(&path, profiles_csv(&curves).as_bytes())?;
        outputs.push(path);
    }
    let traces_dir = out_dir.join("traces");
    ensure_dir(&traces_dir)?;
    for r in runs {
        let trace = convergence_trace(r, &config.profile_taus);
        let path = traces_dir.join(format!("{}_{}_{}.csv", r.problem_id, r.policy, r.seed));
        write_file(&path, trace.to_csv().as_bytes())?;
    }
    outputs.push(write_manifest(out_dir, "profile", config, &outputs, None)?);
    Ok(outputs)
}

pub fn ablate(config: &RunConfig, kind: AblationKind, out_dir: &Path) -> Result<Vec<PathBuf>, CommandError> {
    ensure_dir(out_dir)?;
    let setup = AblationSetup {
        train_problems: config.train_problems()?,
        test_problems: config.test_problems()?,
        env: config.env,
        train: config.train,
    };
    let table = ablation_suite(kind, &setup)?;
    let name = serde_json::to_value(kind)?.as_str().unwrap_or("ablation").to_string();
    let csv = out_dir.join(format!("ablation_{name}.csv"));
    write_file(&csv, table.to_csv().as_bytes())?;
    let json = out_dir.join(format!("ablation_{name}.json"));
    write_file(&json, serde_json::to_string_pretty(&table)?.as_bytes())?;
    let mut outputs = vec![csv, json];
    outputs.push(write_manifest(out_dir, "ablate", config, &outputs, None)?);
    Ok(outputs)
}

/// Averages the first damping factors of a trained agent over the test suite.
pub fn scheduler_from_agent(config: &RunConfig, checkpoint: &Path) -> Result<Vec<f64>, CommandError> {
    let mut agent = AgentPolicy::new(SacAgent::load(checkpoint)?);
    let problems = config.test_problems()?;
    Ok(extract_schedule(&mut agent, &problems, &config.env.solve_options(), config.scheduler_length))
}
