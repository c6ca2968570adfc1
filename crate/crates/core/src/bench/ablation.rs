use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{run_comparison, ComparisonTable, NamedPolicy};
use crate::env::{EnvConfig, RewardVariant};
use crate::policy::{ClassicPolicy, DampingPolicy, ScheduledPolicy};
use crate::sac::{train, AgentPolicy, SacError, TrainConfig};
use crate::scene::BAProblem;
use crate::solver::{solve, ClassicMode, SolveOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    StateSize,
    RewardVariant,
    Reversed,
    Scheduler,
}

impl std::str::FromStr for AblationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "state_size" => Ok(Self::StateSize),
            "reward_variant" | "reward" => Ok(Self::RewardVariant),
            "reversed" => Ok(Self::Reversed),
            "scheduler" => Ok(Self::Scheduler),
            other => Err(format!("unknown ablation kind {other:?}")),
        }
    }
}

pub struct AblationSetup {
    pub train_problems: Vec<BAProblem>,
    pub test_problems: Vec<(String, BAProblem)>,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub median_iterations: f64,
    pub mean_iterations: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub kind: AblationKind,
    pub rows: Vec<AblationRow>,
    /// Schedule evaluated by the scheduler suite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,median_iterations,mean_iterations,success_rate\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.variant, r.median_iterations, r.mean_iterations, r.success_rate);
        }
        out
    }
}

/// Mean of the first `len` damping factors the policy picks on each problem.
/// Solves shorter than `len` contribute only the entries they have.
pub fn extract_schedule(
    policy: &mut dyn DampingPolicy,
    problems: &[(String, BAProblem)],
    options: &SolveOptions,
    len: usize,
) -> Vec<f64> {
    let mut sums = vec![0.0; len];
    let mut counts = vec![0usize; len];
    for (_, p) in problems {
        let res = solve(p, policy, options);
        for (k, rec) in res.records.iter().take(len).enumerate() {
            sums[k] += rec.lambda;
            counts[k] += 1;
        }
    }
    sums.iter().zip(&counts).filter(|(_, &c)| c > 0).map(|(s, &c)| s / c as f64).collect()
}

fn row(table: &ComparisonTable, label: &str, variant: &str) -> AblationRow {
    let a = table.aggregate_for(label).expect("label was evaluated");
    AblationRow {
        variant: variant.to_string(),
        median_iterations: a.median_iterations,
        mean_iterations: a.mean_iterations,
        success_rate: a.success_rate,
    }
}

fn train_and_eval(setup: &AblationSetup, env: EnvConfig, variant: &str) -> Result<AblationRow, SacError> {
    let out = train(&setup.train_problems, &env, &setup.train)?;
    let mut pols = [NamedPolicy::new(variant, AgentPolicy::new(out.agent))];
    let table = run_comparison(&setup.test_problems, &mut pols, &env.solve_options(), &[0]);
    Ok(row(&table, variant, variant))
}

fn classic_row(setup: &AblationSetup) -> AblationRow {
    let mut pols = [NamedPolicy::new("classic", ClassicPolicy::new(ClassicMode::Standard))];
    let table = run_comparison(&setup.test_problems, &mut pols, &setup.env.solve_options(), &[0]);
    row(&table, "classic", "classic")
}

/// Trains and evaluates each variant of `kind` on the shared suite. The
/// classic rule is always the first row.
pub fn ablation_suite(kind: AblationKind, setup: &AblationSetup) -> Result<AblationTable, SacError> {
    let mut rows = vec![classic_row(setup)];
    let mut schedule = None;
    match kind {
        AblationKind::StateSize => {
            for window in [1, 5, 10, 20] {
                let env = EnvConfig { window, ..setup.env };
                rows.push(train_and_eval(setup, env, &format!("window-{window}"))?);
            }
        }
        AblationKind::RewardVariant => {
            for variant in [RewardVariant::Duration, RewardVariant::Constant, RewardVariant::Reduction] {
                let env = EnvConfig { reward_variant: variant, ..setup.env };
                rows.push(train_and_eval(setup, env, variant.as_str())?);
            }
        }
        AblationKind::Reversed => {
            for variant in [RewardVariant::Duration, RewardVariant::Reversed] {
                let env = EnvConfig { reward_variant: variant, ..setup.env };
                rows.push(train_and_eval(setup, env, variant.as_str())?);
            }
        }
        AblationKind::Scheduler => {
            let out = train(&setup.train_problems, &setup.env, &setup.train)?;
            let options = setup.env.solve_options();
            let mut agent = AgentPolicy::new(out.agent);
            let sched = extract_schedule(&mut agent, &setup.test_problems, &options, 4);
            let mut pols = [NamedPolicy::new("agent", agent), NamedPolicy::new("scheduler", ScheduledPolicy::new(sched.clone()))];
            let table = run_comparison(&setup.test_problems, &mut pols, &options, &[0]);
            rows.push(row(&table, "agent", "agent"));
            rows.push(row(&table, "scheduler", "scheduler"));
            schedule = Some(sched);
        }
    }
    Ok(AblationTable { kind, rows, schedule })
}
