//! Experiment harness: policy comparisons, performance profiles, convergence
//! traces and ablations. Everything here emits data; nothing is plotted.

mod ablation;
pub mod commands;
mod profile;

pub use ablation::{ablation_suite, extract_schedule, AblationKind, AblationRow, AblationSetup, AblationTable};
pub use profile::{convergence_trace, performance_profile, ConvergenceTrace, ProfileCurve, ProfileError, ProfilePoint};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::policy::{DampingPolicy, PolicyKind};
use crate::scene::BAProblem;
use crate::solver::{solve, IterationRecord, Outcome, SolveOptions};

/// One solve of one problem by one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem_id: String,
    pub policy: String,
    pub kind: PolicyKind,
    pub seed: u64,
    pub iterations: usize,
    pub total_time_s: f64,
    pub initial_error: f64,
    pub final_error: f64,
    pub outcome: Outcome,
    pub records: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: String,
    pub runs: usize,
    pub mean_iterations: f64,
    pub median_iterations: f64,
    pub mean_time_s: f64,
    pub median_time_s: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
}

/// A policy under comparison with its table label.
pub struct NamedPolicy {
    pub label: String,
    pub policy: Box<dyn DampingPolicy>,
}

impl NamedPolicy {
    pub fn new(label: impl Into<String>, policy: impl DampingPolicy + 'static) -> Self {
        Self { label: label.into(), policy: Box::new(policy) }
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Aggregates per policy label, in first-appearance order.
pub fn aggregate(runs: &[RunRecord]) -> Vec<AggregateRow> {
    let mut labels: Vec<&str> = Vec::new();
    for r in runs {
        if !labels.contains(&r.policy.as_str()) {
            labels.push(&r.policy);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let rows: Vec<&RunRecord> = runs.iter().filter(|r| r.policy == label).collect();
            let its: Vec<f64> = rows.iter().map(|r| r.iterations as f64).collect();
            let times: Vec<f64> = rows.iter().map(|r| r.total_time_s).collect();
            let ok = rows.iter().filter(|r| r.outcome == Outcome::Converged).count();
            AggregateRow {
                policy: label.to_string(),
                runs: rows.len(),
                mean_iterations: mean(&its),
                median_iterations: median(&its),
                mean_time_s: mean(&times),
                median_time_s: median(&times),
                success_rate: ok as f64 / rows.len() as f64,
            }
        })
        .collect()
}

pub fn solve_record(
    problem_id: &str,
    problem: &BAProblem,
    label: &str,
    policy: &mut dyn DampingPolicy,
    seed: u64,
    options: &SolveOptions,
) -> RunRecord {
    let res = solve(problem, policy, options);
    RunRecord {
        problem_id: problem_id.to_string(),
        policy: label.to_string(),
        kind: policy.kind(),
        seed,
        iterations: res.iterations,
        total_time_s: res.total_time_s,
        initial_error: res.initial_error,
        final_error: res.final_error,
        outcome: res.outcome,
        records: res.records,
    }
}

/// Solves every `(problem, policy, seed)` cell. Failures become rows with a
/// failure outcome; the sweep always completes.
pub fn run_comparison(
    problems: &[(String, BAProblem)],
    policies: &mut [NamedPolicy],
    options: &SolveOptions,
    seeds: &[u64],
) -> ComparisonTable {
    let mut runs = Vec::with_capacity(problems.len() * policies.len() * seeds.len());
    for (id, problem) in problems {
        for named in policies.iter_mut() {
            for &seed in seeds {
                runs.push(solve_record(id, problem, &named.label, named.policy.as_mut(), seed, options));
            }
        }
    }
    let aggregates = aggregate(&runs);
    ComparisonTable { runs, aggregates }
}

impl ComparisonTable {
    pub fn aggregate_for(&self, label: &str) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.policy == label)
    }

    pub fn runs_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs.iter().filter(move |r| r.policy == label)
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from("problem,policy,seed,iterations,total_time_s,initial_error,final_error,outcome\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{},{},{:e},{:e},{:e},{}",
                r.problem_id, r.policy, r.seed, r.iterations, r.total_time_s, r.initial_error, r.final_error, r.outcome
            );
        }
        out
    }

    pub fn aggregates_csv(&self) -> String {
        let mut out = String::from("policy,runs,mean_iterations,median_iterations,mean_time_s,median_time_s,success_rate\n");
        for a in &self.aggregates {
            let _ = writeln!(
                out,
                "{},{},{},{},{:e},{:e},{}",
                a.policy, a.runs, a.mean_iterations, a.median_iterations, a.mean_time_s, a.median_time_s, a.success_rate
            );
        }
        out
    }
}
