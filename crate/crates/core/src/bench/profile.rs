use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::RunRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("a performance profile needs at least two solvers, got {0}")]
    TooFewSolvers(usize),
    #[error("no problem was solved to the requested tolerance by any solver")]
    NothingSolved,
    #[error("tolerance must lie in [0, 1], got {0}")]
    InvalidTolerance(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub relative_time: f64,
    pub solved_fraction: f64,
}

/// Right-continuous step function: the fraction is `solved_fraction` from
/// each point's `relative_time` up to the next point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub solver: String,
    pub points: Vec<ProfilePoint>,
}

impl ProfileCurve {
    pub fn fraction_at(&self, alpha: f64) -> f64 {
        self.points.iter().take_while(|p| p.relative_time <= alpha).last().map_or(0.0, |p| p.solved_fraction)
    }

    pub fn final_fraction(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.solved_fraction)
    }
}

/// Time at which `record` first reaches `target`, or `None` if it never does.
fn time_to_target(record: &RunRecord, target: f64) -> Option<f64> {
    if record.initial_error <= target {
        return Some(0.0);
    }
    let mut t = 0.0;
    for it in &record.records {
        t += it.duration_s;
        if it.error <= target {
            return Some(t);
        }
    }
    None
}

/// Performance profiles at tolerance `tau`. On each problem the target error
/// is `best + tau * (initial - best)`, `best` being the lowest final error any
/// solver reached there.
pub fn performance_profile(records: &[RunRecord], tau: f64) -> Result<Vec<ProfileCurve>, ProfileError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(ProfileError::InvalidTolerance(tau));
    }
    let mut solvers: Vec<&str> = Vec::new();
    let mut problems: Vec<(&str, u64)> = Vec::new();
    for r in records {
        if !solvers.contains(&r.policy.as_str()) {
            solvers.push(&r.policy);
        }
        if !problems.contains(&(r.problem_id.as_str(), r.seed)) {
            problems.push((&r.problem_id, r.seed));
        }
    }
    if solvers.len() < 2 {
        return Err(ProfileError::TooFewSolvers(solvers.len()));
    }

    // ratios[s][p]: time relative to the fastest solver on problem p
    let mut ratios = vec![vec![f64::INFINITY; problems.len()]; solvers.len()];
    let mut any_solved = false;
    for (p, &(id, seed)) in problems.iter().enumerate() {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.problem_id == id && r.seed == seed).collect();
        let best = runs.iter().map(|r| r.final_error).filter(|e| e.is_finite()).fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            continue;
        }
        let initial = runs[0].initial_error;
        let target = best + tau * (initial - best);
        let times: Vec<(usize, f64)> = runs
            .iter()
            .filter_map(|r| {
                let s = solvers.iter().position(|&x| x == r.policy)?;
                Some((s, time_to_target(r, target)?))
            })
            .collect();
        let Some(t_min) = times.iter().map(|&(_, t)| t).reduce(f64::min) else { continue };
        any_solved = true;
        for (s, t) in times {
            let ratio = if t_min > 0.0 { t / t_min } else if t == 0.0 { 1.0 } else { f64::INFINITY };
            ratios[s][p] = ratios[s][p].min(ratio);
        }
    }
    if !any_solved {
        return Err(ProfileError::NothingSolved);
    }

    let n = problems.len() as f64;
    Ok(solvers
        .iter()
        .zip(&ratios)
        .map(|(name, rs)| {
            let mut finite: Vec<f64> = rs.iter().copied().filter(|r| r.is_finite()).collect();
            finite.sort_by(f64::total_cmp);
            let mut points = vec![ProfilePoint {
                relative_time: 1.0,
                solved_fraction: finite.iter().filter(|&&r| r <= 1.0).count() as f64 / n,
            }];
            for (i, &r) in finite.iter().enumerate() {
                if r <= 1.0 {
                    continue;
                }
                let frac = (i + 1) as f64 / n;
                match points.last_mut() {
                    Some(last) if last.relative_time == r => last.solved_fraction = frac,
                    _ => points.push(ProfilePoint { relative_time: r, solved_fraction: frac }),
                }
            }
            ProfileCurve { solver: name.to_string(), points }
        })
        .collect())
}

pub fn profiles_csv(curves: &[ProfileCurve]) -> String {
    let mut out = String::from("solver,alpha,fraction\n");
    for c in curves {
        for p in &c.points {
            let _ = writeln!(out, "{},{},{}", c.solver, p.relative_time, p.solved_fraction);
        }
    }
    out
}

/// Error against cumulative time for one run, with tolerance levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub cumulative_time: Vec<f64>,
    pub error: Vec<f64>,
    /// `(tau, final + tau * (initial - final))` for each requested tolerance.
    pub thresholds: Vec<(f64, f64)>,
}

pub fn convergence_trace(record: &RunRecord, taus: &[f64]) -> ConvergenceTrace {
    let mut t = 0.0;
    let mut cumulative_time = vec![0.0];
    let mut error = vec![record.initial_error];
    for it in &record.records {
        t += it.duration_s;
        cumulative_time.push(t);
        error.push(it.error);
    }
    let thresholds =
        taus.iter().map(|&tau| (tau, record.final_error + tau * (record.initial_error - record.final_error))).collect();
    ConvergenceTrace { cumulative_time, error, thresholds }
}

impl ConvergenceTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cumulative_time_s,error\n");
        for (t, e) in self.cumulative_time.iter().zip(&self.error) {
            let _ = writeln!(out, "{t:e},{e:e}");
        }
        out
    }
}
