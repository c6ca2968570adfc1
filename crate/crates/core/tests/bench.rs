use ba_lambda::bench::commands::{evaluate, load_runs, profile, RunConfig};
use ba_lambda::bench::{
    aggregate, convergence_trace, extract_schedule, median, performance_profile, run_comparison, AblationKind,
    NamedPolicy, ProfileError, RunRecord,
};
use ba_lambda::policy::{ClassicPolicy, FixedPolicy, PolicyKind, ScheduledPolicy};
use ba_lambda::scene::{generate_synthetic, read_bal_file, write_bal_file, BAProblem, SyntheticConfig};
use ba_lambda::solver::{solve, Clock, ClassicMode, IterationRecord, Outcome, SolveOptions};
use proptest::prelude::*;

fn scene(seed: u64) -> BAProblem {
    generate_synthetic(&SyntheticConfig::new(10, 10, 1.0, 0.1, seed)).unwrap()
}

fn unit() -> SolveOptions {
    SolveOptions { clock: Clock::Unit, ..SolveOptions::default() }
}

fn suite(n: u64) -> Vec<(String, BAProblem)> {
    (0..n).map(|s| (format!("p{s}"), scene(s))).collect()
}

fn record(problem: &str, policy: &str, durations: &[f64], errors: &[f64], initial: f64) -> RunRecord {
    RunRecord {
        problem_id: problem.into(),
        policy: policy.into(),
        kind: PolicyKind::Fixed,
        seed: 0,
        iterations: durations.len(),
        total_time_s: durations.iter().sum(),
        initial_error: initial,
        final_error: *errors.last().unwrap_or(&initial),
        outcome: Outcome::Converged,
        records: durations
            .iter()
            .zip(errors)
            .enumerate()
            .map(|(i, (&d, &e))| IterationRecord { iter: i + 1, lambda: 1.0, error: e, duration_s: d })
            .collect(),
    }
}

#[test]
fn sweep_is_exhaustive_and_aggregates_recompute() {
    let problems = suite(3);
    let mut policies = vec![
        NamedPolicy::new("classic", ClassicPolicy::new(ClassicMode::Standard)),
        NamedPolicy::new("fixed", FixedPolicy::new(1e-4)),
    ];
    let seeds = [0, 1];
    let table = run_comparison(&problems, &mut policies, &unit(), &seeds);
    assert_eq!(table.runs.len(), 3 * 2 * 2);
    assert_eq!(table.aggregates.len(), 2);
    for a in &table.aggregates {
        let rows: Vec<&RunRecord> = table.runs_for(&a.policy).collect();
        let its: Vec<f64> = rows.iter().map(|r| r.iterations as f64).collect();
        assert_eq!(a.runs, rows.len());
        assert_eq!(a.median_iterations, median(&its));
        assert!((a.mean_iterations - its.iter().sum::<f64>() / its.len() as f64).abs() < 1e-12);
        let ok = rows.iter().filter(|r| r.outcome == Outcome::Converged).count() as f64;
        assert_eq!(a.success_rate, ok / rows.len() as f64);
    }
    assert_eq!(aggregate(&table.runs), table.aggregates);

    let csv = table.runs_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "problem,policy,seed,iterations,total_time_s,initial_error,final_error,outcome");
    assert_eq!(lines.count(), 12);
    assert!(table.aggregates_csv().starts_with("policy,runs,mean_iterations,median_iterations"));
}

#[test]
fn failed_solves_still_produce_rows() {
    let problems = suite(2);
    let options = SolveOptions { max_iterations: 2, ..unit() };
    let mut policies = vec![NamedPolicy::new("heavy", FixedPolicy::new(1e2))];
    let table = run_comparison(&problems, &mut policies, &options, &[0]);
    assert_eq!(table.runs.len(), 2);
    assert!(table.runs.iter().all(|r| r.outcome == Outcome::IterationCap));
    assert_eq!(table.aggregates[0].success_rate, 0.0);
}

#[test]
fn two_point_profile_example() {
    // "a" is twice as fast on the one problem; both reach the same error.
    let a = record("x", "a", &[1.0], &[1.0], 10.0);
    let b = record("x", "b", &[2.0], &[1.0], 10.0);
    let curves = performance_profile(&[a, b], 0.1).unwrap();
    assert_eq!(curves[0].fraction_at(1.0), 1.0);
    assert_eq!(curves[1].fraction_at(1.0), 0.0);
    assert_eq!(curves[1].fraction_at(1.99), 0.0);
    assert_eq!(curves[1].fraction_at(2.0), 1.0);
}

#[test]
fn profile_rejects_degenerate_input() {
    let a = record("x", "a", &[1.0], &[1.0], 10.0);
    assert_eq!(performance_profile(&[a.clone()], 0.1), Err(ProfileError::TooFewSolvers(1)));
    assert!(matches!(performance_profile(&[a], 1.5), Err(ProfileError::InvalidTolerance(_))));
}

#[test]
fn profiles_on_real_runs_are_valid_cdfs() {
    let problems = suite(4);
    let mut policies = vec![
        NamedPolicy::new("classic", ClassicPolicy::new(ClassicMode::Standard)),
        NamedPolicy::new("fixed", FixedPolicy::new(1e-4)),
    ];
    let table = run_comparison(&problems, &mut policies, &unit(), &[0]);
    for tau in [0.1, 1e-3] {
        let curves = performance_profile(&table.runs, tau).unwrap();
        let best_at_one: f64 = curves.iter().map(|c| c.fraction_at(1.0)).sum();
        assert!(best_at_one >= 1.0 - 1e-12, "some solver is fastest on each problem");
        for c in &curves {
            assert!(c.points[0].relative_time == 1.0);
            for w in c.points.windows(2) {
                assert!(w[1].relative_time > w[0].relative_time);
                assert!(w[1].solved_fraction >= w[0].solved_fraction);
            }
            assert!((0.0..=1.0).contains(&c.final_fraction()));
        }
    }
}

#[test]
fn convergence_trace_matches_the_run() {
    let p = scene(5);
    let options = SolveOptions::default();
    let mut classic = ClassicPolicy::default();
    let table = run_comparison(&[("p".into(), p)], &mut [NamedPolicy::new("c", ClassicPolicy::default())], &options, &[0]);
    let run = &table.runs[0];
    let trace = convergence_trace(run, &[0.1, 1e-3]);
    assert_eq!(trace.cumulative_time.len(), run.iterations + 1);
    assert_eq!(trace.error.len(), run.iterations + 1);
    assert!(trace.cumulative_time.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(*trace.error.last().unwrap(), run.final_error);
    assert_eq!(trace.error[0], run.initial_error);
    let (tau, level) = trace.thresholds[0];
    assert_eq!(tau, 0.1);
    assert!((level - (run.final_error + 0.1 * (run.initial_error - run.final_error))).abs() < 1e-9);
    assert!(trace.to_csv().starts_with("cumulative_time_s,error\n"));
    let _ = solve(&scene(5), &mut classic, &options);
}

#[test]
fn schedule_extraction_averages_leading_lambdas() {
    let problems = suite(3);
    let s = extract_schedule(&mut ScheduledPolicy::new(vec![1e-2, 1e-3, 1e-4]), &problems, &unit(), 2);
    assert_eq!(s, vec![1e-2, 1e-3]);
    let s = extract_schedule(&mut ClassicPolicy::default(), &problems, &unit(), 3);
    assert_eq!(s.len(), 3);
    assert_eq!(s[0], 0.25);
}

#[test]
fn ablation_kinds_parse() {
    assert_eq!("state-size".parse::<AblationKind>().unwrap(), AblationKind::StateSize);
    assert_eq!("reward_variant".parse::<AblationKind>().unwrap(), AblationKind::RewardVariant);
    assert_eq!("reversed".parse::<AblationKind>().unwrap(), AblationKind::Reversed);
    assert_eq!("scheduler".parse::<AblationKind>().unwrap(), AblationKind::Scheduler);
    assert!("bogus".parse::<AblationKind>().is_err());
}

#[test]
fn classic_solves_a_larger_bal_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.bal");
    let p = generate_synthetic(&SyntheticConfig::new(16, 200, 1.0, 0.05, 7)).unwrap();
    write_bal_file(&p, &path).unwrap();
    let loaded = read_bal_file(&path).unwrap();
    let res = solve(&loaded, &mut ClassicPolicy::default(), &SolveOptions::default());
    assert_eq!(res.outcome, Outcome::Converged);
    assert!(res.final_error < res.initial_error);
}

#[test]
fn evaluate_and_profile_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml_str(
        "seed = 3\ndeterministic_time = true\ntest_scenes = 3\n\
         [[policies]]\nkind = \"classic\"\nmode = \"standard\"\n\
         [[policies]]\nkind = \"fixed\"\nvalue = 1e-4\n",
    )
    .unwrap();
    let (table, paths) = evaluate(&cfg, dir.path()).unwrap();
    assert_eq!(table.runs.len(), 3 * 2);
    assert!(paths.iter().all(|p| p.exists()));
    let runs = load_runs(&dir.path().join("eval_runs.json")).unwrap();
    assert_eq!(runs, table.runs);
    profile(&cfg, &runs, dir.path()).unwrap();
    for tau in ["0.1", "0.001"] {
        let csv = std::fs::read_to_string(dir.path().join(format!("profile_tau_{tau}.csv"))).unwrap();
        assert!(csv.starts_with("solver,alpha,fraction\n"));
    }
    assert_eq!(std::fs::read_dir(dir.path().join("traces")).unwrap().count(), 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn profile_fractions_are_monotone(times in prop::collection::vec((0.1f64..5.0, 0.1f64..5.0, 0.1f64..5.0), 1..8)) {
        let mut recs = Vec::new();
        for (k, (a, b, c)) in times.iter().enumerate() {
            let id = format!("q{k}");
            recs.push(record(&id, "a", &[*a], &[1.0], 10.0));
            recs.push(record(&id, "b", &[*b], &[1.0], 10.0));
            recs.push(record(&id, "c", &[*c], &[1.0], 10.0));
        }
        let curves = performance_profile(&recs, 0.1).unwrap();
        let n = times.len() as f64;
        let at_one: f64 = curves.iter().map(|c| c.fraction_at(1.0) * n).sum();
        prop_assert!(at_one >= n - 1e-9);
        for c in &curves {
            let mut prev = 0.0;
            for alpha in [1.0, 1.5, 2.0, 5.0, 10.0, 100.0] {
                let f = c.fraction_at(alpha);
                prop_assert!(f >= prev && f <= 1.0);
                prev = f;
            }
            prop_assert!((c.fraction_at(100.0) - 1.0).abs() < 1e-12);
        }
    }
}
