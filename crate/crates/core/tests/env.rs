use ba_lambda::env::{compute_reward, episode_to_csv, make_reversed_state, BaEnv, EnvConfig, EnvError, RewardVariant};
use ba_lambda::policy::{ClassicPolicy, DampingPolicy, FixedPolicy};
use ba_lambda::scene::{generate_synthetic, BAProblem, SyntheticConfig};
use ba_lambda::solver::Outcome;
use proptest::prelude::*;

fn scene(seed: u64) -> BAProblem {
    generate_synthetic(&SyntheticConfig::new(10, 10, 1.0, 0.1, seed)).unwrap()
}

/// Runs one episode with `policy`; returns every step's (reward, done, outcome, duration).
fn episode(config: EnvConfig, problem: &BAProblem, policy: &mut dyn DampingPolicy) -> Vec<(f64, bool, Option<Outcome>, f64)> {
    let mut env = BaEnv::new(config).unwrap();
    let mut obs = env.reset(problem).unwrap();
    policy.reset();
    let mut out = Vec::new();
    loop {
        let s = env.step(policy.next_lambda(&obs)).unwrap();
        out.push((s.reward, s.done, s.info.outcome, s.info.duration_s));
        if s.done {
            return out;
        }
        obs = s.state;
    }
}

#[test]
fn reset_examples() {
    let truth = generate_synthetic(&SyntheticConfig::new(10, 10, 0.0, 0.0, 1)).unwrap();
    let mut env = BaEnv::new(EnvConfig::default()).unwrap();
    let obs = env.reset(&truth).unwrap();
    assert!(obs.state.iter().all(|&e| e.abs() < 1e-12));
    assert_eq!(obs.state.len(), 5);
    assert_eq!(env.iteration(), 0);
    assert!(!env.is_done());

    let p = scene(3);
    let a = env.reset(&p).unwrap();
    let b = BaEnv::new(EnvConfig::default()).unwrap().reset(&p).unwrap();
    assert_eq!(a, b);
}

#[test]
fn step_requires_reset_and_rejects_after_done() {
    let mut env = BaEnv::new(EnvConfig::default()).unwrap();
    assert!(matches!(env.step(0.25), Err(EnvError::NotReset)));
    let p = scene(0);
    let mut obs = env.reset(&p).unwrap();
    let mut classic = ClassicPolicy::default();
    while !env.step(classic.next_lambda(&obs)).map(|s| { obs = s.state.clone(); s.done }).unwrap() {}
    assert!(matches!(env.step(0.25), Err(EnvError::StepAfterDone)));
    env.reset(&p).unwrap();
    assert!(env.step(0.25).is_ok());
}

#[test]
fn cap_terminates_without_bonus() {
    let config = EnvConfig { max_iterations: 3, ..EnvConfig::default() };
    let mut env = BaEnv::new(config).unwrap();
    env.reset(&scene(2)).unwrap();
    let mut last = None;
    for _ in 0..3 {
        last = Some(env.step(1e4).unwrap());
    }
    let last = last.unwrap();
    assert!(last.done && last.timeout);
    assert_eq!(last.info.outcome, Some(Outcome::IterationCap));
    assert!(last.reward < 0.0);
    assert!(last.info.error.is_finite());
}

#[test]
fn duration_return_is_bonus_minus_durations() {
    for seed in 0..4 {
        let steps = episode(EnvConfig::default(), &scene(seed), &mut ClassicPolicy::default());
        let ret: f64 = steps.iter().map(|s| s.0).sum();
        let nonterminal: f64 = steps[..steps.len() - 1].iter().map(|s| s.3).sum();
        assert_eq!(steps.last().unwrap().2, Some(Outcome::Converged));
        assert!((ret - (10.0 - nonterminal)).abs() <= 1e-12);
    }
}

#[test]
fn deterministic_return_counts_iterations() {
    let config = EnvConfig { deterministic_time: true, ..EnvConfig::default() };
    for seed in 0..4 {
        let steps = episode(config, &scene(seed), &mut ClassicPolicy::default());
        let ret: f64 = steps.iter().map(|s| s.0).sum();
        assert_eq!(ret, 10.0 - (steps.len() as f64 - 1.0));
        assert!(steps.iter().all(|s| s.3 == 1.0));
    }
}

#[test]
fn exactly_one_positive_reward_on_convergence() {
    for variant in [RewardVariant::Duration, RewardVariant::Constant, RewardVariant::Reduction, RewardVariant::Reversed] {
        let config = EnvConfig { reward_variant: variant, ..EnvConfig::default() };
        for seed in 0..3 {
            let steps = episode(config, &scene(seed), &mut ClassicPolicy::default());
            let positive = steps.iter().filter(|s| s.0 > 0.0).count();
            assert_eq!(positive, 1, "{variant:?}");
            assert!(steps.last().unwrap().0 > 0.0);
        }
        let capped = episode(EnvConfig { max_iterations: 4, ..config }, &scene(0), &mut FixedPolicy::new(1e2));
        assert!(capped.iter().all(|s| s.0 <= 0.0));
    }
}

#[test]
fn reduction_terminal_reward() {
    let c = EnvConfig::default();
    let r = compute_reward(0.0, true, 10, 0.0, RewardVariant::Reduction, &c);
    assert!((r - 9.0438).abs() < 1e-4);
}

#[test]
fn reversed_state_examples() {
    assert_eq!(make_reversed_state(&[0.1], 5), vec![-0.1; 5]);
    assert_eq!(make_reversed_state(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], 5), vec![-4.0, -5.0, -6.0, -7.0, -8.0]);

    let config = EnvConfig { reward_variant: RewardVariant::Reversed, deterministic_time: true, ..EnvConfig::default() };
    let mut env = BaEnv::new(config).unwrap();
    let obs = env.reset(&scene(4)).unwrap();
    assert_eq!(obs.state, vec![0.0; 5]);
    let s = env.step(0.25).unwrap();
    assert_eq!(s.state.state, vec![-1.0; 5]);
    assert_eq!(s.reward, -s.info.error);
}

#[test]
fn trace_export_has_reward_column() {
    let mut env = BaEnv::new(EnvConfig::default()).unwrap();
    env.reset(&scene(1)).unwrap();
    env.step(0.25).unwrap();
    env.step(0.125).unwrap();
    let csv = episode_to_csv(env.trace());
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iter,lambda,error,duration_s,reward");
    assert_eq!(lines.len(), 3);
}

#[test]
fn invalid_config_is_rejected() {
    assert!(BaEnv::new(EnvConfig { convergence_bonus: 0.0, ..EnvConfig::default() }).is_err());
    assert!(BaEnv::new(EnvConfig { reduction_rate: 1.0, ..EnvConfig::default() }).is_err());
}

proptest! {
    #[test]
    fn reward_formulas(d in 0.0f64..5.0, it in 1usize..100, err in 0.0f64..1e4) {
        let c = EnvConfig::default();
        prop_assert_eq!(compute_reward(d, false, it, err, RewardVariant::Duration, &c), -d);
        prop_assert_eq!(compute_reward(d, true, it, err, RewardVariant::Duration, &c), 10.0);
        prop_assert_eq!(compute_reward(d, false, it, err, RewardVariant::Constant, &c), -1.0);
        prop_assert_eq!(compute_reward(d, false, it, err, RewardVariant::Reduction, &c), 0.0);
        prop_assert_eq!(compute_reward(d, true, it, err, RewardVariant::Reduction, &c), 10.0 * 0.99f64.powi(it as i32));
        prop_assert_eq!(compute_reward(d, false, it, err, RewardVariant::Reversed, &c), -err);
    }

    #[test]
    fn reversed_state_windowing(durations in prop::collection::vec(0.0f64..3.0, 1..20), window in 1usize..10) {
        let s = make_reversed_state(&durations, window);
        prop_assert_eq!(s.len(), window);
        prop_assert_eq!(*s.last().unwrap(), -durations[durations.len() - 1]);
        prop_assert!(s.iter().all(|&x| x <= 0.0));
    }
}
