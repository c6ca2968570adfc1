use ba_lambda::policy::{ClassicPolicy, FixedPolicy};
use ba_lambda::scene::{
    generate_synthetic, parse_bal, project, serialize_bal, BAProblem, CameraPose, Observation, Point3, SyntheticConfig,
};
use ba_lambda::solver::{
    damped_step_with, estimation_error, linearize, lm_iterate, residuals, solve, ClassicMode, Clock, Linearization,
    Outcome, ParamVector, Residuals, SolveOptions, SolverState, StepMethod,
};
use nalgebra::{DMatrix, DVector, Rotation3, SMatrix, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn scene(nc: usize, np: usize, noise: f64, seed: u64) -> BAProblem {
    generate_synthetic(&SyntheticConfig::new(nc, np, 1.0, noise, seed)).unwrap()
}

fn noiseless_at_truth(seed: u64) -> BAProblem {
    let p = generate_synthetic(&SyntheticConfig::new(10, 10, 0.0, 0.0, seed)).unwrap();
    assert_eq!(p.pixel_sigma(), 1.0);
    p
}

fn flat_residuals(problem: &BAProblem, flat: &[f64]) -> DVector<f64> {
    let params = ParamVector::from_flat(problem.num_cameras(), problem.num_points(), flat);
    residuals(problem, &params).unwrap().stacked()
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

#[test]
fn jacobian_matches_finite_differences_on_five_scenes() {
    for seed in 0..5 {
        let problem = scene(10, 10, 0.1, seed);
        let params = ParamVector::from_problem(&problem);
        let lin = linearize(&problem, &params).unwrap();
        let analytic = lin.dense_jacobian();
        let x0 = params.to_flat();
        for k in 0..x0.len() {
            let h = 1e-6 * x0[k].abs().max(1.0);
            let (mut xp, mut xm) = (x0.clone(), x0.clone());
            xp[k] += h;
            xm[k] -= h;
            let fd = (flat_residuals(&problem, &xp) - flat_residuals(&problem, &xm)) / (2.0 * h);
            for r in 0..fd.len() {
                let (a, f) = (analytic[(r, k)], fd[r]);
                let err = (a - f).abs() / a.abs().max(f.abs()).max(1e-2);
                assert!(err < 1e-5, "seed {seed} row {r} col {k}: analytic {a} fd {f}");
            }
        }
    }
}

#[test]
fn block_hessian_matches_dense_reconstruction() {
    let problem = scene(6, 15, 0.2, 3);
    let lin = linearize(&problem, &ParamVector::from_problem(&problem)).unwrap();
    let j = lin.dense_jacobian();
    let r = DVector::from_iterator(2 * lin.residuals.len(), lin.residuals.iter().flat_map(|v| [v.x, v.y]));
    let w = 1.0 / problem.pixel_sigma().powi(2);
    let h_ref = j.transpose() * &j * w;
    let g_ref = j.transpose() * r * w;
    let h = lin.dense_hessian();
    assert!((&h - &h_ref).abs().max() <= 1e-10 * h_ref.abs().max());
    assert!((lin.dense_gradient() - g_ref).norm() <= 1e-10 * lin.dense_gradient().norm());
    assert!((&h - h.transpose()).abs().max() == 0.0);
}

#[test]
fn gradient_vanishes_along_translation_gauge() {
    for seed in 0..3 {
        let problem = scene(8, 12, 0.1, seed);
        let params = ParamVector::from_problem(&problem);
        let lin = linearize(&problem, &params).unwrap();
        let d = Vector3::new(0.3, -0.5, 0.8);
        let mut dir = ParamVector::zeros(problem.num_cameras(), problem.num_points());
        for (c, p) in dir.cameras.iter_mut().zip(&params.cameras) {
            let r = Rotation3::new(Vector3::new(p[0], p[1], p[2]));
            let dt = -(r * d);
            c[3] = dt.x;
            c[4] = dt.y;
            c[5] = dt.z;
        }
        for p in dir.points.iter_mut() {
            *p = d;
        }
        let dir = DVector::from_vec(dir.to_flat());
        let g = lin.dense_gradient();
        assert!(g.dot(&dir).abs() <= 1e-8 * g.norm() * dir.norm(), "seed {seed}");
    }
}

#[test]
fn residuals_match_projection_loop() {
    let problem = scene(7, 9, 0.3, 11);
    let params = ParamVector::from_problem(&problem);
    let res = residuals(&problem, &params).unwrap();
    assert_eq!(res.len(), problem.observations().len());
    for (obs, r) in problem.observations().iter().zip(res.as_slice()) {
        let px = project(&problem.cameras()[obs.camera_index], &problem.points()[obs.point_index]).unwrap();
        let expect = obs.pixel - px;
        assert!((r - expect).norm() <= 1e-12 * expect.norm().max(1.0));
    }
}

#[test]
fn residual_is_observed_minus_predicted() {
    let cam = CameraPose::new(Vector3::zeros(), Vector3::zeros(), 1.0, 0.0, 0.0);
    let obs = vec![
        Observation { camera_index: 0, point_index: 0, pixel: Vector2::zeros() },
        Observation { camera_index: 1, point_index: 1, pixel: Vector2::zeros() },
    ];
    let problem =
        BAProblem::new(vec![cam, cam], vec![Point3::new(3.0, 4.0, -1.0), Point3::new(0.0, 0.0, -2.0)], obs, 1.0, None)
            .unwrap();
    let res = residuals(&problem, &ParamVector::from_problem(&problem)).unwrap();
    assert_eq!(res.as_slice()[0], Vector2::new(-3.0, -4.0));
    assert_eq!(res.as_slice()[1], Vector2::zeros());
}

#[test]
fn noiseless_truth_has_zero_residuals() {
    let problem = noiseless_at_truth(4);
    let res = residuals(&problem, &ParamVector::from_problem(&problem)).unwrap();
    assert!(res.as_slice().iter().all(|r| r.norm() < 1e-9));
}

#[test]
fn estimation_error_examples() {
    assert_eq!(estimation_error(&Residuals(vec![Vector2::zeros(); 3]), 1.0), 0.0);
    assert_eq!(estimation_error(&Residuals(vec![Vector2::new(1.0, 0.0), Vector2::new(0.0, 2.0)]), 1.0), 5.0);
    assert_eq!(estimation_error(&Residuals(vec![Vector2::new(2.0, 0.0)]), 2.0), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let res: Vec<Vector2<f64>> = (0..50).map(|_| Vector2::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0))).collect();
    let mut naive = 0.0;
    for r in &res {
        for k in 0..2 {
            naive += r[k] * r[k] / (0.7 * 0.7);
        }
    }
    let e = estimation_error(&Residuals(res), 0.7);
    assert!((e - naive).abs() <= 1e-12 * naive);
}

/// A random block-sparse least-squares model whose Hessian is full rank, unlike
/// a real BA linearization which has a seven-dimensional gauge null space.
fn well_conditioned(seed: u64) -> Linearization {
    let (nc, np) = (3, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let mut pairs = Vec::new();
    let (mut res, mut jc, mut jp) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..nc {
        for j in 0..np {
            pairs.push((i, j));
            res.push(Vector2::from_fn(|_, _| normal()));
            jc.push(SMatrix::<f64, 2, 9>::from_fn(|_, _| normal()));
            jp.push(SMatrix::<f64, 2, 3>::from_fn(|_, _| normal()));
        }
    }
    Linearization::from_blocks(nc, np, 1.0, pairs, res, jc, jp).unwrap()
}

#[test]
fn small_lambda_gives_gauss_newton_step() {
    for seed in 0..3 {
        let lin = well_conditioned(seed);
        let gn = lin.dense_hessian().lu().solve(&(-lin.dense_gradient())).unwrap();
        for method in [StepMethod::Dense, StepMethod::Schur] {
            let d = DVector::from_vec(damped_step_with(&lin, 1e-12, method).unwrap().to_flat());
            assert!(rel(&d, &gn) < 1e-6, "{method:?}");
        }
    }
}

#[test]
fn large_lambda_gives_gradient_descent_direction() {
    for seed in 0..3 {
        let lin = well_conditioned(seed);
        let g = lin.dense_gradient();
        let d = DVector::from_vec(damped_step_with(&lin, 1e8, StepMethod::Schur).unwrap().to_flat());
        let cos = d.dot(&(-&g)) / (d.norm() * g.norm());
        assert!(cos > 1.0 - 1e-6, "cos {cos}");
        assert!(rel(&d, &(-&g / 1e8)) < 1e-5);
    }
}

#[test]
fn schur_matches_dense_solve() {
    for (nc, np, seed) in [(3, 5, 0), (5, 30, 1), (12, 80, 2), (20, 200, 3)] {
        let problem = scene(nc, np, 0.1, seed);
        let lin = linearize(&problem, &ParamVector::from_problem(&problem)).unwrap();
        for lambda in [1e-6, 1e-2, 1.0, 1e2] {
            let schur = DVector::from_vec(damped_step_with(&lin, lambda, StepMethod::Schur).unwrap().to_flat());
            let dense = DVector::from_vec(damped_step_with(&lin, lambda, StepMethod::Dense).unwrap().to_flat());
            let err = rel(&schur, &dense);
            assert!(err < 1e-8, "{nc}x{np} lambda {lambda}: {err}");
        }
    }
}

#[test]
fn dense_step_solves_normal_equations() {
    let problem = scene(4, 10, 0.1, 9);
    let lin = linearize(&problem, &ParamVector::from_problem(&problem)).unwrap();
    let lambda = 0.3;
    let d = DVector::from_vec(damped_step_with(&lin, lambda, StepMethod::Dense).unwrap().to_flat());
    let a = lin.dense_hessian() + DMatrix::identity(lin.num_params(), lin.num_params()) * lambda;
    let g = lin.dense_gradient();
    assert!((a * d + &g).norm() <= 1e-9 * g.norm());
}

#[test]
fn non_positive_lambda_is_rejected() {
    let problem = scene(4, 6, 0.1, 0);
    let lin = linearize(&problem, &ParamVector::from_problem(&problem)).unwrap();
    assert!(damped_step_with(&lin, 0.0, StepMethod::Auto).is_err());
    assert!(damped_step_with(&lin, -1.0, StepMethod::Auto).is_err());
    assert!(damped_step_with(&lin, f64::NAN, StepMethod::Auto).is_err());
}

#[test]
fn iterate_at_truth_is_stationary() {
    let problem = noiseless_at_truth(1);
    let lin = linearize(&problem, &ParamVector::from_problem(&problem)).unwrap();
    for lambda in [1e-6, 0.25, 1e4] {
        let d = damped_step_with(&lin, lambda, StepMethod::Auto).unwrap();
        assert!(d.norm() < 1e-10, "lambda {lambda}: {}", d.norm());
        let mut state = SolverState::new(&problem).unwrap();
        lm_iterate(&problem, &mut state, lambda, &SolveOptions::default()).unwrap();
        assert!(state.current_error() < 1e-16);
    }
}

#[test]
fn iterate_reduces_error_and_keeps_books() {
    let base = generate_synthetic(&SyntheticConfig::new(10, 10, 0.0, 0.1, 2)).unwrap();
    let mut state = SolverState::new(&base).unwrap();
    let e0 = state.current_error();
    let rec = lm_iterate(&base, &mut state, 0.25, &SolveOptions::default()).unwrap();
    assert!(state.current_error() < e0);
    assert_eq!(state.error_history.len(), 2);
    assert_eq!(state.error_history.len(), state.iteration + 1);
    assert!(rec.duration_s > 0.0);
    assert_eq!(rec.iter, 1);
    assert_eq!(rec.error, state.current_error());
}

#[test]
fn iterate_on_terminal_state_errors() {
    let problem = scene(4, 6, 0.1, 0);
    let mut state = SolverState::new(&problem).unwrap();
    state.converged = true;
    assert!(lm_iterate(&problem, &mut state, 0.25, &SolveOptions::default()).is_err());
}

#[test]
fn solve_from_truth_converges_immediately() {
    let problem = noiseless_at_truth(2);
    let res = solve(&problem, &mut ClassicPolicy::default(), &SolveOptions::default());
    assert_eq!(res.outcome, Outcome::Converged);
    assert!(res.iterations <= 1);
}

#[test]
fn classic_converges_on_training_scenes() {
    for seed in 0..10 {
        let problem = scene(10, 10, 0.1, seed);
        let res = solve(&problem, &mut ClassicPolicy::new(ClassicMode::Standard), &SolveOptions::default());
        assert_eq!(res.outcome, Outcome::Converged, "seed {seed}");
        assert!(res.final_error < res.initial_error);
        assert_eq!(res.iterations, res.records.len());
        let trace = res.error_trace();
        let (a, b) = (trace[trace.len() - 2], trace[trace.len() - 1]);
        assert!((a - b).abs() / a < 1e-6);
    }
}

#[test]
fn huge_lambda_hits_iteration_cap() {
    let problem = scene(10, 10, 0.1, 0);
    let res = solve(&problem, &mut FixedPolicy::new(1e8), &SolveOptions { clock: Clock::Unit, ..Default::default() });
    assert_eq!(res.outcome, Outcome::IterationCap);
    assert_eq!(res.iterations, 100);
    assert_eq!(res.total_time_s, 100.0);
}

#[test]
fn error_is_gauge_invariant() {
    let problem = scene(8, 12, 0.2, 6);
    let params = ParamVector::from_problem(&problem);
    let e = estimation_error(&residuals(&problem, &params).unwrap(), 1.0);
    let q = Rotation3::new(Vector3::new(0.4, -0.3, 0.9));
    let shift = Vector3::new(1.5, -2.0, 0.7);
    let scale = 1.7;
    let mut moved = params.clone();
    for c in moved.cameras.iter_mut() {
        let r = Rotation3::new(Vector3::new(c[0], c[1], c[2]));
        let t = Vector3::new(c[3], c[4], c[5]);
        let r2 = r * q.inverse();
        let t2 = scale * t - r2 * shift;
        let w2 = r2.scaled_axis();
        c[0] = w2.x;
        c[1] = w2.y;
        c[2] = w2.z;
        c[3] = t2.x;
        c[4] = t2.y;
        c[5] = t2.z;
    }
    for p in moved.points.iter_mut() {
        *p = q * (*p * scale) + shift;
    }
    let e2 = estimation_error(&residuals(&problem, &moved).unwrap(), 1.0);
    assert!((e - e2).abs() <= 1e-8 * e);
}

#[test]
fn bal_round_trip_then_solve() {
    let problem = scene(6, 15, 0.1, 8);
    let mut buf = Vec::new();
    serialize_bal(&problem, &mut buf).unwrap();
    let parsed = parse_bal(buf.as_slice()).unwrap();
    let a = solve(&problem, &mut ClassicPolicy::default(), &SolveOptions { clock: Clock::Unit, ..Default::default() });
    let b = solve(&parsed, &mut ClassicPolicy::default(), &SolveOptions { clock: Clock::Unit, ..Default::default() });
    assert_eq!(a.outcome, Outcome::Converged);
    assert_eq!(a.iterations, b.iterations);
    assert!((a.final_error - b.final_error).abs() <= 1e-9 * a.final_error.max(1.0));
}
