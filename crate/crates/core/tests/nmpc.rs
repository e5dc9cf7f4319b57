use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::geometry::Pose2D;
use teleop_core::nmpc::{
    build_ocp, evaluate_residuals, first_input, frame_reset, shoot, solve, OcpProblem, SolveStatus,
    SolverConfig,
};
use teleop_core::vehicle_models::{
    friction_utilization, idx, prediction_dynamics, rk4_step, InputVec, VehicleParams, VehicleState, MAX_STEER,
    MAX_STEER_RATE,
};

fn problem(state: VehicleState, target: Pose2D, v_ref: f64, mu: f64) -> OcpProblem {
    build_ocp(&state, &target, v_ref, mu, &VehicleParams::default()).unwrap()
}

/// Random initial state whose own slip stays inside the friction limit, and
/// a target 1 to 1.6 s ahead.
fn random_problem(rng: &mut ChaCha8Rng) -> OcpProblem {
    let p = VehicleParams::default();
    let mu = if rng.random_bool(0.3) { 0.25 } else { 0.9 };
    let v = rng.random_range(2.0..10.0);
    let state = loop {
        let s = VehicleState {
            beta: rng.random_range(-0.01..0.01),
            yaw_rate: rng.random_range(-0.1..0.1),
            delta: rng.random_range(-0.1..0.1),
            speed: v,
            ..Default::default()
        };
        let fu = friction_utilization(&s.to_vector(), &InputVec::zeros(), &p, mu);
        if fu.value[0].max(fu.value[1]) < 0.8 * mu {
            break s;
        }
    };
    let dist = v * rng.random_range(1.0..1.6);
    let target = Pose2D::new(dist, rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3));
    problem(state, target, v, mu)
}

#[test]
fn random_converged_problems_respect_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let cfg = SolverConfig::default();
    let mut converged = 0;
    let mut attempts = 0;
    while converged < 50 {
        attempts += 1;
        assert!(attempts < 200, "too few problems converge");
        let ocp = random_problem(&mut rng);
        let sol = solve(&ocp, None, &cfg);
        if sol.status != SolveStatus::Converged {
            continue;
        }
        converged += 1;
        let tol = 1e-6;
        for (i, u) in sol.inputs.iter().enumerate() {
            assert!(u[0].abs() <= MAX_STEER_RATE + tol, "interval {i}");
            assert!(u[1] >= ocp.bounds.accel_min - tol && u[1] <= ocp.bounds.accel_max + tol);
        }
        for x in &sol.states {
            assert!(x[idx::DELTA].abs() <= MAX_STEER + tol);
            assert!(x[idx::SPEED] >= -tol);
        }
        assert!(sol.max_friction <= ocp.mu_cons + 1e-3, "friction {}", sol.max_friction);
        for i in 0..ocp.intervals {
            let next = shoot(&sol.states[i], &sol.inputs[i], &ocp.params, ocp.mu_cons, ocp.step());
            assert!((next - sol.states[i + 1]).amax() < 1e-6);
        }
        for (before, after) in &sol.merit_history {
            assert!(after <= before);
        }
    }
}

#[test]
fn equilibrium_problem_returns_zero_input() {
    let state = VehicleState { speed: 8.0, ..Default::default() };
    let sol = solve(&problem(state, Pose2D::new(8.0, 0.0, 0.0), 8.0, 0.9), None, &SolverConfig::default());
    let u = first_input(&sol).unwrap();
    assert!(u.steer_rate.abs() < 1e-3 && u.accel.abs() < 1e-3);
    assert!(sol.inputs.iter().all(|u| u.amax() < 1e-3));
}

#[test]
fn unreachable_lateral_target_slows_the_vehicle() {
    let v = 8.0;
    let state = VehicleState { speed: v, ..Default::default() };
    let sol = solve(&problem(state, Pose2D::new(v, 3.0, 0.6), v, 0.9), None, &SolverConfig::default());
    assert_ne!(sol.status, SolveStatus::Diverged);
    assert!(sol.states[50][idx::SPEED] < v, "terminal speed {}", sol.states[50][idx::SPEED]);
    // The steering rate saturates at the start of the horizon.
    let u = first_input(&sol).unwrap();
    assert!((u.steer_rate - MAX_STEER_RATE).abs() < 1e-6, "{}", u.steer_rate);
}

#[test]
fn identical_inputs_give_identical_solutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ocp = random_problem(&mut rng);
    let a = solve(&ocp, None, &SolverConfig::default());
    let b = solve(&ocp, None, &SolverConfig::default());
    assert_eq!(a.inputs, b.inputs);
    assert_eq!(a.states, b.states);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn receding_horizon_warm_start_is_cheap() {
    let p = VehicleParams::default();
    let cfg = SolverConfig::default();
    let v = 6.0;
    let mut global = VehicleState { speed: v, ..Default::default() };
    // A gentle left curve of radius 40 m sampled ahead of the vehicle.
    let target_at = |s: f64| {
        let r = 40.0;
        Pose2D::new(r * (s / r).sin(), r * (1.0 - (s / r).cos()), s / r)
    };
    let mut prev = None;
    let mut s_target = 1.5 * v;
    for step in 0..100 {
        let (local, ref_local) = frame_reset(&global, &target_at(s_target));
        let frame = Pose2D::new(global.x, global.y, global.psi);
        let ocp = build_ocp(&local, &ref_local, v, 0.9, &p).unwrap().with_frame(frame);
        let sol = solve(&ocp, prev.as_ref(), &cfg);
        assert_eq!(sol.status, SolveStatus::Converged, "step {step}");
        if step > 5 {
            assert!(sol.iterations <= 5, "step {step}: {} iterations", sol.iterations);
        }
        let u = first_input(&sol).unwrap().to_vector();
        let x = rk4_step(
            |x, u: &InputVec| prediction_dynamics(x, u, &p, 0.9),
            &global.to_vector(),
            &u,
            0.02,
        )
        .unwrap();
        global = VehicleState::from_vector(&x);
        s_target += v * 0.02;
        prev = Some(sol);
    }
}

#[test]
fn residual_summary_reports_defects() {
    let state = VehicleState { speed: 5.0, ..Default::default() };
    let ocp = problem(state, Pose2D::new(5.0, 0.5, 0.1), 5.0, 0.9);
    let sol = solve(&ocp, None, &SolverConfig::default());
    let mut states = sol.states.clone();
    states[10][idx::Y] += 0.25;
    let s = evaluate_residuals(&ocp, &states, &sol.inputs, 1e3);
    assert!(s.max_defect >= 0.25 - 1e-9);
}
