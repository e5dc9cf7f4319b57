use teleop_core::vehicle_models::{idx, prediction_dynamics, rk4_step, InputVec, StateVec, VehicleParams, VehicleState};

const V: f64 = 20.0 / 3.6;

fn cornering_start(delta: f64) -> StateVec {
    VehicleState {
        delta,
        speed: V,
        ..Default::default()
    }
    .to_vector()
}

fn integrate(x0: StateVec, dt: f64, duration: f64) -> StateVec {
    let p = VehicleParams::default();
    let steps = (duration / dt).round() as usize;
    let mut x = x0;
    for _ in 0..steps {
        x = rk4_step(|x, u| prediction_dynamics(x, u, &p, 1.0), &x, &InputVec::zeros(), dt).unwrap();
    }
    x
}

#[test]
fn steady_state_yaw_gain_matches_linear_theory() {
    let p = VehicleParams::default();
    let delta = 2f64.to_radians();
    let x = integrate(cornering_start(delta), 0.005, 20.0);

    // Linear single-track gain with understeer gradient K_us.
    let l = p.l_front + p.l_rear;
    let k_us = p.mass / l * (p.l_rear / p.cornering_front - p.l_front / p.cornering_rear);
    let expected = V * delta / (l + k_us * V * V);

    let rel = (x[idx::YAW_RATE] - expected).abs() / expected;
    assert!(rel < 0.02, "yaw rate {} vs {expected} ({:.2}%)", x[idx::YAW_RATE], rel * 100.0);
}

#[test]
fn rk4_error_shrinks_at_fourth_order() {
    let x0 = cornering_start(2f64.to_radians());
    let reference = integrate(x0, 0.01 / 32.0, 2.0);
    let err = |dt: f64| {
        let x = integrate(x0, dt, 2.0);
        (x[idx::YAW_RATE] - reference[idx::YAW_RATE]).abs() + (x[idx::Y] - reference[idx::Y]).abs()
    };
    let ratio = err(0.02) / err(0.01);
    assert!((12.0..20.0).contains(&ratio), "error ratio {ratio}");
}
