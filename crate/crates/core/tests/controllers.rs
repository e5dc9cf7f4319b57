use teleop_core::controllers::{pi_cruise, CruiseConfig, CruiseState};
use teleop_core::vehicle_models::{idx, step_plant, Disturbance, InputVec, PlantConfig, PlantState, VehicleParams, VehicleState};

#[test]
fn cruise_step_settles_without_windup_overshoot() {
    let p = VehicleParams::default();
    let cfg = CruiseConfig::for_vehicle(&p);
    let mut st = CruiseState::default();
    let v_ref = 20.0 / 3.6;
    let dt = 0.01;
    let mut plant = PlantState::new(VehicleState::default());
    let mut speeds = Vec::new();
    for _ in 0..4000 {
        let v = plant.x[idx::SPEED];
        let a = pi_cruise(v_ref, v, dt, &mut st, &cfg, &p);
        plant = step_plant(&plant, &InputVec::new(0.0, a), &p, &Disturbance::default(), &PlantConfig::default(), dt)
            .unwrap();
        speeds.push(plant.x[idx::SPEED]);
    }
    let peak = speeds.iter().copied().fold(0.0, f64::max);
    assert!(peak < 1.1 * v_ref, "overshoot to {peak}");
    let tol = 0.2 / 3.6;
    let settled = speeds.iter().rposition(|v| (v - v_ref).abs() > tol).map_or(0, |k| k + 1);
    assert!(settled as f64 * dt < 20.0, "settles after {} s", settled as f64 * dt);
}
