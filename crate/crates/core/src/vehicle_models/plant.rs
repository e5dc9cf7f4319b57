//! Simulated vehicle.
//!
//! Same single-track structure as the prediction model, plus:
//! - an arctangent tire law whose lateral force approaches
//!   `μ_road·ζ·m_axle·g`; the cornering stiffness at zero slip does not
//!   depend on adhesion, as in brush tire models;
//! - a crosswind side force applied at the CG;
//! - rolling and aerodynamic resistance acting on the speed state, so the
//!   acceleration input is a drive/brake demand rather than the net
//!   acceleration.
//!
//! Without wind the kinematic and yaw rows coincide with
//! [`prediction_dynamics`](super::prediction_dynamics); the tire force
//! targets agree to first order in the slip angle.

use serde::{Deserialize, Serialize};

/// Floor on the speed dividing the side-slip row. Side slip is ill-defined
/// near standstill; the floor keeps it bounded when the vehicle brakes to a
/// stop and leaves the dynamics above walking pace untouched.
const SIDE_SLIP_SPEED_FLOOR: f64 = 1.0;

use super::params::{VehicleParams, GRAVITY};
use super::prediction::{longitudinal_forces, slip_angles, stiffness_reduction};
use super::{idx, rk4_step, InputVec, ModelError, StateVec, VehicleState, MAX_STEER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    /// Air density (kg/m³).
    pub air_density: f64,
    /// Side-force coefficient times lateral area (m²).
    pub side_area: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            air_density: 1.225,
            side_area: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    /// Road adhesion coefficient.
    pub mu_road: f64,
    /// Crosswind speed (m/s).
    pub wind_speed: f64,
    /// Direction the wind blows towards, global frame (rad).
    pub wind_bearing: f64,
}

impl Default for Disturbance {
    fn default() -> Self {
        Disturbance {
            mu_road: 1.0,
            wind_speed: 0.0,
            wind_bearing: 0.0,
        }
    }
}

impl Disturbance {
    pub fn is_valid(&self) -> bool {
        self.mu_road > 0.0 && self.mu_road <= 1.2 && self.wind_speed >= 0.0
    }
}

/// State of the simulated vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub x: StateVec,
}

impl PlantState {
    pub fn new(vehicle: VehicleState) -> Self {
        PlantState {
            x: vehicle.to_vector(),
        }
    }

    pub fn vehicle(&self) -> VehicleState {
        VehicleState::from_vector(&self.x)
    }
}

/// Arctangent tire law: slope 1 at the origin, approaching `±cap`.
pub fn saturate_lateral(force: f64, cap: f64) -> f64 {
    if cap <= 0.0 {
        return 0.0;
    }
    let k = 2.0 * cap / std::f64::consts::PI;
    k * (force / k).atan()
}

/// Lateral component of the crosswind force in the vehicle frame.
pub fn crosswind_lateral_force(psi: f64, d: &Disturbance, cfg: &PlantConfig) -> f64 {
    let force = 0.5 * cfg.air_density * cfg.side_area * d.wind_speed * d.wind_speed;
    force * (d.wind_bearing - psi).sin()
}

pub fn plant_dynamics(
    state: &PlantState,
    u: &InputVec,
    p: &VehicleParams,
    d: &Disturbance,
    cfg: &PlantConfig,
) -> StateVec {
    let x = &state.x;
    let beta = x[idx::BETA];
    let r = x[idx::YAW_RATE];
    let psi = x[idx::PSI];
    let fyf = x[idx::FY_F];
    let fyr = x[idx::FY_R];
    let delta = x[idx::DELTA];
    let v = x[idx::SPEED];
    let a = u[1];
    let vb = v.max(SIDE_SLIP_SPEED_FLOOR);

    let (fxf, fxr) = longitudinal_forces(v, a, p);
    let (af, ar) = slip_angles(x, p);
    let tire = |fx: f64, mass: f64, c: f64, alpha: f64| {
        let zeta = stiffness_reduction(fx, mass, d.mu_road).zeta;
        let cap = d.mu_road * zeta * mass * GRAVITY;
        saturate_lateral(zeta * c * alpha, cap)
    };
    let target_f = tire(fxf, p.front_axle_mass(), p.cornering_front, af);
    let target_r = tire(fxr, p.rear_axle_mass(), p.cornering_rear, ar);

    let wind = crosswind_lateral_force(psi, d, cfg);
    let (sd, cd) = delta.sin_cos();
    let side = fyf * cd + fxf * sd;

    let resist = p.rolling_resistance * GRAVITY + p.drag_coeff * v * v / p.mass;
    let mut speed_rate = a - resist;
    if v <= 0.0 && speed_rate < 0.0 {
        speed_rate = 0.0;
    }

    StateVec::from([
        (side + fyr + wind) / (p.mass * vb) - beta * speed_rate / vb - r,
        (side * p.l_front - fyr * p.l_rear) / p.yaw_inertia,
        r,
        v / p.relaxation_length * (target_f - fyf),
        v / p.relaxation_length * (target_r - fyr),
        v * (psi + beta).cos(),
        v * (psi + beta).sin(),
        u[0],
        speed_rate,
    ])
}

/// Advances the plant by `dt` with RK4, keeping the speed non-negative and
/// the steering angle inside its mechanical limit.
pub fn step_plant(
    state: &PlantState,
    u: &InputVec,
    p: &VehicleParams,
    d: &Disturbance,
    cfg: &PlantConfig,
    dt: f64,
) -> Result<PlantState, ModelError> {
    let mut x = rk4_step(|x, u| plant_dynamics(&PlantState { x: *x }, u, p, d, cfg), &state.x, u, dt)?;
    x[idx::SPEED] = x[idx::SPEED].max(0.0);
    x[idx::DELTA] = x[idx::DELTA].clamp(-MAX_STEER, MAX_STEER);
    Ok(PlantState { x })
}

/// Acceleration demand that cancels the plant's rolling and aerodynamic
/// resistance at speed `v`.
pub fn resistance_feedforward(v: f64, p: &VehicleParams) -> f64 {
    p.rolling_resistance * GRAVITY + p.drag_coeff * v * v / p.mass
}
