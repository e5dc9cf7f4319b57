//! Single-track vehicle models.
//!
//! [`prediction_dynamics`] is the nine-state model the NMPC and the Smith
//! predictor use. [`plant_dynamics`] is the simulated vehicle: the same
//! structure with saturating tires, adhesion scaling, crosswind and
//! rolling/aerodynamic losses on the speed state.

mod integrator;
mod params;
mod plant;
mod prediction;

pub use integrator::rk4_step;
pub use params::{VehicleParams, GRAVITY};
pub use plant::{
    crosswind_lateral_force, plant_dynamics, resistance_feedforward, saturate_lateral, step_plant,
    Disturbance, PlantConfig, PlantState,
};
pub use prediction::{
    friction_utilization, longitudinal_forces, prediction_dynamics, prediction_jacobian,
    slip_angles, stiffness_reduction, FrictionUtilization, InputJacobian, StateJacobian,
    StiffnessReduction, BRANCH_BLEND,
};

use nalgebra::SVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type StateVec = SVector<f64, 9>;
pub type InputVec = SVector<f64, 2>;

/// Lower guard applied to the speed wherever it divides.
pub const MIN_SPEED: f64 = 0.01;
pub const MAX_STEER: f64 = 25.0 * std::f64::consts::PI / 180.0;
pub const MAX_STEER_RATE: f64 = 10.0 * std::f64::consts::PI / 180.0;

/// Positions of the state components in [`StateVec`].
pub mod idx {
    pub const BETA: usize = 0;
    pub const YAW_RATE: usize = 1;
    pub const PSI: usize = 2;
    pub const FY_F: usize = 3;
    pub const FY_R: usize = 4;
    pub const X: usize = 5;
    pub const Y: usize = 6;
    pub const DELTA: usize = 7;
    pub const SPEED: usize = 8;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid vehicle parameter `{0}`")]
    InvalidParameter(&'static str),
    #[error("parameter file: {0}")]
    ParamFile(String),
    #[error("non-finite derivative in component {component} (stage {stage})")]
    NonFinite { component: usize, stage: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Side-slip angle (rad).
    pub beta: f64,
    /// Yaw rate (rad/s).
    pub yaw_rate: f64,
    /// Heading (rad).
    pub psi: f64,
    /// Front axle lateral force (N).
    pub fy_front: f64,
    /// Rear axle lateral force (N).
    pub fy_rear: f64,
    pub x: f64,
    pub y: f64,
    /// Steering angle (rad).
    pub delta: f64,
    /// Longitudinal speed (m/s).
    pub speed: f64,
}

impl VehicleState {
    pub fn to_vector(&self) -> StateVec {
        StateVec::from([
            self.beta,
            self.yaw_rate,
            self.psi,
            self.fy_front,
            self.fy_rear,
            self.x,
            self.y,
            self.delta,
            self.speed,
        ])
    }

    pub fn from_vector(v: &StateVec) -> Self {
        VehicleState {
            beta: v[idx::BETA],
            yaw_rate: v[idx::YAW_RATE],
            psi: v[idx::PSI],
            fy_front: v[idx::FY_F],
            fy_rear: v[idx::FY_R],
            x: v[idx::X],
            y: v[idx::Y],
            delta: v[idx::DELTA],
            speed: v[idx::SPEED],
        }
    }
}

/// Steering rate (rad/s) and longitudinal acceleration (m/s²).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub steer_rate: f64,
    pub accel: f64,
}

impl ControlInput {
    pub fn new(steer_rate: f64, accel: f64) -> Self {
        ControlInput { steer_rate, accel }
    }

    pub fn to_vector(&self) -> InputVec {
        InputVec::new(self.steer_rate, self.accel)
    }

    pub fn from_vector(v: &InputVec) -> Self {
        ControlInput::new(v[0], v[1])
    }
}
