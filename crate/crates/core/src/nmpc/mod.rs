//! Onboard NMPC for successive reference-pose tracking: a multiple-shooting
//! discretization of the prediction model, solved by Gauss–Newton SQP.

pub mod qp;
mod shooting;
mod sqp;

pub use shooting::{shoot, shoot_with_sensitivity, Sensitivity};
pub use sqp::{evaluate_residuals, solve, ResidualSummary};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose2D;
use crate::spline_ref::{fit_spline, SplineCoeffs, SplineError};
use crate::vehicle_models::{
    idx, ControlInput, InputVec, StateVec, VehicleParams, VehicleState, MAX_STEER, MAX_STEER_RATE,
};

pub const HORIZON_S: f64 = 1.0;
pub const INTERVALS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmpcError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("mu_cons {0} outside (0, 1.2]")]
    InvalidAdhesion(f64),
    #[error("reference speed {0} must be finite and non-negative")]
    InvalidSpeed(f64),
    #[error("solver diverged; no input available")]
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub steer_rate: f64,
    pub accel: f64,
    pub speed: f64,
    pub terminal_lateral: f64,
    pub terminal_heading: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            steer_rate: 1.0,
            accel: 0.1,
            speed: 1.0,
            terminal_lateral: 50.0,
            terminal_heading: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcpBounds {
    pub steer_rate_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_max: f64,
    pub speed_min: f64,
}

impl OcpBounds {
    /// Acceleration limits shrink with the assumed adhesion.
    pub fn for_adhesion(mu_cons: f64) -> Self {
        OcpBounds {
            steer_rate_max: MAX_STEER_RATE,
            accel_min: -4.0 * mu_cons,
            accel_max: mu_cons,
            steer_max: MAX_STEER,
            speed_min: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpProblem {
    /// Initial state in the vehicle frame (pose components zero).
    pub x0: StateVec,
    pub ref_pose: Pose2D,
    /// `None` only for the resting case that needs no solve.
    pub spline: Option<SplineCoeffs>,
    pub v_ref: f64,
    pub mu_cons: f64,
    pub horizon: f64,
    pub intervals: usize,
    pub weights: CostWeights,
    pub bounds: OcpBounds,
    pub params: VehicleParams,
    /// Global pose of the vehicle frame, used to carry warm starts across
    /// frame resets.
    pub frame: Pose2D,
}

impl OcpProblem {
    pub fn step(&self) -> f64 {
        self.horizon / self.intervals as f64
    }

    pub fn with_frame(mut self, frame: Pose2D) -> Self {
        self.frame = frame;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Diverged,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub inputs: Vec<InputVec>,
    pub states: Vec<StateVec>,
    pub objective: f64,
    pub iterations: usize,
    pub solve_ms: f64,
    pub status: SolveStatus,
    /// Largest excess over any bound or the friction limit.
    pub max_violation: f64,
    /// Largest friction utilization over nodes and axles.
    pub max_friction: f64,
    pub max_defect: f64,
    pub kkt_residual: f64,
    /// Merit before and after each accepted step.
    pub merit_history: Vec<(f64, f64)>,
    pub frame: Pose2D,
}

impl OcpSolution {
    pub fn input(&self, i: usize) -> ControlInput {
        ControlInput::from_vector(&self.inputs[i])
    }

    pub fn state(&self, i: usize) -> VehicleState {
        VehicleState::from_vector(&self.states[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Bound on the Gauss–Newton stationarity residual.
    pub kkt_tol: f64,
    /// Bound on the shooting defects.
    pub defect_tol: f64,
    /// Initial weight of the friction-ellipse penalty.
    pub friction_weight: f64,
    pub friction_weight_max: f64,
    pub friction_weight_growth: f64,
    /// Friction excess accepted before the weight is raised.
    pub friction_tol: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub min_step: f64,
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 30,
            kkt_tol: 1e-4,
            defect_tol: 1e-7,
            friction_weight: 1e3,
            friction_weight_max: 1e7,
            friction_weight_growth: 10.0,
            friction_tol: 1e-4,
            armijo: 1e-4,
            backtrack: 0.5,
            min_step: 1e-6,
            warm_start: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> bool {
        self.max_iter > 0
            && self.kkt_tol > 0.0
            && self.defect_tol > 0.0
            && self.friction_weight > 0.0
            && self.friction_weight_max >= self.friction_weight
            && self.friction_weight_growth > 1.0
            && self.friction_tol > 0.0
            && self.armijo > 0.0
            && self.armijo < 0.5
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.min_step > 0.0
    }
}

/// Moves state and reference into the frame attached to the vehicle pose.
pub fn frame_reset(global_state: &VehicleState, global_ref: &Pose2D) -> (VehicleState, Pose2D) {
    let frame = Pose2D::new(global_state.x, global_state.y, global_state.psi);
    let mut local = *global_state;
    local.x = 0.0;
    local.y = 0.0;
    local.psi = 0.0;
    (local, frame.to_local(global_ref))
}

pub fn build_ocp(
    state: &VehicleState,
    ref_pose: &Pose2D,
    v_ref: f64,
    mu_cons: f64,
    params: &VehicleParams,
) -> Result<OcpProblem, NmpcError> {
    if !(mu_cons > 0.0 && mu_cons <= 1.2) {
        return Err(NmpcError::InvalidAdhesion(mu_cons));
    }
    if !(v_ref.is_finite() && v_ref >= 0.0) {
        return Err(NmpcError::InvalidSpeed(v_ref));
    }
    let at_rest = v_ref == 0.0 && ref_pose.x == 0.0 && ref_pose.y == 0.0 && ref_pose.psi == 0.0;
    let spline = if at_rest {
        None
    } else {
        Some(fit_spline(ref_pose, state.beta)?)
    };
    let mut x0 = state.to_vector();
    x0[idx::X] = 0.0;
    x0[idx::Y] = 0.0;
    x0[idx::PSI] = 0.0;
    Ok(OcpProblem {
        x0,
        ref_pose: *ref_pose,
        spline,
        v_ref,
        mu_cons,
        horizon: HORIZON_S,
        intervals: INTERVALS,
        weights: CostWeights::default(),
        bounds: OcpBounds::for_adhesion(mu_cons),
        params: *params,
        frame: Pose2D::default(),
    })
}

pub fn first_input(solution: &OcpSolution) -> Result<ControlInput, NmpcError> {
    match solution.status {
        SolveStatus::Diverged => Err(NmpcError::Diverged),
        _ => Ok(solution.input(0)),
    }
}

/// Initial guess from a previous solution: re-expressed in the new frame,
/// shifted by one interval with the last input duplicated, and pinned to the
/// new initial state.
pub fn shift_warm_start(prev: &OcpSolution, problem: &OcpProblem) -> (Vec<StateVec>, Vec<InputVec>) {
    let n = problem.intervals;
    let h = problem.step();
    let relocate = |x: &StateVec| -> StateVec {
        let global = prev.frame.to_global(&Pose2D {
            x: x[idx::X],
            y: x[idx::Y],
            psi: x[idx::PSI],
        });
        let local = problem.frame.to_local(&global);
        let mut out = *x;
        out[idx::X] = local.x;
        out[idx::Y] = local.y;
        out[idx::PSI] = local.psi;
        out
    };
    let mut states: Vec<StateVec> = prev.states[1..].iter().map(relocate).collect();
    let mut inputs: Vec<InputVec> = prev.inputs[1..].to_vec();
    let last_u = *prev.inputs.last().expect("non-empty horizon");
    inputs.push(last_u);
    let last_x = *states.last().expect("non-empty horizon");
    states.push(shoot(&last_x, &last_u, &problem.params, problem.mu_cons, h));
    states[0] = problem.x0;
    debug_assert_eq!(states.len(), n + 1);
    (states, inputs)
}
