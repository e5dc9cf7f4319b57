//! Control-station and onboard controllers: Smith predictor, Stanley
//! steering, SRPT look-ahead selection and PI cruise control.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, Pose2D};
use crate::trajectory::Trajectory;
use crate::vehicle_models::{
    resistance_feedforward, StateVec, VehicleParams, MAX_STEER, MIN_SPEED,
};

/// Time history of the local model output `X′`, sampled on the station
/// clock.
#[derive(Debug, Clone)]
pub struct PredictorBuffer {
    samples: VecDeque<(f64, StateVec)>,
    capacity: usize,
}

impl PredictorBuffer {
    pub fn new(capacity: usize) -> Self {
        PredictorBuffer {
            samples: VecDeque::with_capacity(capacity),
            capacity: capacity.max(2),
        }
    }

    /// Capacity covering `span` seconds at step `dt`, with headroom.
    pub fn for_span(span: f64, dt: f64) -> Self {
        Self::new((span / dt).ceil() as usize + 2)
    }

    /// Appends a sample; times must increase strictly.
    pub fn push(&mut self, t: f64, x: StateVec) {
        if let Some(&(last, _)) = self.samples.back() {
            assert!(t > last, "predictor samples must be time-ordered ({t} after {last})");
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((t, x));
    }

    pub fn latest(&self) -> Option<(f64, StateVec)> {
        self.samples.back().copied()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Linear interpolation; `None` outside the stored span.
    pub fn at(&self, t: f64) -> Option<StateVec> {
        let (t0, _) = *self.samples.front()?;
        let (t1, x1) = *self.samples.back()?;
        if t < t0 - 1e-9 || t > t1 + 1e-9 {
            return None;
        }
        let i = self.samples.partition_point(|(ts, _)| *ts <= t);
        if i == 0 {
            return Some(self.samples[0].1);
        }
        if i == self.samples.len() {
            return Some(x1);
        }
        let (ta, xa) = self.samples[i - 1];
        let (tb, xb) = self.samples[i];
        let w = (t - ta) / (tb - ta);
        Some(xa + (xb - xa) * w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmithOutput {
    pub state: StateVec,
    /// The history did not reach back far enough; `state` is the raw
    /// measurement.
    pub warm_up: bool,
}

/// `X_p(t) = X′(t) − X′(t − τ₁ − τ₂) + X_meas`.
pub fn smith_feedback(
    buffer: &PredictorBuffer,
    delayed_measurement: &StateVec,
    t: f64,
    tau1: f64,
    tau2: f64,
) -> SmithOutput {
    match (buffer.at(t), buffer.at(t - tau1 - tau2)) {
        (Some(now), Some(then)) => SmithOutput {
            state: now - then + delayed_measurement,
            warm_up: false,
        },
        _ => SmithOutput {
            state: *delayed_measurement,
            warm_up: true,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StanleyConfig {
    pub gain: f64,
    pub max_steer: f64,
}

impl Default for StanleyConfig {
    fn default() -> Self {
        StanleyConfig {
            gain: 0.7,
            max_steer: MAX_STEER,
        }
    }
}

/// `δ = sat(ψ_rel + atan(k·e / V))`. `e` is positive when the path lies to
/// the left of the front axle.
pub fn stanley_steer(psi_rel: f64, e: f64, v: f64, config: &StanleyConfig) -> f64 {
    let raw = psi_rel + (config.gain * e / v.max(MIN_SPEED)).atan();
    raw.clamp(-config.max_steer, config.max_steer)
}

/// Heading error and front-axle cross-track error of a pose against the
/// path, in the sign convention of [`stanley_steer`].
pub fn stanley_errors(pose: &Pose2D, l_front: f64, path: &Trajectory) -> (f64, f64) {
    let (s, c) = pose.psi.sin_cos();
    let fx = pose.x + l_front * c;
    let fy = pose.y + l_front * s;
    let proj = path.project(fx, fy);
    let ref_psi = path.pose_at(proj.s).psi;
    (normalize_angle(ref_psi - pose.psi), -proj.lateral)
}

/// Path pose `V·(τ₂ + τ₁ + T_h)` ahead of the projection of the delayed
/// pose, clamped to the end of the path.
pub fn lookahead_select(
    path: &Trajectory,
    delayed_pose: &Pose2D,
    v: f64,
    tau2: f64,
    tau1: f64,
    horizon: f64,
) -> Pose2D {
    let proj = path.project(delayed_pose.x, delayed_pose.y);
    path.pose_at(proj.s + v.max(0.0) * (tau2 + tau1 + horizon))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CruiseConfig {
    /// Proportional gain (1/s).
    pub kp: f64,
    /// Integral gain (1/s²).
    pub ki: f64,
    /// Back-calculation gain on the integral state (s), `1/(K_i·T_t)`.
    pub anti_windup: f64,
    pub accel_min: f64,
    pub accel_max: f64,
}

impl CruiseConfig {
    /// Gains given as force per speed error over the vehicle mass, with
    /// tracking time constant `T_t = 1/K_p`.
    pub fn for_vehicle(p: &VehicleParams) -> Self {
        let kp = 800.0 / p.mass;
        let ki = 120.0 / p.mass;
        CruiseConfig {
            kp,
            ki,
            anti_windup: kp / ki,
            accel_min: -4.0,
            accel_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CruiseState {
    pub integral: f64,
}

/// PI speed control with resistance feed-forward and back-calculation
/// anti-windup. Returns the saturated acceleration command.
pub fn pi_cruise(
    v_ref: f64,
    v: f64,
    dt: f64,
    state: &mut CruiseState,
    config: &CruiseConfig,
    params: &VehicleParams,
) -> f64 {
    let err = v_ref - v;
    let raw = config.kp * err + config.ki * state.integral + resistance_feedforward(v_ref, params);
    let sat = raw.clamp(config.accel_min, config.accel_max);
    state.integral += dt * (err + config.anti_windup * (sat - raw));
    sat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle_models::idx;

    #[test]
    fn stanley_cases() {
        let c = StanleyConfig::default();
        assert_eq!(stanley_steer(0.0, 0.0, 5.0, &c), 0.0);
        let d = stanley_steer(0.1, 0.5, 5.0, &c);
        assert!((d - (0.1 + 0.07f64.atan())).abs() < 1e-15);
        assert!((d - 0.1699).abs() < 1e-4);
        assert_eq!(stanley_steer(0.5, 10.0, 1.0, &c), MAX_STEER);
        assert_eq!(stanley_steer(-0.5, -10.0, 1.0, &c), -MAX_STEER);
        assert!(stanley_steer(0.0, 1.0, 0.0, &c).is_finite());
    }

    #[test]
    fn zero_delay_returns_measurement() {
        let mut b = PredictorBuffer::new(10);
        for k in 0..5 {
            let mut x = StateVec::zeros();
            x[idx::X] = k as f64;
            b.push(k as f64 * 0.01, x);
        }
        let mut meas = StateVec::zeros();
        meas[idx::Y] = 0.7;
        let out = smith_feedback(&b, &meas, 0.04, 0.0, 0.0);
        assert!(!out.warm_up);
        assert_eq!(out.state, meas);
    }

    #[test]
    fn underrun_flags_warm_up() {
        let mut b = PredictorBuffer::new(10);
        b.push(1.0, StateVec::zeros());
        b.push(1.01, StateVec::zeros());
        let meas = StateVec::from_element(1.0);
        let out = smith_feedback(&b, &meas, 1.01, 0.06, 0.2);
        assert!(out.warm_up);
        assert_eq!(out.state, meas);
    }

    #[test]
    fn buffer_interpolates_and_drops_oldest() {
        let mut b = PredictorBuffer::new(3);
        for k in 0..4 {
            b.push(k as f64, StateVec::from_element(k as f64));
        }
        assert_eq!(b.len(), 3);
        assert!(b.at(0.5).is_none());
        assert_eq!(b.at(2.25).unwrap()[0], 2.25);
    }

    fn straight() -> Trajectory {
        let poses: Vec<Pose2D> = (0..=400).map(|i| Pose2D::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        Trajectory::from_poses(&poses).unwrap()
    }

    #[test]
    fn lookahead_examples() {
        let path = straight();
        let pose = Pose2D::new(10.0, 0.0, 0.0);
        let p0 = lookahead_select(&path, &pose, 0.0, 0.2, 0.06, 1.0);
        assert!((p0.x - 10.0).abs() < 1e-12);
        let v = 20.0 / 3.6;
        let p = lookahead_select(&path, &pose, v, 0.2, 0.06, 1.0);
        assert!((p.x - (10.0 + v * 1.26)).abs() < 1e-9);
        assert!((p.x - 17.0).abs() < 0.01 && p.psi == 0.0 && p.y == 0.0);
        let end = lookahead_select(&path, &Pose2D::new(39.0, 0.0, 0.0), v, 0.2, 0.06, 1.0);
        assert_eq!(end, path.end());
    }

    #[test]
    fn cruise_hold_is_feedforward() {
        let p = VehicleParams::default();
        let c = CruiseConfig::for_vehicle(&p);
        let mut s = CruiseState::default();
        let a = pi_cruise(5.0, 5.0, 0.01, &mut s, &c, &p);
        assert_eq!(a, resistance_feedforward(5.0, &p));
    }

    #[test]
    fn saturated_cruise_keeps_integrator_bounded() {
        let p = VehicleParams::default();
        let c = CruiseConfig::for_vehicle(&p);
        let mut s = CruiseState::default();
        // With the output pinned, back-calculation turns the integrator into
        // a stable first-order lag towards this value.
        let err = 30.0;
        let raw_without_integral = c.kp * err + resistance_feedforward(30.0, &p);
        let settle = (err + c.anti_windup * (c.accel_max - raw_without_integral)) / (c.anti_windup * c.ki);
        for _ in 0..500 {
            let a = pi_cruise(30.0, 0.0, 0.01, &mut s, &c, &p);
            assert_eq!(a, c.accel_max);
            assert!(s.integral.abs() <= settle.abs() + 1e-9, "{}", s.integral);
        }
        assert!((s.integral - settle).abs() < 0.05 * settle.abs());
    }
}
