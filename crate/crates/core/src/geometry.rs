use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wraps an angle to (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Planar pose: position (m) and heading (rad).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Pose2D {
            x,
            y,
            psi: normalize_angle(psi),
        }
    }

    /// Expresses `global` in the frame attached to `self`.
    pub fn to_local(&self, global: &Pose2D) -> Pose2D {
        let (s, c) = self.psi.sin_cos();
        let dx = global.x - self.x;
        let dy = global.y - self.y;
        Pose2D::new(c * dx + s * dy, -s * dx + c * dy, global.psi - self.psi)
    }

    /// Inverse of [`Pose2D::to_local`].
    pub fn to_global(&self, local: &Pose2D) -> Pose2D {
        let (s, c) = self.psi.sin_cos();
        Pose2D::new(
            self.x + c * local.x - s * local.y,
            self.y + s * local.x + c * local.y,
            local.psi + self.psi,
        )
    }
}
