//! Cubic reference curve from the vehicle CG to the target pose, expressed
//! in the vehicle frame, with prescribed tangents at both ends.

use thiserror::Error;

pub use crate::geometry::Pose2D;

/// Targets closer than this along the vehicle axis are not fitted.
pub const MIN_TARGET_DISTANCE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("target {x_ref:.3} m ahead is at or behind the CG; hold the previous command")]
    DegenerateTarget { x_ref: f64 },
    #[error("target heading {psi_ref:.3} rad is not representable by y(x)")]
    InvalidHeading { psi_ref: f64 },
}

/// `y = A x³ + B x² + C x + D`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplineCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl SplineCoeffs {
    pub fn eval(&self, x: f64) -> f64 {
        ((self.a * x + self.b) * x + self.c) * x + self.d
    }

    pub fn slope(&self, x: f64) -> f64 {
        (3.0 * self.a * x + 2.0 * self.b) * x + self.c
    }

    pub fn curvature_term(&self, x: f64) -> f64 {
        6.0 * self.a * x + 2.0 * self.b
    }
}

/// Solves `y(0) = 0`, `y(x_ref) = y_ref`, `y'(0) = tan β`,
/// `y'(x_ref) = tan ψ_ref` in closed form.
pub fn fit_spline(target: &Pose2D, beta: f64) -> Result<SplineCoeffs, SplineError> {
    let x = target.x;
    if !(x > MIN_TARGET_DISTANCE) {
        return Err(SplineError::DegenerateTarget { x_ref: x });
    }
    if !(target.psi.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(SplineError::InvalidHeading { psi_ref: target.psi });
    }
    let c = beta.tan();
    let r1 = target.y - c * x;
    let r2 = target.psi.tan() - c;
    let x2 = x * x;
    Ok(SplineCoeffs {
        a: (r2 * x - 2.0 * r1) / (x2 * x),
        b: (3.0 * r1 - r2 * x) / x2,
        c,
        d: 0.0,
    })
}

/// Lateral and heading residuals of a point against the curve.
pub fn spline_errors(coeffs: &SplineCoeffs, x: f64, y: f64, psi: f64) -> (f64, f64) {
    (coeffs.eval(x) - y, coeffs.slope(x).atan() - psi)
}
