//! One RK4 step of the prediction model over a shooting interval, with its
//! sensitivities propagated through the four stages.

use nalgebra::SMatrix;

use crate::vehicle_models::{
    prediction_dynamics, prediction_jacobian, InputVec, StateVec, VehicleParams,
};

pub type Sensitivity = SMatrix<f64, 9, 11>;

/// `Φ(x, u)` only.
pub fn shoot(x: &StateVec, u: &InputVec, p: &VehicleParams, mu: f64, h: f64) -> StateVec {
    let f = |x: &StateVec| prediction_dynamics(x, u, p, mu);
    let k1 = f(x);
    let k2 = f(&(x + k1 * (h / 2.0)));
    let k3 = f(&(x + k2 * (h / 2.0)));
    let k4 = f(&(x + k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// `Φ(x, u)` and `[∂Φ/∂x  ∂Φ/∂u]`.
pub fn shoot_with_sensitivity(
    x: &StateVec,
    u: &InputVec,
    p: &VehicleParams,
    mu: f64,
    h: f64,
) -> (StateVec, Sensitivity) {
    let mut seed = Sensitivity::zeros();
    seed.fixed_view_mut::<9, 9>(0, 0).fill_diagonal(1.0);

    let stage = |xs: &StateVec, dxs: &Sensitivity| -> (StateVec, Sensitivity) {
        let (k, jx, ju) = prediction_jacobian(xs, u, p, mu);
        let mut dk = jx * dxs;
        let mut du = dk.fixed_view_mut::<9, 2>(0, 9);
        du += ju;
        (k, dk)
    };

    let (k1, s1) = stage(x, &seed);
    let (k2, s2) = stage(&(x + k1 * (h / 2.0)), &(seed + s1 * (h / 2.0)));
    let (k3, s3) = stage(&(x + k2 * (h / 2.0)), &(seed + s2 * (h / 2.0)));
    let (k4, s4) = stage(&(x + k3 * h), &(seed + s3 * h));
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let sens = seed + (s1 + s2 * 2.0 + s3 * 2.0 + s4) * (h / 6.0);
    (next, sens)
}
