//! Single-track prediction model with lateral-force relaxation.

use nalgebra::{SMatrix, SVector};

use super::params::{VehicleParams, GRAVITY};
use super::{idx, InputVec, StateVec, MIN_SPEED};

pub type StateJacobian = SMatrix<f64, 9, 9>;
pub type InputJacobian = SMatrix<f64, 9, 2>;

/// Axle longitudinal forces (N) for commanded acceleration `accel` at speed
/// `speed`. Traction goes through the front axle; braking is split by the
/// braking bias.
pub fn longitudinal_forces(speed: f64, accel: f64, p: &VehicleParams) -> (f64, f64) {
    let lf = longitudinal_with_grad(speed, accel, p);
    (lf.front, lf.rear)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LongitudinalForces {
    pub front: f64,
    pub rear: f64,
    pub front_dv: f64,
    pub front_da: f64,
    pub rear_dv: f64,
    pub rear_da: f64,
}

/// Half-width (m/s²) of the band around zero acceleration in which the
/// traction and braking force splits are blended. Outside it each branch
/// applies unchanged; inside, a C¹ smoothstep removes the jump between them
/// so the shooting map stays differentiable.
pub const BRANCH_BLEND: f64 = 0.1;

fn traction_branch(v: f64, a: f64, p: &VehicleParams) -> LongitudinalForces {
    let drag = p.drag_coeff * v * v;
    let roll_rear = p.rolling_resistance * p.rear_axle_mass() * GRAVITY;
    LongitudinalForces {
        front: p.mass * a + roll_rear + drag,
        rear: -roll_rear,
        front_dv: 2.0 * p.drag_coeff * v,
        front_da: p.mass,
        rear_dv: 0.0,
        rear_da: 0.0,
    }
}

fn braking_branch(v: f64, a: f64, p: &VehicleParams) -> LongitudinalForces {
    let m = p.mass;
    let total = m * a + p.rolling_resistance * m * GRAVITY + p.drag_coeff * v * v;
    let drag_dv = 2.0 * p.drag_coeff * v;
    let g = p.braking_bias;
    LongitudinalForces {
        front: g * total,
        rear: (1.0 - g) * total,
        front_dv: g * drag_dv,
        front_da: g * m,
        rear_dv: (1.0 - g) * drag_dv,
        rear_da: (1.0 - g) * m,
    }
}

pub(crate) fn longitudinal_with_grad(v: f64, a: f64, p: &VehicleParams) -> LongitudinalForces {
    if a >= BRANCH_BLEND {
        return traction_branch(v, a, p);
    }
    if a <= -BRANCH_BLEND {
        return braking_branch(v, a, p);
    }
    let t = (a + BRANCH_BLEND) / (2.0 * BRANCH_BLEND);
    let w = t * t * (3.0 - 2.0 * t);
    let dw = 6.0 * t * (1.0 - t) / (2.0 * BRANCH_BLEND);
    let tr = traction_branch(v, a, p);
    let br = braking_branch(v, a, p);
    let mix = |x: f64, y: f64| w * x + (1.0 - w) * y;
    LongitudinalForces {
        front: mix(tr.front, br.front),
        rear: mix(tr.rear, br.rear),
        front_dv: mix(tr.front_dv, br.front_dv),
        front_da: mix(tr.front_da, br.front_da) + dw * (tr.front - br.front),
        rear_dv: mix(tr.rear_dv, br.rear_dv),
        rear_da: mix(tr.rear_da, br.rear_da) + dw * (tr.rear - br.rear),
    }
}

/// Cornering-stiffness reduction under longitudinal load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessReduction {
    pub zeta: f64,
    /// The longitudinal force alone exceeds the friction budget.
    pub saturated: bool,
    /// dζ/dF_x; zero once saturated.
    pub d_zeta_d_fx: f64,
}

pub fn stiffness_reduction(fx: f64, axle_mass: f64, mu: f64) -> StiffnessReduction {
    let budget = mu * axle_mass * GRAVITY;
    let q = fx / budget;
    let radicand = 1.0 - q * q;
    if radicand <= 0.0 {
        StiffnessReduction {
            zeta: 0.0,
            saturated: true,
            d_zeta_d_fx: 0.0,
        }
    } else {
        let zeta = radicand.sqrt();
        StiffnessReduction {
            zeta,
            saturated: false,
            d_zeta_d_fx: -q / (zeta * budget),
        }
    }
}

#[inline]
pub(crate) fn guarded_speed(v: f64) -> (f64, f64) {
    if v > MIN_SPEED {
        (v, 1.0)
    } else {
        (MIN_SPEED, 0.0)
    }
}

/// Front and rear slip angles (rad).
pub fn slip_angles(x: &StateVec, p: &VehicleParams) -> (f64, f64) {
    let s = SlipTerms::new(x, p);
    (s.front, s.rear)
}

/// Slip angles and their partial derivatives w.r.t. (β, ψ̇, δ, V).
#[derive(Debug, Clone, Copy)]
pub(crate) struct SlipTerms {
    pub front: f64,
    pub rear: f64,
    pub front_d: [f64; 4],
    pub rear_d: [f64; 4],
}

impl SlipTerms {
    pub fn new(x: &StateVec, p: &VehicleParams) -> Self {
        let beta = x[idx::BETA];
        let r = x[idx::YAW_RATE];
        let delta = x[idx::DELTA];
        let (vg, dvg) = guarded_speed(x[idx::SPEED]);
        let tan_d = delta.tan();
        let pf = tan_d - beta - r * p.l_front / vg;
        let pr = -beta + r * p.l_rear / vg;
        let kf = 1.0 / (1.0 + pf * pf);
        let kr = 1.0 / (1.0 + pr * pr);
        SlipTerms {
            front: pf.atan(),
            rear: pr.atan(),
            front_d: [
                -kf,
                -kf * p.l_front / vg,
                kf * (1.0 + tan_d * tan_d),
                kf * r * p.l_front / (vg * vg) * dvg,
            ],
            rear_d: [
                -kr,
                kr * p.l_rear / vg,
                0.0,
                -kr * r * p.l_rear / (vg * vg) * dvg,
            ],
        }
    }
}

/// Right-hand side of the prediction model, `ẋ = f(x, u)`, with
/// `u = [δ̇, a]`. Every speed in a denominator is guarded by
/// `max(0.01, V)`.
pub fn prediction_dynamics(x: &StateVec, u: &InputVec, p: &VehicleParams, mu_cons: f64) -> StateVec {
    let beta = x[idx::BETA];
    let r = x[idx::YAW_RATE];
    let psi = x[idx::PSI];
    let fyf = x[idx::FY_F];
    let fyr = x[idx::FY_R];
    let delta = x[idx::DELTA];
    let v = x[idx::SPEED];
    let a = u[1];
    let (vg, _) = guarded_speed(v);

    let (fxf, fxr) = longitudinal_forces(v, a, p);
    let zf = stiffness_reduction(fxf, p.front_axle_mass(), mu_cons).zeta;
    let zr = stiffness_reduction(fxr, p.rear_axle_mass(), mu_cons).zeta;
    let (af, ar) = slip_angles(x, p);
    let (sd, cd) = delta.sin_cos();
    let side = fyf * cd + fxf * sd;

    SVector::from([
        (side + fyr) / (p.mass * vg) - beta * a / vg - r,
        (side * p.l_front - fyr * p.l_rear) / p.yaw_inertia,
        r,
        v / p.relaxation_length * (zf * p.cornering_front * af - fyf),
        v / p.relaxation_length * (zr * p.cornering_rear * ar - fyr),
        v * (psi + beta).cos(),
        v * (psi + beta).sin(),
        u[0],
        a,
    ])
}

/// Prediction model with analytic Jacobians `∂f/∂x`, `∂f/∂u`.
pub fn prediction_jacobian(
    x: &StateVec,
    u: &InputVec,
    p: &VehicleParams,
    mu_cons: f64,
) -> (StateVec, StateJacobian, InputJacobian) {
    use idx::*;
    let beta = x[BETA];
    let r = x[YAW_RATE];
    let psi = x[PSI];
    let fyf = x[FY_F];
    let fyr = x[FY_R];
    let delta = x[DELTA];
    let v = x[SPEED];
    let a = u[1];
    let (vg, dvg) = guarded_speed(v);
    let m = p.mass;
    let lam = p.relaxation_length;

    let lf = longitudinal_with_grad(v, a, p);
    let zf = stiffness_reduction(lf.front, p.front_axle_mass(), mu_cons);
    let zr = stiffness_reduction(lf.rear, p.rear_axle_mass(), mu_cons);
    let slip = SlipTerms::new(x, p);
    let (sd, cd) = delta.sin_cos();
    let side = fyf * cd + lf.front * sd;
    let side_ddelta = -fyf * sd + lf.front * cd;
    let (sh, ch) = (psi + beta).sin_cos();

    let mut f = StateVec::zeros();
    let mut jx = StateJacobian::zeros();
    let mut ju = InputJacobian::zeros();

    // Side-slip rate.
    let mv = m * vg;
    f[BETA] = (side + fyr) / mv - beta * a / vg - r;
    jx[(BETA, BETA)] = -a / vg;
    jx[(BETA, YAW_RATE)] = -1.0;
    jx[(BETA, FY_F)] = cd / mv;
    jx[(BETA, FY_R)] = 1.0 / mv;
    jx[(BETA, DELTA)] = side_ddelta / mv;
    jx[(BETA, SPEED)] =
        sd * lf.front_dv / mv + (-(side + fyr) / (mv * vg) + beta * a / (vg * vg)) * dvg;
    ju[(BETA, 1)] = sd * lf.front_da / mv - beta / vg;

    // Yaw acceleration.
    let iz = p.yaw_inertia;
    f[YAW_RATE] = (side * p.l_front - fyr * p.l_rear) / iz;
    jx[(YAW_RATE, FY_F)] = cd * p.l_front / iz;
    jx[(YAW_RATE, FY_R)] = -p.l_rear / iz;
    jx[(YAW_RATE, DELTA)] = side_ddelta * p.l_front / iz;
    jx[(YAW_RATE, SPEED)] = sd * lf.front_dv * p.l_front / iz;
    ju[(YAW_RATE, 1)] = sd * lf.front_da * p.l_front / iz;

    f[PSI] = r;
    jx[(PSI, YAW_RATE)] = 1.0;

    // Lateral force relaxation, one row per axle.
    let axles = [
        (FY_F, fyf, &zf, p.cornering_front, slip.front, &slip.front_d, lf.front_dv, lf.front_da),
        (FY_R, fyr, &zr, p.cornering_rear, slip.rear, &slip.rear_d, lf.rear_dv, lf.rear_da),
    ];
    for (row, fy, z, c, alpha, dalpha, fx_dv, fx_da) in axles {
        let target = z.zeta * c * alpha;
        f[row] = v / lam * (target - fy);
        let k = v / lam * z.zeta * c;
        jx[(row, BETA)] = k * dalpha[0];
        jx[(row, YAW_RATE)] = k * dalpha[1];
        jx[(row, DELTA)] = k * dalpha[2];
        jx[(row, row)] = -v / lam;
        jx[(row, SPEED)] = (target - fy) / lam
            + v / lam * c * (z.d_zeta_d_fx * fx_dv * alpha + z.zeta * dalpha[3]);
        ju[(row, 1)] = v / lam * c * alpha * z.d_zeta_d_fx * fx_da;
    }

    f[X] = v * ch;
    jx[(X, BETA)] = -v * sh;
    jx[(X, PSI)] = -v * sh;
    jx[(X, SPEED)] = ch;
    f[Y] = v * sh;
    jx[(Y, BETA)] = v * ch;
    jx[(Y, PSI)] = v * ch;
    jx[(Y, SPEED)] = sh;

    f[DELTA] = u[0];
    ju[(DELTA, 0)] = 1.0;
    f[SPEED] = a;
    ju[(SPEED, 1)] = 1.0;

    (f, jx, ju)
}

/// Combined friction utilization per axle,
/// `‖(ζ·C_α·α, F_x)‖₂ / (m_axle·g)`, with its gradient w.r.t. the state and
/// the acceleration input.
#[derive(Debug, Clone, Copy)]
pub struct FrictionUtilization {
    pub value: [f64; 2],
    pub d_state: [StateVec; 2],
    pub d_accel: [f64; 2],
}

pub fn friction_utilization(
    x: &StateVec,
    u: &InputVec,
    p: &VehicleParams,
    mu_cons: f64,
) -> FrictionUtilization {
    use idx::*;
    let v = x[SPEED];
    let lf = longitudinal_with_grad(v, u[1], p);
    let slip = SlipTerms::new(x, p);
    let axles = [
        (lf.front, lf.front_dv, lf.front_da, p.front_axle_mass(), p.cornering_front, slip.front, slip.front_d),
        (lf.rear, lf.rear_dv, lf.rear_da, p.rear_axle_mass(), p.cornering_rear, slip.rear, slip.rear_d),
    ];
    let mut out = FrictionUtilization {
        value: [0.0; 2],
        d_state: [StateVec::zeros(); 2],
        d_accel: [0.0; 2],
    };
    for (k, (fx, fx_dv, fx_da, mass, c, alpha, dalpha)) in axles.into_iter().enumerate() {
        let z = stiffness_reduction(fx, mass, mu_cons);
        let lat = z.zeta * c * alpha;
        let load = mass * GRAVITY;
        let norm = lat.hypot(fx);
        out.value[k] = norm / load;
        if norm == 0.0 {
            continue;
        }
        // d(norm)/d(lat) and d(norm)/d(fx)
        let (gl, gx) = (lat / (norm * load), fx / (norm * load));
        let lat_dfx = z.d_zeta_d_fx * c * alpha;
        let g = &mut out.d_state[k];
        g[BETA] = gl * z.zeta * c * dalpha[0];
        g[YAW_RATE] = gl * z.zeta * c * dalpha[1];
        g[DELTA] = gl * z.zeta * c * dalpha[2];
        g[SPEED] = gl * (z.zeta * c * dalpha[3] + lat_dfx * fx_dv) + gx * fx_dv;
        out.d_accel[k] = (gl * lat_dfx + gx) * fx_da;
    }
    out
}
