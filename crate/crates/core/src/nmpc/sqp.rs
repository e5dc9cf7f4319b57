use std::time::Instant;


use super::qp::{
    solve_qp, BoxBound, Mat11, Mat9, QpProblem, QpSettings, QpStage, QpTerminal, Vec11, Vec9, NX,
};
use super::{shift_warm_start, shoot, shoot_with_sensitivity, OcpProblem, OcpSolution, SolveStatus, SolverConfig};
use crate::spline_ref::SplineCoeffs;
use crate::vehicle_models::{friction_utilization, idx, InputVec, StateVec};

const STAGE_RES: usize = 5;

/// Stage residuals `r` with rows of `∂r/∂[x; u]`. The cost is `Σ r²`.
fn stage_residuals(
    ocp: &OcpProblem,
    x: &StateVec,
    u: &InputVec,
    friction_weight: f64,
    with_jacobian: bool,
) -> ([f64; STAGE_RES], [Vec11; STAGE_RES]) {
    let w = &ocp.weights;
    let mut r = [0.0; STAGE_RES];
    let mut j = [Vec11::zeros(); STAGE_RES];
    let sr = w.steer_rate.sqrt();
    let sa = w.accel.sqrt();
    let sq = w.speed.sqrt();
    r[0] = sr * u[0];
    j[0][NX] = sr;
    r[1] = sa * u[1];
    j[1][NX + 1] = sa;
    r[2] = sq * (ocp.v_ref - x[idx::SPEED]);
    j[2][idx::SPEED] = -sq;
    let fu = friction_utilization(x, u, &ocp.params, ocp.mu_cons);
    let sw = friction_weight.sqrt();
    for k in 0..2 {
        let excess = fu.value[k] - ocp.mu_cons;
        if excess > 0.0 {
            r[3 + k] = sw * excess;
            if with_jacobian {
                j[3 + k].fixed_rows_mut::<NX>(0).copy_from(&(fu.d_state[k] * sw));
                j[3 + k][NX + 1] = sw * fu.d_accel[k];
            }
        }
    }
    (r, j)
}

/// Terminal spline residuals (lateral, heading) with their state gradients.
fn terminal_residuals(ocp: &OcpProblem, spline: &SplineCoeffs, x: &StateVec) -> ([f64; 2], [Vec9; 2]) {
    let px = x[idx::X];
    let slope = spline.slope(px);
    let sl = ocp.weights.terminal_lateral.sqrt();
    let sh = ocp.weights.terminal_heading.sqrt();
    let lat = spline.eval(px) - x[idx::Y];
    let head = slope.atan() - x[idx::PSI];
    let mut jl = Vec9::zeros();
    jl[idx::X] = sl * slope;
    jl[idx::Y] = -sl;
    let mut jh = Vec9::zeros();
    jh[idx::X] = sh * spline.curvature_term(px) / (1.0 + slope * slope);
    jh[idx::PSI] = -sh;
    ([sl * lat, sh * head], [jl, jh])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSummary {
    /// Cost without the friction penalty.
    pub objective: f64,
    pub penalty: f64,
    pub max_defect: f64,
    /// Absolute defects summed over intervals, per state component.
    pub defect_l1: Vec9,
    pub max_friction: f64,
    pub max_violation: f64,
}

/// Cost, shooting defects and constraint excess of a candidate trajectory.
pub fn evaluate_residuals(
    ocp: &OcpProblem,
    states: &[StateVec],
    inputs: &[InputVec],
    friction_weight: f64,
) -> ResidualSummary {
    let n = ocp.intervals;
    let h = ocp.step();
    let b = &ocp.bounds;
    let mut s = ResidualSummary {
        objective: 0.0,
        penalty: 0.0,
        max_defect: 0.0,
        defect_l1: Vec9::zeros(),
        max_friction: 0.0,
        max_violation: 0.0,
    };
    for i in 0..n {
        let (x, u) = (&states[i], &inputs[i]);
        let (r, _) = stage_residuals(ocp, x, u, friction_weight, false);
        s.objective += r[..3].iter().map(|v| v * v).sum::<f64>();
        s.penalty += r[3..].iter().map(|v| v * v).sum::<f64>();
        let fu = friction_utilization(x, u, &ocp.params, ocp.mu_cons);
        s.max_friction = s.max_friction.max(fu.value[0]).max(fu.value[1]);
        let d = shoot(x, u, &ocp.params, ocp.mu_cons, h) - states[i + 1];
        s.max_defect = s.max_defect.max(d.amax());
        s.defect_l1 += d.abs();
        let viol = [
            u[0].abs() - b.steer_rate_max,
            b.accel_min - u[1],
            u[1] - b.accel_max,
        ];
        for v in viol {
            s.max_violation = s.max_violation.max(v);
        }
    }
    for x in &states[1..] {
        s.max_violation = s
            .max_violation
            .max(x[idx::DELTA].abs() - b.steer_max)
            .max(b.speed_min - x[idx::SPEED]);
    }
    s.max_violation = s.max_violation.max(s.max_friction - ocp.mu_cons);
    if let Some(spline) = &ocp.spline {
        let (r, _) = terminal_residuals(ocp, spline, &states[n]);
        s.objective += r[0] * r[0] + r[1] * r[1];
    }
    s
}

fn merit(s: &ResidualSummary, nu: &Vec9) -> f64 {
    s.objective + s.penalty + nu.dot(&s.defect_l1)
}

fn bound(index: usize, lower: f64, upper: f64, at: f64) -> BoxBound {
    BoxBound {
        index,
        lower: lower - at,
        upper: upper - at,
    }
}

fn build_qp(
    ocp: &OcpProblem,
    spline: &SplineCoeffs,
    states: &[StateVec],
    inputs: &[InputVec],
    friction_weight: f64,
) -> Option<QpProblem> {
    let n = ocp.intervals;
    let h = ocp.step();
    let b = &ocp.bounds;
    let mut stages = Vec::with_capacity(n);
    for i in 0..n {
        let (x, u) = (&states[i], &inputs[i]);
        let (next, sens) = shoot_with_sensitivity(x, u, &ocp.params, ocp.mu_cons, h);
        let (r, j) = stage_residuals(ocp, x, u, friction_weight, true);
        let mut hess = Mat11::zeros();
        let mut grad = Vec11::zeros();
        for k in 0..STAGE_RES {
            if j[k].iter().any(|v| *v != 0.0) {
                hess += j[k] * j[k].transpose() * 2.0;
                grad += j[k] * (2.0 * r[k]);
            }
        }
        let mut bounds = vec![
            bound(NX, -b.steer_rate_max, b.steer_rate_max, u[0]),
            bound(NX + 1, b.accel_min, b.accel_max, u[1]),
        ];
        if i > 0 {
            bounds.push(bound(idx::DELTA, -b.steer_max, b.steer_max, x[idx::DELTA]));
            bounds.push(bound(idx::SPEED, b.speed_min, f64::INFINITY, x[idx::SPEED]));
        }
        let c = next - states[i + 1];
        if !(c.iter().all(|v| v.is_finite()) && sens.iter().all(|v| v.is_finite())) {
            return None;
        }
        stages.push(QpStage {
            hessian: hess,
            gradient: grad,
            a: sens.fixed_view::<9, 9>(0, 0).into_owned(),
            b: sens.fixed_view::<9, 2>(0, 9).into_owned(),
            c,
            bounds,
        });
    }
    let xn = &states[n];
    let (r, j) = terminal_residuals(ocp, spline, xn);
    let mut hn = Mat9::zeros();
    let mut gn = Vec9::zeros();
    for k in 0..2 {
        hn += j[k] * j[k].transpose() * 2.0;
        gn += j[k] * (2.0 * r[k]);
    }
    Some(QpProblem {
        stages,
        terminal: QpTerminal {
            hessian: hn,
            gradient: gn,
            bounds: vec![
                bound(idx::DELTA, -ocp.bounds.steer_max, ocp.bounds.steer_max, xn[idx::DELTA]),
                bound(idx::SPEED, ocp.bounds.speed_min, f64::INFINITY, xn[idx::SPEED]),
            ],
        },
    })
}

fn cold_start(ocp: &OcpProblem) -> (Vec<StateVec>, Vec<InputVec>) {
    let inputs = vec![InputVec::zeros(); ocp.intervals];
    let mut states = Vec::with_capacity(ocp.intervals + 1);
    states.push(ocp.x0);
    for i in 0..ocp.intervals {
        let next = shoot(&states[i], &inputs[i], &ocp.params, ocp.mu_cons, ocp.step());
        states.push(next);
    }
    (states, inputs)
}

/// Pulls an initial guess inside the boxes; the QP keeps it there.
fn project_bounds(ocp: &OcpProblem, states: &mut [StateVec], inputs: &mut [InputVec]) {
    let b = &ocp.bounds;
    for u in inputs.iter_mut() {
        u[0] = u[0].clamp(-b.steer_rate_max, b.steer_rate_max);
        u[1] = u[1].clamp(b.accel_min, b.accel_max);
    }
    for x in states[1..].iter_mut() {
        x[idx::DELTA] = x[idx::DELTA].clamp(-b.steer_max, b.steer_max);
        x[idx::SPEED] = x[idx::SPEED].max(b.speed_min);
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    ocp: &OcpProblem,
    states: Vec<StateVec>,
    inputs: Vec<InputVec>,
    status: SolveStatus,
    iterations: usize,
    kkt: f64,
    merit_history: Vec<(f64, f64)>,
    friction_weight: f64,
    start: Instant,
) -> OcpSolution {
    let s = evaluate_residuals(ocp, &states, &inputs, friction_weight);
    OcpSolution {
        inputs,
        states,
        objective: s.objective,
        iterations,
        solve_ms: start.elapsed().as_secs_f64() * 1e3,
        status,
        max_violation: s.max_violation.max(0.0),
        max_friction: s.max_friction,
        max_defect: s.max_defect,
        kkt_residual: kkt,
        merit_history,
        frame: ocp.frame,
    }
}

pub fn solve(ocp: &OcpProblem, warm_start: Option<&OcpSolution>, config: &SolverConfig) -> OcpSolution {
    let start = Instant::now();
    let n = ocp.intervals;
    let Some(spline) = ocp.spline else {
        let states = vec![ocp.x0; n + 1];
        let inputs = vec![InputVec::zeros(); n];
        return finish(ocp, states, inputs, SolveStatus::Converged, 0, 0.0, vec![], config.friction_weight, start);
    };

    let warm = warm_start.filter(|w| {
        config.warm_start
            && w.status != SolveStatus::Diverged
            && w.inputs.len() == n
            && w.states.len() == n + 1
    });
    let (mut states, mut inputs) = match warm {
        Some(w) => shift_warm_start(w, ocp),
        None => cold_start(ocp),
    };
    states[0] = ocp.x0;
    project_bounds(ocp, &mut states, &mut inputs);

    let qp_settings = QpSettings::default();
    let mut weight = config.friction_weight;
    let mut nu = Vec9::zeros();
    let mut history = Vec::new();
    let mut kkt = f64::INFINITY;
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let Some(qp) = build_qp(ocp, &spline, &states, &inputs, weight) else {
            status = SolveStatus::Diverged;
            break;
        };
        let sol = match solve_qp(&qp, &qp_settings) {
            Ok(s) => s,
            Err(_) => {
                status = SolveStatus::Diverged;
                break;
            }
        };

        let mut stationarity: f64 = 0.0;
        let mut slope = 0.0;
        for i in 0..n {
            let mut dw = Vec11::zeros();
            dw.fixed_rows_mut::<NX>(0).copy_from(&sol.dx[i]);
            dw.fixed_rows_mut::<2>(NX).copy_from(&sol.du[i]);
            stationarity = stationarity.max((qp.stages[i].hessian * dw).amax());
            slope += qp.stages[i].gradient.dot(&dw);
        }
        stationarity = stationarity.max((qp.terminal.hessian * sol.dx[n]).amax());
        slope += qp.terminal.gradient.dot(&sol.dx[n]);
        let defect = qp.stages.iter().map(|s| s.c.amax()).fold(0.0, f64::max);
        kkt = stationarity.max(defect);
        if !kkt.is_finite() {
            status = SolveStatus::Diverged;
            break;
        }

        let current = evaluate_residuals(ocp, &states, &inputs, weight);
        let small = stationarity < config.kkt_tol && defect < config.defect_tol;
        if small
            && current.max_friction - ocp.mu_cons > config.friction_tol
            && weight < config.friction_weight_max
        {
            weight = (weight * config.friction_weight_growth).min(config.friction_weight_max);
            continue;
        }

        for c in &sol.costates {
            for k in 0..NX {
                nu[k] = nu[k].max(1.1 * c[k].abs() + 1e-8);
            }
        }
        let m0 = merit(&current, &nu);
        let deriv = slope - nu.dot(&current.defect_l1);
        let mut alpha = 1.0;
        let accepted = loop {
            let trial_x: Vec<StateVec> =
                states.iter().zip(&sol.dx).map(|(x, d)| x + d * alpha).collect();
            let trial_u: Vec<InputVec> =
                inputs.iter().zip(&sol.du).map(|(u, d)| u + d * alpha).collect();
            let s = evaluate_residuals(ocp, &trial_x, &trial_u, weight);
            let m1 = merit(&s, &nu);
            let target = m0 + config.armijo * alpha * deriv.min(0.0);
            if m1.is_finite() && m1 <= target {
                history.push((m0, m1));
                states = trial_x;
                inputs = trial_u;
                break true;
            }
            alpha *= config.backtrack;
            if alpha < config.min_step {
                break false;
            }
        };
        if !accepted {
            // At a stationary point rounding can defeat the Armijo test.
            if small {
                status = SolveStatus::Converged;
            }
            break;
        }
        if small {
            status = SolveStatus::Converged;
            break;
        }
    }
    finish(ocp, states, inputs, status, iterations, kkt, history, weight, start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2D;
    use crate::nmpc::build_ocp;
    use crate::vehicle_models::{VehicleParams, VehicleState};

    fn ocp(v: f64, target: Pose2D, mu: f64) -> OcpProblem {
        let s = VehicleState { speed: v, ..Default::default() };
        build_ocp(&s, &target, v, mu, &VehicleParams::default()).unwrap()
    }

    #[test]
    fn residual_jacobians_match_differences() {
        let o = ocp(6.0, Pose2D::new(6.0, 1.5, 0.3), 0.2);
        let spline = o.spline.unwrap();
        let mut x = StateVec::zeros();
        x[idx::BETA] = 0.02;
        x[idx::YAW_RATE] = 0.2;
        x[idx::DELTA] = 0.15;
        x[idx::SPEED] = 6.0;
        x[idx::X] = 4.0;
        x[idx::Y] = 0.8;
        x[idx::PSI] = 0.2;
        let u = InputVec::new(0.05, 0.6);
        let (_, j) = stage_residuals(&o, &x, &u, 1e3, true);
        let (_, jt) = terminal_residuals(&o, &spline, &x);
        let mut w = Vec11::zeros();
        w.fixed_rows_mut::<9>(0).copy_from(&x);
        w.fixed_rows_mut::<2>(9).copy_from(&u);
        for c in 0..11 {
            let hstep = 1e-6 * (1.0 + w[c].abs());
            let mut wp = w;
            let mut wm = w;
            wp[c] += hstep;
            wm[c] -= hstep;
            let split = |w: &Vec11| (w.fixed_rows::<9>(0).into_owned(), w.fixed_rows::<2>(9).into_owned());
            let (xp, up) = split(&wp);
            let (xm, um) = split(&wm);
            let (rp, _) = stage_residuals(&o, &xp, &up, 1e3, false);
            let (rm, _) = stage_residuals(&o, &xm, &um, 1e3, false);
            for k in 0..STAGE_RES {
                let fd = (rp[k] - rm[k]) / (2.0 * hstep);
                let an = j[k][c];
                assert!((fd - an).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-2), "stage {k},{c}: {an} vs {fd}");
            }
            if c < 9 {
                let (tp, _) = terminal_residuals(&o, &spline, &xp);
                let (tm, _) = terminal_residuals(&o, &spline, &xm);
                for k in 0..2 {
                    let fd = (tp[k] - tm[k]) / (2.0 * hstep);
                    let an = jt[k][c];
                    assert!((fd - an).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-2));
                }
            }
        }
        // Friction penalty must be active at this point for the check to mean anything.
        let (r, _) = stage_residuals(&o, &x, &u, 1e3, false);
        assert!(r[3] > 0.0 || r[4] > 0.0);
    }

    #[test]
    fn equilibrium_needs_no_action() {
        let o = ocp(5.0, Pose2D::new(5.0, 0.0, 0.0), 0.9);
        let sol = solve(&o, None, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Converged);
        let umax = sol.inputs.iter().map(|u| u.amax()).fold(0.0, f64::max);
        assert!(umax < 1e-3, "{umax}");
    }

    #[test]
    fn lateral_target_converges_within_bounds() {
        let o = ocp(6.0, Pose2D::new(6.0, 0.2, 0.05), 0.9);
        let sol = solve(&o, None, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Converged, "{sol:?}");
        assert!(sol.max_defect < 1e-6);
        assert!(sol.max_violation < 1e-3);
        for (a, b) in &sol.merit_history {
            assert!(b <= a);
        }
    }

    #[test]
    fn resting_problem_skips_solver() {
        let s = VehicleState::default();
        let o = build_ocp(&s, &Pose2D::default(), 0.0, 0.9, &VehicleParams::default()).unwrap();
        let sol = solve(&o, None, &SolverConfig::default());
        assert_eq!(sol.iterations, 0);
        assert!(sol.inputs.iter().all(|u| *u == InputVec::zeros()));
    }
}
