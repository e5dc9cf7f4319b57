//! Stage-wise convex QP with box bounds, solved by a Mehrotra
//! predictor–corrector interior-point method. Every Newton system is an
//! equality-constrained LQ problem handled by a backward Riccati recursion,
//! so the cost per iteration is linear in the horizon.
//!
//! ```text
//! min  Σ_i ½ w_iᵀ H_i w_i + g_iᵀ w_i  + ½ x_Nᵀ H_N x_N + g_Nᵀ x_N
//! s.t. x_{i+1} = A_i x_i + B_i u_i + c_i,   x_0 = 0
//!      lo ≤ selected components of w_i ≤ hi
//! ```
//! with `w_i = [x_i; u_i]`. Primal iterates stay strictly inside the
//! bounds.

use nalgebra::{SMatrix, SVector};

pub const NX: usize = 9;
pub const NU: usize = 2;
pub const NW: usize = NX + NU;

pub type Mat9 = SMatrix<f64, NX, NX>;
pub type Mat92 = SMatrix<f64, NX, NU>;
pub type Mat2 = SMatrix<f64, NU, NU>;
pub type Mat29 = SMatrix<f64, NU, NX>;
pub type Mat11 = SMatrix<f64, NW, NW>;
pub type Vec9 = SVector<f64, NX>;
pub type Vec2 = SVector<f64, NU>;
pub type Vec11 = SVector<f64, NW>;

/// Bound on one component of a stage vector. For the terminal stage only
/// indices below `NX` are meaningful.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxBound {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct QpStage {
    pub hessian: Mat11,
    pub gradient: Vec11,
    pub a: Mat9,
    pub b: Mat92,
    pub c: Vec9,
    pub bounds: Vec<BoxBound>,
}

#[derive(Debug, Clone)]
pub struct QpTerminal {
    pub hessian: Mat9,
    pub gradient: Vec9,
    pub bounds: Vec<BoxBound>,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub stages: Vec<QpStage>,
    pub terminal: QpTerminal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    /// Target average complementarity.
    pub mu_tol: f64,
    /// Target equality residual.
    pub eq_tol: f64,
    pub fraction_to_boundary: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            max_iter: 60,
            mu_tol: 1e-10,
            eq_tol: 1e-10,
            fraction_to_boundary: 0.995,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub dx: Vec<Vec9>,
    pub du: Vec<Vec2>,
    /// Multipliers of the dynamics constraints `x_{i+1} = …`, one per stage.
    pub costates: Vec<Vec9>,
    pub iterations: usize,
    pub converged: bool,
    pub complementarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QpError {
    NotPositiveDefinite { stage: usize },
    NonFinite,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    stage: usize,
    index: usize,
    lower: Option<f64>,
    upper: Option<f64>,
}

/// Bound slots, the value of each bounded variable, its slacks and duals.
struct BoundSet {
    slots: Vec<Slot>,
    zl: Vec<f64>,
    zu: Vec<f64>,
}

fn get(w: &[Vec11], xn: &Vec9, n: usize, slot: &Slot) -> f64 {
    if slot.stage == n {
        xn[slot.index]
    } else {
        w[slot.stage][slot.index]
    }
}

fn set(w: &mut [Vec11], xn: &mut Vec9, n: usize, slot: &Slot, v: f64) {
    if slot.stage == n {
        xn[slot.index] = v;
    } else {
        w[slot.stage][slot.index] = v;
    }
}

struct Factorization {
    /// Feedback gains and the inverse-reduced input Hessian per stage.
    gains: Vec<Mat29>,
    huu_chol: Vec<nalgebra::Cholesky<f64, nalgebra::Const<NU>>>,
    hux: Vec<Mat29>,
    p: Vec<Mat9>,
}

/// Backward Riccati factorization for stage Hessians `hs` (with barrier
/// terms already added) and terminal Hessian `hn`.
fn factorize(stages: &[QpStage], hs: &[Mat11], hn: &Mat9) -> Result<Factorization, QpError> {
    let n = stages.len();
    let mut p = vec![Mat9::zeros(); n + 1];
    p[n] = *hn;
    let mut gains = vec![Mat29::zeros(); n];
    let mut hux_all = vec![Mat29::zeros(); n];
    let mut chols = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let st = &stages[i];
        let h = &hs[i];
        let q = h.fixed_view::<NX, NX>(0, 0);
        let s = h.fixed_view::<NU, NX>(NX, 0);
        let r = h.fixed_view::<NU, NU>(NX, NX);
        let pb = p[i + 1] * st.b;
        let pa = p[i + 1] * st.a;
        let huu: Mat2 = r + st.b.transpose() * pb;
        let hux: Mat29 = s + st.b.transpose() * pa;
        let chol = huu.cholesky().ok_or(QpError::NotPositiveDefinite { stage: i })?;
        let k = -chol.solve(&hux);
        let mut pi = q + st.a.transpose() * pa + hux.transpose() * k;
        pi = (pi + pi.transpose()) * 0.5;
        p[i] = pi;
        gains[i] = k;
        hux_all[i] = hux;
        chols.push(chol);
    }
    chols.reverse();
    Ok(Factorization {
        gains,
        huu_chol: chols,
        hux: hux_all,
        p,
    })
}

/// Solves the LQ problem for linear terms `qs`/`qn` and dynamics offsets
/// `bs`, starting from `x_0 = 0`. Returns stage vectors, terminal state and
/// costates.
fn riccati_solve(
    stages: &[QpStage],
    fac: &Factorization,
    qs: &[Vec11],
    qn: &Vec9,
    bs: &[Vec9],
) -> (Vec<Vec11>, Vec9, Vec<Vec9>) {
    let n = stages.len();
    let mut pv = vec![Vec9::zeros(); n + 1];
    pv[n] = *qn;
    let mut kff = vec![Vec2::zeros(); n];
    for i in (0..n).rev() {
        let st = &stages[i];
        let q = qs[i].fixed_rows::<NX>(0).into_owned();
        let r = qs[i].fixed_rows::<NU>(NX).into_owned();
        let next = fac.p[i + 1] * bs[i] + pv[i + 1];
        let hu = r + st.b.transpose() * next;
        let k = -fac.huu_chol[i].solve(&hu);
        pv[i] = q + st.a.transpose() * next + fac.hux[i].transpose() * k;
        kff[i] = k;
    }
    let mut w = vec![Vec11::zeros(); n];
    let mut x = Vec9::zeros();
    let mut costates = vec![Vec9::zeros(); n];
    for i in 0..n {
        let st = &stages[i];
        let u = fac.gains[i] * x + kff[i];
        w[i].fixed_rows_mut::<NX>(0).copy_from(&x);
        w[i].fixed_rows_mut::<NU>(NX).copy_from(&u);
        x = st.a * x + st.b * u + bs[i];
        costates[i] = fac.p[i + 1] * x + pv[i + 1];
    }
    (w, x, costates)
}

pub fn solve_qp(qp: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    let n = qp.stages.len();
    let mut w = vec![Vec11::zeros(); n];
    let mut xn = Vec9::zeros();

    let mut bounds = BoundSet {
        slots: Vec::new(),
        zl: Vec::new(),
        zu: Vec::new(),
    };
    let stage_bounds = qp
        .stages
        .iter()
        .map(|s| &s.bounds)
        .chain(std::iter::once(&qp.terminal.bounds));
    for (stage, list) in stage_bounds.enumerate() {
        for b in list {
            // x_0 is fixed; bounds on it are not part of the QP.
            if stage == 0 && b.index < NX {
                continue;
            }
            let slot = Slot {
                stage,
                index: b.index,
                lower: b.lower.is_finite().then_some(b.lower),
                upper: b.upper.is_finite().then_some(b.upper),
            };
            // Start strictly inside the box.
            let v = get(&w, &xn, n, &slot);
            let v = match (slot.lower, slot.upper) {
                (Some(l), Some(u)) => {
                    let margin = (0.01 * (u - l)).min(0.01);
                    v.clamp(l + margin, u - margin)
                }
                (Some(l), None) => v.max(l + 0.01),
                (None, Some(u)) => v.min(u - 0.01),
                (None, None) => v,
            };
            set(&mut w, &mut xn, n, &slot, v);
            bounds.slots.push(slot);
            bounds.zl.push(if slot.lower.is_some() { 1.0 } else { 0.0 });
            bounds.zu.push(if slot.upper.is_some() { 1.0 } else { 0.0 });
        }
    }
    let m = bounds
        .slots
        .iter()
        .map(|s| s.lower.is_some() as usize + s.upper.is_some() as usize)
        .sum::<usize>();

    let slacks = |w: &[Vec11], xn: &Vec9, slot: &Slot| -> (f64, f64) {
        let v = get(w, xn, n, slot);
        (
            slot.lower.map_or(f64::INFINITY, |l| v - l),
            slot.upper.map_or(f64::INFINITY, |u| u - v),
        )
    };
    let complementarity = |w: &[Vec11], xn: &Vec9, zl: &[f64], zu: &[f64]| -> f64 {
        if m == 0 {
            return 0.0;
        }
        let mut sum = 0.0;
        for (k, slot) in bounds.slots.iter().enumerate() {
            let (sl, su) = slacks(w, xn, slot);
            if slot.lower.is_some() {
                sum += sl * zl[k];
            }
            if slot.upper.is_some() {
                sum += su * zu[k];
            }
        }
        sum / m as f64
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut costates = vec![Vec9::zeros(); n];
    let mut mu = complementarity(&w, &xn, &bounds.zl, &bounds.zu);
    for it in 0..settings.max_iter {
        iterations = it + 1;
        // Dynamics residuals of the current iterate.
        let mut eq_res: f64 = 0.0;
        let bs: Vec<Vec9> = (0..n)
            .map(|i| {
                let st = &qp.stages[i];
                let x = w[i].fixed_rows::<NX>(0);
                let u = w[i].fixed_rows::<NU>(NX);
                let next = if i + 1 < n {
                    w[i + 1].fixed_rows::<NX>(0).into_owned()
                } else {
                    xn
                };
                let r = st.a * x + st.b * u + st.c - next;
                eq_res = eq_res.max(r.amax());
                r
            })
            .collect();

        if mu < settings.mu_tol && eq_res < settings.eq_tol && it > 0 {
            converged = true;
            break;
        }

        // Barrier-augmented Hessians.
        let mut hs: Vec<Mat11> = qp.stages.iter().map(|s| s.hessian).collect();
        let mut hn = qp.terminal.hessian;
        let mut sl = vec![0.0; bounds.slots.len()];
        let mut su = vec![0.0; bounds.slots.len()];
        for (k, slot) in bounds.slots.iter().enumerate() {
            let (l, u) = slacks(&w, &xn, slot);
            sl[k] = l;
            su[k] = u;
            let mut sigma = 0.0;
            if slot.lower.is_some() {
                sigma += bounds.zl[k] / l;
            }
            if slot.upper.is_some() {
                sigma += bounds.zu[k] / u;
            }
            if slot.stage == n {
                hn[(slot.index, slot.index)] += sigma;
            } else {
                hs[slot.stage][(slot.index, slot.index)] += sigma;
            }
        }
        let fac = factorize(&qp.stages, &hs, &hn)?;

        // Linear terms for given complementarity targets rl = s_l z_l + Δ…,
        // see module docs: q = H w + g − (z_l + r_l/s_l) + (z_u + r_u/s_u).
        let base_q: Vec<Vec11> = (0..n)
            .map(|i| qp.stages[i].hessian * w[i] + qp.stages[i].gradient)
            .collect();
        let base_qn = qp.terminal.hessian * xn + qp.terminal.gradient;
        let build_q = |rl: &[f64], ru: &[f64]| -> (Vec<Vec11>, Vec9) {
            let mut q = base_q.clone();
            let mut qn = base_qn;
            for (k, slot) in bounds.slots.iter().enumerate() {
                let mut add = 0.0;
                if slot.lower.is_some() {
                    add -= bounds.zl[k] + rl[k] / sl[k];
                }
                if slot.upper.is_some() {
                    add += bounds.zu[k] + ru[k] / su[k];
                }
                if slot.stage == n {
                    qn[slot.index] += add;
                } else {
                    q[slot.stage][slot.index] += add;
                }
            }
            (q, qn)
        };
        let direction = |rl: &[f64], ru: &[f64]| {
            let (q, qn) = build_q(rl, ru);
            let (dw, dxn, lam) = riccati_solve(&qp.stages, &fac, &q, &qn, &bs);
            let mut dzl = vec![0.0; bounds.slots.len()];
            let mut dzu = vec![0.0; bounds.slots.len()];
            let mut dv = vec![0.0; bounds.slots.len()];
            for (k, slot) in bounds.slots.iter().enumerate() {
                let d = get(&dw, &dxn, n, slot);
                dv[k] = d;
                if slot.lower.is_some() {
                    dzl[k] = (rl[k] - bounds.zl[k] * d) / sl[k];
                }
                if slot.upper.is_some() {
                    dzu[k] = (ru[k] + bounds.zu[k] * d) / su[k];
                }
            }
            (dw, dxn, lam, dv, dzl, dzu)
        };
        let max_step = |dv: &[f64], dzl: &[f64], dzu: &[f64], tau: f64| -> f64 {
            let mut alpha: f64 = 1.0;
            for (k, slot) in bounds.slots.iter().enumerate() {
                if slot.lower.is_some() {
                    if dv[k] < 0.0 {
                        alpha = alpha.min(-tau * sl[k] / dv[k]);
                    }
                    if dzl[k] < 0.0 {
                        alpha = alpha.min(-tau * bounds.zl[k] / dzl[k]);
                    }
                }
                if slot.upper.is_some() {
                    if dv[k] > 0.0 {
                        alpha = alpha.min(tau * su[k] / dv[k]);
                    }
                    if dzu[k] < 0.0 {
                        alpha = alpha.min(-tau * bounds.zu[k] / dzu[k]);
                    }
                }
            }
            alpha
        };

        // Predictor (affine scaling).
        let rl_aff: Vec<f64> = (0..bounds.slots.len())
            .map(|k| if bounds.slots[k].lower.is_some() { -sl[k] * bounds.zl[k] } else { 0.0 })
            .collect();
        let ru_aff: Vec<f64> = (0..bounds.slots.len())
            .map(|k| if bounds.slots[k].upper.is_some() { -su[k] * bounds.zu[k] } else { 0.0 })
            .collect();
        let (dw, dxn, lam, dv, dzl, dzu) = direction(&rl_aff, &ru_aff);
        let (dw, dxn, lam, dv, dzl, dzu) = if m > 0 {
            let a_aff = max_step(&dv, &dzl, &dzu, 1.0);
            let mut mu_aff = 0.0;
            for (k, slot) in bounds.slots.iter().enumerate() {
                if slot.lower.is_some() {
                    mu_aff += (sl[k] + a_aff * dv[k]) * (bounds.zl[k] + a_aff * dzl[k]);
                }
                if slot.upper.is_some() {
                    mu_aff += (su[k] - a_aff * dv[k]) * (bounds.zu[k] + a_aff * dzu[k]);
                }
            }
            mu_aff /= m as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            // Corrector with second-order term.
            let rl: Vec<f64> = (0..bounds.slots.len())
                .map(|k| {
                    if bounds.slots[k].lower.is_some() {
                        sigma * mu - sl[k] * bounds.zl[k] - dv[k] * dzl[k]
                    } else {
                        0.0
                    }
                })
                .collect();
            let ru: Vec<f64> = (0..bounds.slots.len())
                .map(|k| {
                    if bounds.slots[k].upper.is_some() {
                        sigma * mu - su[k] * bounds.zu[k] + dv[k] * dzu[k]
                    } else {
                        0.0
                    }
                })
                .collect();
            direction(&rl, &ru)
        } else {
            (dw, dxn, lam, dv, dzl, dzu)
        };

        let alpha = if m > 0 {
            max_step(&dv, &dzl, &dzu, settings.fraction_to_boundary)
        } else {
            1.0
        };
        for i in 0..n {
            w[i] += dw[i] * alpha;
        }
        xn += dxn * alpha;
        for k in 0..bounds.slots.len() {
            bounds.zl[k] += alpha * dzl[k];
            bounds.zu[k] += alpha * dzu[k];
        }
        for (c, l) in costates.iter_mut().zip(&lam) {
            *c += (l - *c) * alpha;
        }
        if !xn.iter().all(|v| v.is_finite()) {
            return Err(QpError::NonFinite);
        }
        mu = complementarity(&w, &xn, &bounds.zl, &bounds.zu);
        if m == 0 && alpha == 1.0 {
            converged = true;
            iterations += 1;
            break;
        }
    }

    let mut dx: Vec<Vec9> = w.iter().map(|v| v.fixed_rows::<NX>(0).into_owned()).collect();
    dx.push(xn);
    let du = w.iter().map(|v| v.fixed_rows::<NU>(NX).into_owned()).collect();
    Ok(QpSolution {
        dx,
        du,
        costates,
        iterations,
        converged,
        complementarity: mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Double integrator embedded in the first two state slots; remaining
    /// states are inert.
    fn toy(n: usize, bounds: bool) -> QpProblem {
        let h = 0.1;
        let mut a = Mat9::identity();
        a[(0, 1)] = h;
        let mut b = Mat92::zeros();
        b[(1, 0)] = h;
        let mut hess = Mat11::zeros();
        hess[(0, 0)] = 1.0;
        hess[(NX, NX)] = 0.1;
        hess[(NX + 1, NX + 1)] = 0.1;
        for k in 2..NX {
            hess[(k, k)] = 1e-6;
        }
        let mut c = Vec9::zeros();
        c[0] = 0.0;
        let mut stages: Vec<QpStage> = (0..n)
            .map(|_| QpStage {
                hessian: hess,
                gradient: Vec11::zeros(),
                a,
                b,
                c,
                bounds: if bounds {
                    vec![BoxBound { index: NX, lower: -0.5, upper: 0.5 }]
                } else {
                    vec![]
                },
            })
            .collect();
        // Start displaced: first offset moves x from 0 to 1.
        stages[0].c[0] = 1.0;
        let mut hn = Mat9::zeros();
        hn[(0, 0)] = 10.0;
        hn[(1, 1)] = 10.0;
        QpProblem {
            stages,
            terminal: QpTerminal {
                hessian: hn,
                gradient: Vec9::zeros(),
                bounds: vec![],
            },
        }
    }

    /// Dense KKT solve of the same problem as an oracle.
    fn dense_oracle(qp: &QpProblem) -> (Vec<Vec11>, Vec9) {
        let n = qp.stages.len();
        let nv = n * NW + NX;
        let ne = NX * (n + 1);
        let dim = nv + ne;
        let mut k = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = nalgebra::DVector::<f64>::zeros(dim);
        for i in 0..n {
            let o = i * NW;
            k.view_mut((o, o), (NW, NW)).copy_from(&qp.stages[i].hessian);
            rhs.rows_mut(o, NW).copy_from(&(-qp.stages[i].gradient));
        }
        let o = n * NW;
        k.view_mut((o, o), (NX, NX)).copy_from(&qp.terminal.hessian);
        rhs.rows_mut(o, NX).copy_from(&(-qp.terminal.gradient));
        // x_0 = 0
        for j in 0..NX {
            k[(nv + j, j)] = 1.0;
            k[(j, nv + j)] = 1.0;
        }
        for i in 0..n {
            let row = nv + NX * (i + 1);
            let st = &qp.stages[i];
            let xi = i * NW;
            let xn = if i + 1 < n { (i + 1) * NW } else { n * NW };
            for r in 0..NX {
                for c in 0..NX {
                    k[(row + r, xi + c)] = st.a[(r, c)];
                    k[(xi + c, row + r)] = st.a[(r, c)];
                }
                for c in 0..NU {
                    k[(row + r, xi + NX + c)] = st.b[(r, c)];
                    k[(xi + NX + c, row + r)] = st.b[(r, c)];
                }
                k[(row + r, xn + r)] = -1.0;
                k[(xn + r, row + r)] = -1.0;
                rhs[row + r] = -st.c[r];
            }
        }
        let sol = k.lu().solve(&rhs).unwrap();
        let w = (0..n)
            .map(|i| Vec11::from_iterator(sol.rows(i * NW, NW).iter().copied()))
            .collect();
        (w, Vec9::from_iterator(sol.rows(n * NW, NX).iter().copied()))
    }

    #[test]
    fn unconstrained_matches_dense_kkt() {
        let qp = toy(20, false);
        let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
        assert!(sol.converged);
        let (w, xn) = dense_oracle(&qp);
        for (i, wi) in w.iter().enumerate() {
            assert!((sol.dx[i] - wi.fixed_rows::<NX>(0)).amax() < 1e-8);
            assert!((sol.du[i] - wi.fixed_rows::<NU>(NX)).amax() < 1e-8);
        }
        assert!((sol.dx[20] - xn).amax() < 1e-8);
    }

    #[test]
    fn bounds_hold_and_bind() {
        let qp = toy(20, true);
        let sol = solve_qp(&qp, &QpSettings::default()).unwrap();
        assert!(sol.converged, "iterations {}", sol.iterations);
        let umin = sol.du.iter().map(|u| u[0]).fold(f64::INFINITY, f64::min);
        assert!(sol.du.iter().all(|u| u[0].abs() <= 0.5));
        assert!((umin + 0.5).abs() < 1e-6, "bound should be active, min {umin}");
        // Dynamics hold at the solution.
        for i in 0..20 {
            let st = &qp.stages[i];
            let r = st.a * sol.dx[i] + st.b * sol.du[i] + st.c - sol.dx[i + 1];
            assert!(r.amax() < 1e-9);
        }
    }
}
