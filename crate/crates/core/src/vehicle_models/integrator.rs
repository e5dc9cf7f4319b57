use nalgebra::SVector;

use super::ModelError;

/// One classical fourth-order Runge–Kutta step with the input held.
pub fn rk4_step<const N: usize, U, F>(
    mut dynamics: F,
    x: &SVector<f64, N>,
    u: &U,
    dt: f64,
) -> Result<SVector<f64, N>, ModelError>
where
    F: FnMut(&SVector<f64, N>, &U) -> SVector<f64, N>,
{
    debug_assert!(dt > 0.0);
    let check = |k: &SVector<f64, N>, stage: usize| match k.iter().position(|v| !v.is_finite()) {
        Some(component) => Err(ModelError::NonFinite { component, stage }),
        None => Ok(()),
    };
    let k1 = dynamics(x, u);
    check(&k1, 1)?;
    let k2 = dynamics(&(x + k1 * (0.5 * dt)), u);
    check(&k2, 2)?;
    let k3 = dynamics(&(x + k2 * (0.5 * dt)), u);
    check(&k3, 3)?;
    let k4 = dynamics(&(x + k3 * dt), u);
    check(&k4, 4)?;
    Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector1;

    #[test]
    fn zero_dynamics_leave_state() {
        let x = SVector::<f64, 3>::new(1.0, -2.0, 3.5);
        let out = rk4_step(|_, _: &()| SVector::<f64, 3>::zeros(), &x, &(), 0.1).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn exponential_growth() {
        let out = rk4_step(|x, _: &()| *x, &Vector1::new(1.0), &(), 0.01).unwrap();
        // 1 + h + h²/2 + h³/6 + h⁴/24
        let h: f64 = 0.01;
        let taylor = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((out[0] - taylor).abs() < 1e-15);
        assert!((out[0] - 1.010_050_167).abs() < 1e-9);
    }

    #[test]
    fn non_finite_derivative_aborts() {
        let err = rk4_step(|_, _: &()| Vector1::new(f64::NAN), &Vector1::new(1.0), &(), 0.1);
        assert_eq!(err, Err(ModelError::NonFinite { component: 0, stage: 1 }));
    }
}
