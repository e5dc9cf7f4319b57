use serde::{Deserialize, Serialize};

use super::ModelError;

pub const GRAVITY: f64 = 9.81;

/// Single-track vehicle parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// Mass (kg).
    pub mass: f64,
    /// Yaw inertia (kg·m²).
    pub yaw_inertia: f64,
    /// CG to front axle (m).
    pub l_front: f64,
    /// CG to rear axle (m).
    pub l_rear: f64,
    /// Lumped front cornering stiffness (N/rad).
    pub cornering_front: f64,
    /// Lumped rear cornering stiffness (N/rad).
    pub cornering_rear: f64,
    /// Tire relaxation length (m).
    pub relaxation_length: f64,
    /// Share of braking force on the front axle.
    pub braking_bias: f64,
    /// Aerodynamic drag coefficient (N/(m²/s²)).
    pub drag_coeff: f64,
    /// Rolling resistance coefficient.
    pub rolling_resistance: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            mass: 1180.0,
            yaw_inertia: 2066.0,
            l_front: 1.515,
            l_rear: 1.504,
            cornering_front: 46_000.0,
            cornering_rear: 46_000.0,
            relaxation_length: 0.3,
            braking_bias: 0.6,
            drag_coeff: 0.4,
            rolling_resistance: 0.025,
        }
    }
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.l_front + self.l_rear
    }

    /// Static mass on the front axle, `m·l_R/(l_F + l_R)`.
    pub fn front_axle_mass(&self) -> f64 {
        self.mass * self.l_rear / self.wheelbase()
    }

    /// Static mass on the rear axle, `m·l_F/(l_F + l_R)`.
    pub fn rear_axle_mass(&self) -> f64 {
        self.mass - self.front_axle_mass()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("l_front", self.l_front),
            ("l_rear", self.l_rear),
            ("cornering_front", self.cornering_front),
            ("cornering_rear", self.cornering_rear),
            ("relaxation_length", self.relaxation_length),
            ("drag_coeff", self.drag_coeff),
            ("rolling_resistance", self.rolling_resistance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidParameter(name));
            }
        }
        if !(0.0..=1.0).contains(&self.braking_bias) {
            return Err(ModelError::InvalidParameter("braking_bias"));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ModelError> {
        let p: VehicleParams =
            toml::from_str(s).map_err(|e| ModelError::ParamFile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("plain struct serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axle_masses_sum_to_total() {
        let p = VehicleParams::default();
        assert_eq!(p.front_axle_mass() + p.rear_axle_mass(), p.mass);
        assert!((p.rear_axle_mass() - 592.15).abs() < 0.01);
        assert!((p.front_axle_mass() - 1180.0 * 1.504 / 3.019).abs() < 1e-9);
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let p = VehicleParams::default();
        let back = VehicleParams::from_toml_str(&p.to_toml_string()).unwrap();
        assert_eq!(p, back);
        let bad = p.to_toml_string().replace("braking_bias = 0.6", "braking_bias = 1.5");
        assert!(VehicleParams::from_toml_str(&bad).is_err());
        assert!(VehicleParams::from_toml_str("mass = 1").is_err());
    }
}
