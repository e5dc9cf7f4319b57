//! Generalized extreme value delay distribution.
//!
//! Delays are expressed in milliseconds here; the channel converts to
//! seconds when it stamps packets.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DelayError;

/// GEV(ξ, μ, σ) with `shape` ξ, `location` μ (ms) and `scale` σ (ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub shape: f64,
    pub location_ms: f64,
    pub scale_ms: f64,
}

impl GevParams {
    /// Downlink fit for streamed images over 4G.
    pub const DOWNLINK_4G: GevParams = GevParams {
        shape: 0.29,
        location_ms: 200.0,
        scale_ms: 9.0,
    };

    pub fn new(shape: f64, location_ms: f64, scale_ms: f64) -> Result<Self, DelayError> {
        let p = GevParams {
            shape,
            location_ms,
            scale_ms,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DelayError> {
        if !(self.scale_ms > 0.0) || !self.scale_ms.is_finite() {
            return Err(DelayError::InvalidScale(self.scale_ms));
        }
        if !self.shape.is_finite() || !self.location_ms.is_finite() {
            return Err(DelayError::NonFiniteParameter);
        }
        Ok(())
    }

    /// Infimum of the support, `μ − σ/ξ`, when the shape is positive.
    pub fn lower_bound_ms(&self) -> Option<f64> {
        (self.shape > 0.0).then(|| self.location_ms - self.scale_ms / self.shape)
    }

    /// Inverse CDF at probability `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        let e = -u.ln();
        if self.shape == 0.0 {
            self.location_ms - self.scale_ms * e.ln()
        } else {
            self.location_ms + self.scale_ms * (e.powf(-self.shape) - 1.0) / self.shape
        }
    }

    pub fn cdf(&self, x_ms: f64) -> f64 {
        let z = (x_ms - self.location_ms) / self.scale_ms;
        if self.shape == 0.0 {
            return (-(-z).exp()).exp();
        }
        let base = 1.0 + self.shape * z;
        if base <= 0.0 {
            // Outside the support: below the lower bound for ξ > 0, above
            // the upper bound for ξ < 0.
            return if self.shape > 0.0 { 0.0 } else { 1.0 };
        }
        (-base.powf(-1.0 / self.shape)).exp()
    }

    pub fn median_ms(&self) -> f64 {
        self.quantile(0.5)
    }
}

/// Draws one delay in milliseconds by inverse-transform sampling.
pub fn sample_gev<R: Rng + ?Sized>(rng: &mut R, params: &GevParams) -> Result<f64, DelayError> {
    params.validate()?;
    let u: f64 = rng.sample(Open01);
    Ok(params.quantile(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lower_bound_of_downlink_fit() {
        let lb = GevParams::DOWNLINK_4G.lower_bound_ms().unwrap();
        assert!((lb - (200.0 - 9.0 / 0.29)).abs() < 1e-12);
        assert!((lb - 168.97).abs() < 0.01);
    }

    #[test]
    fn quantile_at_inverse_e_is_location() {
        let u = (-1.0f64).exp();
        for p in [
            GevParams::DOWNLINK_4G,
            GevParams::new(-0.2, 200.0, 3.0).unwrap(),
            GevParams::new(0.0, 200.0, 9.0).unwrap(),
        ] {
            assert!((p.quantile(u) - 200.0).abs() < 1e-9, "{p:?}");
        }
    }

    #[test]
    fn rejects_non_positive_scale() {
        assert!(matches!(
            GevParams::new(0.29, 200.0, 0.0),
            Err(DelayError::InvalidScale(_))
        ));
        let bad = GevParams {
            shape: 0.1,
            location_ms: 1.0,
            scale_ms: -2.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_gev(&mut rng, &bad).is_err());
    }

    #[test]
    fn gumbel_limit_matches_small_shape() {
        let g = GevParams::new(0.0, 200.0, 9.0).unwrap();
        let near = GevParams::new(1e-9, 200.0, 9.0).unwrap();
        for u in [0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((g.quantile(u) - near.quantile(u)).abs() < 1e-5);
            assert!((g.cdf(g.quantile(u)) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_median_matches_inverse_cdf() {
        let p = GevParams::DOWNLINK_4G;
        // Analytic median straight from the closed form, independent of
        // `quantile`.
        let analytic = 200.0 + 9.0 * (std::f64::consts::LN_2.powf(-0.29) - 1.0) / 0.29;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut xs: Vec<f64> = (0..1_000_000)
            .map(|_| sample_gev(&mut rng, &p).unwrap())
            .collect();
        xs.sort_by(f64::total_cmp);
        let median = 0.5 * (xs[499_999] + xs[500_000]);
        assert!((median - analytic).abs() < 0.5, "{median} vs {analytic}");
        assert!((p.median_ms() - analytic).abs() < 1e-9);
    }
}
