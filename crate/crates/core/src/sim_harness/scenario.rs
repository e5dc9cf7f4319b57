//! Scenario description and reference-path construction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::delay_channel::ChannelConfig;
use crate::geometry::{normalize_angle, Pose2D};
use crate::metrics_io::RegionBounds;
use crate::trajectory::Trajectory;
use crate::vehicle_models::{Disturbance, PlantConfig, VehicleParams};

/// Sampling step along each primitive (m).
const SAMPLE_STEP: f64 = 0.05;
/// Largest heading change accepted between neighbouring samples (rad).
const MAX_HEADING_JUMP: f64 = 0.05;

pub const DEFAULT_SCENARIO: &str = include_str!("../../scenarios/default.toml");

/// Path primitive in the frame of its start pose. Positive angles, offsets
/// and curvatures turn left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Straight { length: f64 },
    Arc { radius: f64, angle_deg: f64 },
    /// Curvature varying linearly from `curvature_start` to `curvature_end`.
    Clothoid {
        length: f64,
        curvature_start: f64,
        curvature_end: f64,
    },
    /// Cosine-ramped lateral shift, a hold, and the ramp back.
    LaneChange { offset: f64, ramp: f64, hold: f64 },
    /// Weave through `gates` cones spaced `spacing` apart with peak offset
    /// `amplitude`, tapered in over the first and out over the last spacing.
    Slalom {
        spacing: f64,
        amplitude: f64,
        gates: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub label: String,
    pub segments: Vec<Segment>,
    #[serde(default = "default_mu_road")]
    pub mu_road: f64,
    #[serde(default)]
    pub wind_speed: f64,
    /// Direction the wind blows towards (rad, global frame).
    #[serde(default)]
    pub wind_bearing: f64,
    /// Friction coefficient the SRPT operator assigns in this section.
    #[serde(default = "default_mu_cons")]
    pub mu_cons: f64,
}

fn default_mu_road() -> f64 {
    1.0
}

fn default_mu_cons() -> f64 {
    0.9
}

fn default_delay_only_kmh() -> f64 {
    12.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub v_ref_kmh: f64,
    /// Reduced speed for the uncompensated delay-only baseline.
    #[serde(default = "default_delay_only_kmh")]
    pub delay_only_kmh: f64,
    /// Straight appended after the last section so look-ahead targets exist.
    #[serde(default)]
    pub run_out: f64,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub plant: PlantConfig,
    pub sections: Vec<Section>,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig =
            toml::from_str(s).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// The A–F default course.
    pub fn default_course() -> Self {
        Self::from_toml_str(DEFAULT_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn v_ref(&self) -> f64 {
        self.v_ref_kmh / 3.6
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Scenario(m));
        if !(self.v_ref_kmh > 0.0 && self.delay_only_kmh > 0.0) {
            return bad("speeds must be positive".into());
        }
        if !(self.run_out >= 0.0) {
            return bad("run_out must be >= 0".into());
        }
        if self.sections.is_empty() {
            return bad("at least one section is required".into());
        }
        self.channel
            .validate()
            .map_err(|e| HarnessError::Scenario(e.to_string()))?;
        self.vehicle
            .validate()
            .map_err(|e| HarnessError::Scenario(e.to_string()))?;
        for (i, s) in self.sections.iter().enumerate() {
            if s.label.is_empty() || self.sections[..i].iter().any(|o| o.label == s.label) {
                return bad(format!("section label `{}` is empty or repeated", s.label));
            }
            if s.segments.is_empty() {
                return bad(format!("section `{}` has no segments", s.label));
            }
            let d = Disturbance {
                mu_road: s.mu_road,
                wind_speed: s.wind_speed,
                wind_bearing: s.wind_bearing,
            };
            if !d.is_valid() || !(s.mu_cons > 0.0 && s.mu_cons <= 1.2) {
                return bad(format!("section `{}` has invalid road, wind or mu_cons", s.label));
            }
            for seg in &s.segments {
                seg.validate()
                    .map_err(|m| HarnessError::Scenario(format!("section `{}`: {m}", s.label)))?;
            }
        }
        Ok(())
    }
}

impl Segment {
    fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            Segment::Straight { length } => length > 0.0,
            Segment::Arc { radius, angle_deg } => radius > 0.0 && angle_deg != 0.0 && angle_deg.is_finite(),
            Segment::Clothoid {
                length,
                curvature_start,
                curvature_end,
            } => length > 0.0 && curvature_start.is_finite() && curvature_end.is_finite(),
            Segment::LaneChange { offset, ramp, hold } => {
                offset.is_finite() && ramp > 0.0 && hold >= 0.0
            }
            Segment::Slalom {
                spacing,
                amplitude,
                gates,
            } => spacing > 0.0 && amplitude.is_finite() && gates >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid segment {self:?}"))
        }
    }

    /// Local samples excluding the start point, ending exactly at the
    /// segment end.
    fn sample(&self) -> Vec<Pose2D> {
        let steps = |len: f64| ((len / SAMPLE_STEP).ceil() as usize).max(1);
        match *self {
            Segment::Straight { length } => {
                let n = steps(length);
                (1..=n).map(|i| Pose2D::new(length * i as f64 / n as f64, 0.0, 0.0)).collect()
            }
            Segment::Arc { radius, angle_deg } => {
                let sweep = angle_deg.to_radians();
                let n = steps(radius * sweep.abs());
                let sign = sweep.signum();
                (1..=n)
                    .map(|i| {
                        let a = sweep * i as f64 / n as f64;
                        Pose2D::new(radius * a.abs().sin(), sign * radius * (1.0 - a.cos()), a)
                    })
                    .collect()
            }
            Segment::Clothoid {
                length,
                curvature_start,
                curvature_end,
            } => {
                // Midpoint-heading chords on a fine grid.
                let n = steps(length) * 4;
                let ds = length / n as f64;
                let heading = |s: f64| curvature_start * s + 0.5 * (curvature_end - curvature_start) * s * s / length;
                let (mut x, mut y) = (0.0, 0.0);
                let mut out = Vec::with_capacity(n / 4);
                for i in 1..=n {
                    let mid = heading((i as f64 - 0.5) * ds);
                    x += ds * mid.cos();
                    y += ds * mid.sin();
                    if i % 4 == 0 {
                        out.push(Pose2D::new(x, y, heading(i as f64 * ds)));
                    }
                }
                out
            }
            Segment::LaneChange { offset, ramp, hold } => {
                let total = 2.0 * ramp + hold;
                let shape = move |u: f64| -> (f64, f64) {
                    if u < ramp {
                        let w = PI * u / ramp;
                        (0.5 * offset * (1.0 - w.cos()), 0.5 * offset * PI / ramp * w.sin())
                    } else if u <= ramp + hold {
                        (offset, 0.0)
                    } else {
                        let w = PI * (u - ramp - hold) / ramp;
                        (0.5 * offset * (1.0 + w.cos()), -0.5 * offset * PI / ramp * w.sin())
                    }
                };
                offset_curve(total, shape, steps(total))
            }
            Segment::Slalom {
                spacing,
                amplitude,
                gates,
            } => {
                let total = spacing * (gates as f64 + 1.0);
                let smooth = |q: f64| -> (f64, f64) {
                    let q = q.clamp(0.0, 1.0);
                    (q * q * (3.0 - 2.0 * q), 6.0 * q * (1.0 - q))
                };
                let shape = move |u: f64| -> (f64, f64) {
                    let (h1, dh1) = smooth(u / spacing);
                    let (h2, dh2) = smooth((total - u) / spacing);
                    let w = PI * u / spacing;
                    let taper = h1 * h2;
                    let dtaper = dh1 / spacing * h2 - h1 * dh2 / spacing;
                    (
                        amplitude * w.sin() * taper,
                        amplitude * (PI / spacing * w.cos() * taper + w.sin() * dtaper),
                    )
                };
                offset_curve(total, shape, steps(total))
            }
        }
    }
}

/// Samples `y = f(u)` for `u ∈ (0, length]`, heading from `f′`.
fn offset_curve(length: f64, f: impl Fn(f64) -> (f64, f64), n: usize) -> Vec<Pose2D> {
    (1..=n)
        .map(|i| {
            let u = length * i as f64 / n as f64;
            let (y, dy) = f(u);
            Pose2D::new(u, y, dy.atan())
        })
        .collect()
}

/// Reference path plus the arc-length bounds of each section.
#[derive(Debug, Clone)]
pub struct Reference {
    pub path: Trajectory,
    pub regions: Vec<RegionBounds>,
    /// Per-region road and wind conditions, same order as `regions`.
    pub conditions: Vec<(Disturbance, f64)>,
}

impl Reference {
    /// Index of the region containing arc length `d`.
    pub fn region_at(&self, d: f64) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(d))
    }

    /// Road/wind and operator friction at arc length `d`; the run-out uses
    /// the last section's values.
    pub fn conditions_at(&self, d: f64) -> (Disturbance, f64) {
        let i = self.region_at(d).unwrap_or(if d < 0.0 { 0 } else { self.regions.len() - 1 });
        self.conditions[i]
    }
}

pub fn build_reference(config: &ScenarioConfig) -> Result<Reference, HarnessError> {
    config.validate()?;
    let mut poses = vec![Pose2D::new(0.0, 0.0, 0.0)];
    // Unwrapped heading so local headings add without wrapping artefacts.
    let mut heading = 0.0;
    let mut section_starts = Vec::with_capacity(config.sections.len() + 1);
    let append = |poses: &mut Vec<Pose2D>, heading: &mut f64, seg: &Segment| {
        let origin = *poses.last().expect("non-empty");
        let frame = Pose2D { psi: *heading, ..origin };
        let samples = seg.sample();
        let end_psi = samples.last().map_or(0.0, |p| p.psi);
        for p in samples {
            let g = frame.to_global(&p);
            poses.push(g);
        }
        *heading += match *seg {
            Segment::Arc { angle_deg, .. } => angle_deg.to_radians(),
            Segment::Clothoid {
                length,
                curvature_start,
                curvature_end,
            } => 0.5 * (curvature_start + curvature_end) * length,
            _ => end_psi,
        };
    };
    for sec in &config.sections {
        section_starts.push(poses.len() - 1);
        for seg in &sec.segments {
            append(&mut poses, &mut heading, seg);
        }
    }
    section_starts.push(poses.len() - 1);
    if config.run_out > 0.0 {
        append(&mut poses, &mut heading, &Segment::Straight { length: config.run_out });
    }
    for (i, w) in poses.windows(2).enumerate() {
        if normalize_angle(w[1].psi - w[0].psi).abs() > MAX_HEADING_JUMP {
            return Err(HarnessError::Scenario(format!(
                "reference heading jumps by more than {MAX_HEADING_JUMP} rad at sample {}",
                i + 1
            )));
        }
    }
    let path = Trajectory::from_poses(&poses).map_err(|e| HarnessError::Scenario(e.to_string()))?;
    let s_at = |i: usize| path.points()[i].s;
    let regions = config
        .sections
        .iter()
        .enumerate()
        .map(|(k, sec)| RegionBounds {
            label: sec.label.clone(),
            start: s_at(section_starts[k]),
            end: s_at(section_starts[k + 1]),
        })
        .collect();
    let conditions = config
        .sections
        .iter()
        .map(|s| {
            (
                Disturbance {
                    mu_road: s.mu_road,
                    wind_speed: s.wind_speed,
                    wind_bearing: s.wind_bearing,
                },
                s.mu_cons,
            )
        })
        .collect();
    Ok(Reference {
        path,
        regions,
        conditions,
    })
}
