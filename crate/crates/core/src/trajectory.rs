//! Dense reference path: positions, headings and cumulative arc length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Pose2D};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory needs at least two points")]
    TooShort,
    #[error("point {index} is non-finite or repeats its predecessor")]
    BadPoint { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    /// Arc length from the first point (m).
    pub s: f64,
}

/// Nearest-point projection onto the polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point.
    pub s: f64,
    /// Signed distance, positive to the left of the path tangent.
    pub lateral: f64,
    /// Index of the segment start.
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<PathPoint>,
}

impl Trajectory {
    /// Builds from positions and headings; arc length is the cumulative
    /// chord length.
    pub fn from_poses(poses: &[Pose2D]) -> Result<Self, TrajectoryError> {
        if poses.len() < 2 {
            return Err(TrajectoryError::TooShort);
        }
        let mut points = Vec::with_capacity(poses.len());
        let mut s = 0.0;
        for (i, p) in poses.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.psi.is_finite()) {
                return Err(TrajectoryError::BadPoint { index: i });
            }
            if i > 0 {
                let prev = &poses[i - 1];
                let ds = (p.x - prev.x).hypot(p.y - prev.y);
                if ds <= 0.0 {
                    return Err(TrajectoryError::BadPoint { index: i });
                }
                s += ds;
            }
            points.push(PathPoint {
                x: p.x,
                y: p.y,
                psi: p.psi,
                s,
            });
        }
        Ok(Trajectory { points })
    }

    pub fn points(&self) -> &[PathPoint] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.s)
    }

    pub fn start(&self) -> Pose2D {
        let p = self.points[0];
        Pose2D::new(p.x, p.y, p.psi)
    }

    pub fn end(&self) -> Pose2D {
        let p = self.points[self.points.len() - 1];
        Pose2D::new(p.x, p.y, p.psi)
    }

    fn segment_at(&self, s: f64) -> usize {
        let i = self.points.partition_point(|p| p.s <= s);
        i.saturating_sub(1).min(self.points.len() - 2)
    }

    /// Pose at arc length `s`, clamped to the ends. Position is linear along
    /// the segment; heading is interpolated along the shorter arc.
    pub fn pose_at(&self, s: f64) -> Pose2D {
        if s <= 0.0 {
            return self.start();
        }
        if s >= self.length() {
            return self.end();
        }
        let i = self.segment_at(s);
        let (a, b) = (&self.points[i], &self.points[i + 1]);
        let t = (s - a.s) / (b.s - a.s);
        Pose2D::new(
            a.x + t * (b.x - a.x),
            a.y + t * (b.y - a.y),
            a.psi + t * normalize_angle(b.psi - a.psi),
        )
    }

    /// Nearest point over all segments; ties go to the smaller arc length.
    pub fn project(&self, x: f64, y: f64) -> Projection {
        self.project_range(x, y, 0, self.points.len() - 1)
    }

    /// Nearest point restricted to segments whose arc length overlaps
    /// `[s_lo, s_hi]`.
    pub fn project_window(&self, x: f64, y: f64, s_lo: f64, s_hi: f64) -> Projection {
        let lo = self.segment_at(s_lo.max(0.0));
        let hi = (self.segment_at(s_hi.min(self.length())) + 1).min(self.points.len() - 1);
        self.project_range(x, y, lo, hi.max(lo + 1))
    }

    fn project_range(&self, x: f64, y: f64, lo: usize, hi: usize) -> Projection {
        let mut best = Projection {
            s: 0.0,
            lateral: f64::INFINITY,
            segment: lo,
        };
        let mut best_d2 = f64::INFINITY;
        for i in lo..hi {
            let (a, b) = (&self.points[i], &self.points[i + 1]);
            let (ex, ey) = (b.x - a.x, b.y - a.y);
            let len2 = ex * ex + ey * ey;
            let t = (((x - a.x) * ex + (y - a.y) * ey) / len2).clamp(0.0, 1.0);
            let (fx, fy) = (a.x + t * ex, a.y + t * ey);
            let d2 = (x - fx).powi(2) + (y - fy).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                let len = len2.sqrt();
                let cross = (ex * (y - a.y) - ey * (x - a.x)) / len;
                let dist = d2.sqrt();
                best = Projection {
                    s: a.s + t * len,
                    lateral: if cross < 0.0 { -dist } else { dist },
                    segment: i,
                };
            }
        }
        best
    }
}
