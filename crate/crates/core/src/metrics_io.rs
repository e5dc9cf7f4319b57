//! Deflection metrics and CSV serialization of logs, packet traces and
//! comparison reports.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay_channel::Packet;
use crate::geometry::Pose2D;
use crate::trajectory::Trajectory;

pub const LOG_HEADER: &str = "# teleop-sim log v1";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("region `{label}` has no samples")]
    NoSamples { label: String },
    #[error("region `{label}` has non-increasing bounds")]
    BadRegion { label: String },
    #[error("unsupported log version: expected `{expected}`, found `{found}`")]
    Version { expected: &'static str, found: String },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBounds {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

impl RegionBounds {
    pub fn contains(&self, d: f64) -> bool {
        d >= self.start && d < self.end
    }
}

/// Signed lateral deflection of the CG (positive left of the path) and the
/// arc length of its projection.
pub fn cross_track(pose: &Pose2D, path: &Trajectory) -> (f64, f64) {
    let p = path.project(pose.x, pose.y);
    (p.lateral, p.s)
}

/// One per-tick log row. Optional fields serialize as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    #[serde(rename = "V")]
    pub v: f64,
    pub beta: f64,
    #[serde(rename = "yawrate")]
    pub yaw_rate: f64,
    pub delta: f64,
    pub mode: String,
    pub section: String,
    #[serde(rename = "dY")]
    pub dy: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub obs_seq: Option<u64>,
    pub obs_age: Option<f64>,
    pub cmd1: f64,
    pub cmd2: f64,
    pub nmpc_ms: Option<f64>,
    pub nmpc_iters: Option<usize>,
    pub nmpc_status: Option<String>,
}

/// `√(1/(D₁−D₀) ∫ ΔY² dD)` over rows whose `D` lies in the region, by the
/// trapezoid rule on arc-length-sorted samples. The outermost samples are
/// held constant to the region bounds.
pub fn rms_deflection(rows: &[(f64, f64)], region: &RegionBounds) -> Result<f64, MetricsError> {
    if !(region.end > region.start) {
        return Err(MetricsError::BadRegion {
            label: region.label.clone(),
        });
    }
    let mut pts: Vec<(f64, f64)> = rows.iter().copied().filter(|(d, _)| region.contains(*d)).collect();
    if pts.len() < 2 {
        return Err(MetricsError::NoSamples {
            label: region.label.clone(),
        });
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Hold the end values out to the region bounds.
    let (first, last) = (pts[0], pts[pts.len() - 1]);
    if first.0 > region.start {
        pts.insert(0, (region.start, first.1));
    }
    if last.0 < region.end {
        pts.push((region.end, last.1));
    }
    let integral: f64 = pts
        .windows(2)
        .map(|w| 0.5 * (w[0].1 * w[0].1 + w[1].1 * w[1].1) * (w[1].0 - w[0].0))
        .sum();
    Ok((integral / (region.end - region.start)).sqrt())
}

/// [`rms_deflection`] on the `(D, dY)` columns of a log.
pub fn rms_for_log(rows: &[LogRow], region: &RegionBounds) -> Result<f64, MetricsError> {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.d, r.dy)).collect();
    rms_deflection(&pts, region)
}

pub fn write_log<W: Write>(mut out: W, rows: &[LogRow]) -> Result<(), MetricsError> {
    writeln!(out, "{LOG_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record([
            "t", "x", "y", "psi", "V", "beta", "yawrate", "delta", "mode", "section", "dY", "D",
            "obs_seq", "obs_age", "cmd1", "cmd2", "nmpc_ms", "nmpc_iters", "nmpc_status",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log<R: Read>(input: R) -> Result<Vec<LogRow>, MetricsError> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let first = first.trim_end();
    if first != LOG_HEADER {
        return Err(MetricsError::Version {
            expected: LOG_HEADER,
            found: first.to_string(),
        });
    }
    let mut csv = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for rec in csv.deserialize() {
        let row: LogRow = rec.map_err(|e| row_error(&e, 1))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Maps a csv error to the file line, accounting for `skipped` lines read
/// before the csv reader started.
fn row_error(e: &csv::Error, skipped: u64) -> MetricsError {
    let line = e.position().map_or(0, |p| p.line() + skipped);
    let message = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        other => format!("{other:?}"),
    };
    MetricsError::Row { line, message }
}

pub fn write_log_file(path: &Path, rows: &[LogRow]) -> Result<(), MetricsError> {
    write_log(std::io::BufWriter::new(File::create(path)?), rows)
}

pub fn read_log_file(path: &Path) -> Result<Vec<LogRow>, MetricsError> {
    read_log(File::open(path)?)
}

/// Columnar data for external plotting, one `(name, csv)` pair per table:
/// the driven path, deflection over arc length, and the speed and steering
/// signals over time.
pub fn plot_tables(rows: &[LogRow]) -> Vec<(&'static str, String)> {
    let mut path = String::from("mode,section,x,y\n");
    let mut deflection = String::from("mode,section,D,dY\n");
    let mut signals = String::from("mode,t,V_kmh,delta_deg,cmd1,cmd2\n");
    for r in rows {
        let _ = writeln!(path, "{},{},{},{}", r.mode, r.section, r.x, r.y);
        let _ = writeln!(deflection, "{},{},{},{}", r.mode, r.section, r.d, r.dy);
        let _ = writeln!(
            signals,
            "{},{},{},{},{},{}",
            r.mode,
            r.t,
            r.v * 3.6,
            r.delta.to_degrees(),
            r.cmd1,
            r.cmd2
        );
    }
    vec![("path", path), ("deflection", deflection), ("signals", signals)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceRow {
    seq: u64,
    departure_s: f64,
    delay_s: f64,
    arrival_s: f64,
    payload_id: u64,
}

/// Packet trace with columns `seq,departure_s,delay_s,arrival_s,payload_id`.
pub fn read_packet_trace<R: Read>(input: R) -> Result<Vec<Packet<u64>>, MetricsError> {
    let mut csv = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in csv.deserialize() {
        let r: TraceRow = rec.map_err(|e| row_error(&e, 0))?;
        let p = Packet::new(r.seq, r.payload_id, r.departure_s, r.delay_s);
        if (p.arrival - r.arrival_s).abs() > 1e-9 {
            return Err(MetricsError::Row {
                line: out.len() as u64 + 2,
                message: format!(
                    "arrival {} does not equal departure + delay = {}",
                    r.arrival_s, p.arrival
                ),
            });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_packet_trace<W: Write>(out: W, packets: &[Packet<u64>]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    for p in packets {
        w.serialize(TraceRow {
            seq: p.seq,
            departure_s: p.departure,
            delay_s: p.delay,
            arrival_s: p.arrival,
            payload_id: p.payload,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// RMS deflection per section (columns) and mode (rows).
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub sections: Vec<String>,
    pub modes: Vec<String>,
    /// `rms[mode][section]`; NaN where a section has no samples.
    pub rms: Vec<Vec<f64>>,
}

impl ComparisonReport {
    pub fn get(&self, mode: &str, section: &str) -> Option<f64> {
        let m = self.modes.iter().position(|x| x == mode)?;
        let s = self.sections.iter().position(|x| x == section)?;
        Some(self.rms[m][s])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("section,mode,rms_dy_m\n");
        for (m, mode) in self.modes.iter().enumerate() {
            for (k, sec) in self.sections.iter().enumerate() {
                let _ = writeln!(s, "{sec},{mode},{}", self.rms[m][k]);
            }
        }
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.modes.iter().map(|m| m.len()).max().unwrap_or(4).max(4);
        let mut s = format!("{:<width$}", "mode");
        for sec in &self.sections {
            let _ = write!(s, " {sec:>9}");
        }
        s.push('\n');
        for (m, mode) in self.modes.iter().enumerate() {
            let _ = write!(s, "{mode:<width$}");
            for v in &self.rms[m] {
                let _ = write!(s, " {v:>9.4}");
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn region(a: f64, b: f64) -> RegionBounds {
        RegionBounds {
            label: "R".into(),
            start: a,
            end: b,
        }
    }

    #[test]
    fn constant_and_zero_deflection() {
        let pts: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64 * 0.1, 0.2)).collect();
        assert!((rms_deflection(&pts, &region(0.0, 10.0)).unwrap() - 0.2).abs() < 1e-3);
        let zero: Vec<(f64, f64)> = pts.iter().map(|(d, _)| (*d, 0.0)).collect();
        assert_eq!(rms_deflection(&zero, &region(0.0, 10.0)).unwrap(), 0.0);
    }

    #[test]
    fn sine_deflection() {
        let n = (2.0 * PI / 0.01) as usize;
        let pts: Vec<(f64, f64)> = (0..=n).map(|i| (i as f64 * 0.01, (i as f64 * 0.01).sin())).collect();
        let r = rms_deflection(&pts, &region(0.0, 2.0 * PI)).unwrap();
        assert!((r - 0.5f64.sqrt()).abs() < 1e-3, "{r}");
    }

    #[test]
    fn unsorted_and_denser_samples_agree() {
        let coarse: Vec<(f64, f64)> = (0..=200).rev().map(|i| (i as f64 * 0.05, (i as f64 * 0.05).cos())).collect();
        let fine: Vec<(f64, f64)> = (0..=400).map(|i| (i as f64 * 0.025, (i as f64 * 0.025).cos())).collect();
        let r = region(0.0, 10.0);
        let a = rms_deflection(&coarse, &r).unwrap();
        let b = rms_deflection(&fine, &r).unwrap();
        assert!((a - b).abs() / b < 1e-3);
    }

    #[test]
    fn empty_region_is_an_error() {
        let pts = vec![(0.0, 1.0), (1.0, 1.0)];
        let err = rms_deflection(&pts, &region(5.0, 6.0)).unwrap_err();
        assert_eq!(err.to_string(), "region `R` has no samples");
    }

    fn row(t: f64) -> LogRow {
        LogRow {
            t,
            x: 1.0 / 3.0,
            y: -2.5e-7,
            psi: 0.1,
            v: 5.555555555555555,
            beta: 0.0,
            yaw_rate: 1e-300,
            delta: -0.0123,
            mode: "srpt".into(),
            section: "C".into(),
            dy: 0.01,
            d: 12.5,
            obs_seq: if t > 0.0 { Some(4) } else { None },
            obs_age: if t > 0.0 { Some(0.2123) } else { None },
            cmd1: 0.1,
            cmd2: -0.2,
            nmpc_ms: None,
            nmpc_iters: Some(3),
            nmpc_status: Some("converged".into()),
        }
    }

    #[test]
    fn plot_tables_have_one_line_per_row() {
        let rows = [row(0.0), row(0.01)];
        let tables = plot_tables(&rows);
        assert_eq!(tables.len(), 3);
        for (name, csv) in &tables {
            assert_eq!(csv.lines().count(), 3, "{name}");
        }
        let signals = &tables[2].1;
        assert!(signals.lines().nth(1).unwrap().starts_with("srpt,0,20"));
    }

    #[test]
    fn log_round_trip() {
        let rows = vec![row(0.0), row(0.01), row(0.02)];
        let mut buf = Vec::new();
        write_log(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# teleop-sim log v1\nt,x,y,psi,V,beta,yawrate,delta,mode,section,dY,D,obs_seq,obs_age,cmd1,cmd2,nmpc_ms,nmpc_iters,nmpc_status\n"));
        assert_eq!(read_log(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let err = read_log("# teleop-sim log v0\nt\n".as_bytes()).unwrap_err();
        assert!(matches!(err, MetricsError::Version { .. }));
    }

    #[test]
    fn malformed_row_names_line() {
        let rows = vec![row(0.0), row(0.01)];
        let mut buf = Vec::new();
        write_log(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen("\n0.01,", "\nzero,", 1);
        let err = read_log(text.as_bytes()).unwrap_err();
        match err {
            MetricsError::Row { line, .. } => assert_eq!(line, 4),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn cross_track_examples() {
        let poses: Vec<Pose2D> = (0..=100).map(|i| Pose2D::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let path = Trajectory::from_poses(&poses).unwrap();
        let (dy, d) = cross_track(&Pose2D::new(5.0, 0.3, 0.0), &path);
        assert!((dy - 0.3).abs() < 1e-12 && (d - 5.0).abs() < 1e-12);
        assert_eq!(cross_track(&Pose2D::new(2.0, 0.0, 0.0), &path).0, 0.0);

        let r = 20.0;
        let arc: Vec<Pose2D> = (0..=400)
            .map(|i| {
                let a = i as f64 * (PI / 2.0) / 400.0;
                Pose2D::new(r * a.sin(), r * (1.0 - a.cos()), a)
            })
            .collect();
        let path = Trajectory::from_poses(&arc).unwrap();
        let b: f64 = 0.6;
        let outer = Pose2D::new(20.5 * b.sin(), r - 20.5 * b.cos(), b);
        let (dy, _) = cross_track(&outer, &path);
        assert!((dy.abs() - 0.5).abs() < 1e-3 && dy < 0.0, "{dy}");
    }

    #[test]
    fn report_formats() {
        let rep = ComparisonReport {
            sections: vec!["A".into(), "B".into()],
            modes: vec!["smith".into(), "srpt".into()],
            rms: vec![vec![0.1, 0.2], vec![0.05, 0.25]],
        };
        assert_eq!(rep.get("srpt", "B"), Some(0.25));
        assert_eq!(rep.to_csv().lines().count(), 5);
        assert!(rep.to_text().contains("smith"));
    }
}
