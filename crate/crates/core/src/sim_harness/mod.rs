//! Closed-loop runs: reference construction, the 10 ms tick loop with the
//! downlink/uplink channels, and the controller stacks for each mode.

mod scenario;

pub use scenario::{build_reference, Reference, ScenarioConfig, Section, Segment, DEFAULT_SCENARIO};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{
    lookahead_select, pi_cruise, smith_feedback, stanley_errors, stanley_steer, CruiseConfig,
    CruiseState, PredictorBuffer, StanleyConfig,
};
use crate::delay_channel::{DelayError, DownlinkSampler, EventChannel, FreshnessGate, Packet, TIME_EPS};
use crate::geometry::Pose2D;
use crate::metrics_io::{cross_track, rms_for_log, ComparisonReport, LogRow, RegionBounds};
use crate::nmpc::{build_ocp, first_input, frame_reset, solve, OcpSolution, SolveStatus, SolverConfig};
use crate::vehicle_models::{
    idx, prediction_dynamics, resistance_feedforward, rk4_step, step_plant, Disturbance, InputVec,
    ModelError, PlantState, StateVec, VehicleParams, VehicleState, MAX_STEER, MAX_STEER_RATE,
};

/// Plant step (s).
pub const TICK: f64 = 0.01;
/// Ticks between onboard NMPC solves (50 Hz).
pub const NMPC_DIVIDER: u64 = 2;
/// Look-ahead horizon added to the delays when selecting SRPT targets (s).
pub const LOOKAHEAD_HORIZON: f64 = 1.0;
/// Adhesion assumed by the Smith predictor's local model.
pub const SMITH_MODEL_ADHESION: f64 = 0.9;
/// Lateral deflection at which a run is abandoned (m).
pub const MAX_DEFLECTION: f64 = 20.0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("channel: {0}")]
    Channel(#[from] DelayError),
    #[error("plant integration failed at t = {t:.2} s: {source}")]
    Plant { t: f64, source: ModelError },
    #[error("compare needs at least two modes")]
    TooFewModes,
    #[error("metrics: {0}")]
    Metrics(#[from] crate::metrics_io::MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Station-side Smith predictor feeding a Stanley operator.
    Smith,
    /// Look-ahead target poses tracked by the onboard NMPC.
    Srpt,
    /// Stanley on the true state, no channel.
    Nodelay,
    /// Stanley on the raw delayed measurement at reduced speed.
    DelayOnly,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Smith, Mode::Srpt, Mode::Nodelay, Mode::DelayOnly];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Smith => "smith",
            Mode::Srpt => "srpt",
            Mode::Nodelay => "nodelay",
            Mode::DelayOnly => "delay-only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected smith, srpt, nodelay or delay-only)"))
    }
}

/// Which dynamics stand in for the vehicle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    /// Saturating tires, adhesion, wind and resistance.
    #[default]
    Augmented,
    /// The prediction model itself at [`SMITH_MODEL_ADHESION`], so the
    /// Smith predictor's local model matches the vehicle exactly.
    Matched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Overrides the scenario's channel seed.
    pub seed: Option<u64>,
    pub plant: PlantKind,
    /// PI cruise control in the Stanley modes; off means zero acceleration
    /// demand.
    pub cruise: bool,
    /// Write solve times into the log. Off by default since wall-clock
    /// timings break byte-identical logs.
    pub record_timing: bool,
    /// Stop after this much simulated time (s).
    pub max_time: Option<f64>,
    pub solver: SolverConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: None,
            plant: PlantKind::Augmented,
            cruise: true,
            record_timing: false,
            max_time: None,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcRecord {
    pub t: f64,
    pub section: String,
    pub status: SolveStatus,
    pub iterations: usize,
    pub solve_ms: f64,
    /// Speed at the end of the predicted horizon.
    pub terminal_speed: f64,
    pub steer_rate: f64,
    /// Commanded acceleration (without the resistance feed-forward).
    pub accel: f64,
    /// Some interval of the horizon sits on a steering-rate bound.
    pub steer_rate_bound_active: bool,
    pub mu_cons: f64,
    pub kkt_residual: f64,
    pub max_violation: f64,
}

/// Station-side Smith predictor sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSample {
    pub t: f64,
    /// Feedback `X_p` shown to the operator.
    pub feedback: StateVec,
    /// Undelayed local model output `X′(t)`.
    pub local: StateVec,
    pub warm_up: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub t: f64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SimLog {
    pub mode: Mode,
    pub seed: u64,
    pub v_ref: f64,
    pub rows: Vec<LogRow>,
    pub regions: Vec<RegionBounds>,
    pub nmpc: Vec<NmpcRecord>,
    pub predictor: Vec<PredictorSample>,
    /// Downlink packets in departure order; payload is the sequence number.
    pub downlink: Vec<Packet<u64>>,
    pub events: Vec<SimEvent>,
    /// The run reached the end of the last section.
    pub completed: bool,
}

impl SimLog {
    pub fn rms(&self, region: &RegionBounds) -> Result<f64, HarnessError> {
        Ok(rms_for_log(&self.rows, region)?)
    }
}

#[derive(Debug, Clone, Copy)]
enum Command {
    Steer(f64),
    Target { pose: Pose2D, mu_cons: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Measurement {
    seq: u64,
    departure: f64,
    state: StateVec,
}

pub fn run(config: &ScenarioConfig, mode: Mode) -> Result<SimLog, HarnessError> {
    run_with(config, mode, &RunOptions::default())
}

fn tick_time(k: u64) -> f64 {
    k as f64 / 100.0
}

/// Steering rate that moves `delta` to `target` within one tick, limited.
fn actuator_rate(delta: f64, target: f64) -> f64 {
    ((target - delta) / TICK).clamp(-MAX_STEER_RATE, MAX_STEER_RATE)
}

fn step_matched(x: &StateVec, u: &InputVec, p: &VehicleParams, t: f64) -> Result<StateVec, HarnessError> {
    let mut next = rk4_step(|x, u| prediction_dynamics(x, u, p, SMITH_MODEL_ADHESION), x, u, TICK)
        .map_err(|source| HarnessError::Plant { t, source })?;
    next[idx::SPEED] = next[idx::SPEED].max(0.0);
    next[idx::DELTA] = next[idx::DELTA].clamp(-MAX_STEER, MAX_STEER);
    Ok(next)
}

/// Station-side local model `P′` driven by the station's own commands.
struct LocalModel {
    x: StateVec,
    buffer: PredictorBuffer,
    params: VehicleParams,
}

impl LocalModel {
    /// Starts `τ₁` in the past at the vehicle's initial state, replaying the
    /// vehicle's initial zero steering command up to `t = 0`.
    fn new(x0: StateVec, params: VehicleParams, tau1: f64, span: f64) -> Result<Self, HarnessError> {
        let lead = (tau1 / TICK).round() as i64;
        let mut m = LocalModel {
            x: x0,
            buffer: PredictorBuffer::for_span(span, TICK),
            params,
        };
        m.buffer.push(-(lead as f64) / 100.0, x0);
        for i in (-lead + 1)..=0 {
            m.advance(0.0, i as f64 / 100.0)?;
        }
        Ok(m)
    }

    fn advance(&mut self, steer_cmd: f64, t_next: f64) -> Result<(), HarnessError> {
        let u = InputVec::new(actuator_rate(self.x[idx::DELTA], steer_cmd), 0.0);
        self.x = step_matched(&self.x, &u, &self.params, t_next)?;
        self.buffer.push(t_next, self.x);
        Ok(())
    }
}

pub fn run_with(config: &ScenarioConfig, mode: Mode, opts: &RunOptions) -> Result<SimLog, HarnessError> {
    let reference = build_reference(config)?;
    let path = &reference.path;
    let params = config.vehicle;
    let mut channel_cfg = config.channel.clone();
    if let Some(seed) = opts.seed {
        channel_cfg.rng_seed = seed;
    }
    let seed = channel_cfg.rng_seed;
    let mut sampler = DownlinkSampler::new(&channel_cfg)?;
    let tau1 = channel_cfg.uplink_delay_s;
    let interval = channel_cfg.sample_interval_s;

    let v_ref = match mode {
        Mode::DelayOnly => config.delay_only_kmh / 3.6,
        _ => config.v_ref(),
    };
    let end_d = reference.regions.last().expect("validated").end;
    let max_time = opts.max_time.unwrap_or(3.0 * end_d / v_ref + 30.0);

    let start = path.start();
    let x0 = VehicleState {
        x: start.x,
        y: start.y,
        psi: start.psi,
        speed: v_ref,
        ..Default::default()
    }
    .to_vector();
    let mut plant = PlantState { x: x0 };
    let mut prev_plant = x0;

    let stanley = StanleyConfig::default();
    let cruise_cfg = CruiseConfig::for_vehicle(&params);
    let mut cruise = CruiseState::default();

    let mut downlink: EventChannel<StateVec> = EventChannel::new();
    let mut uplink: EventChannel<Command> = EventChannel::new();
    let mut next_packet: u64 = 0;
    let mut gate = FreshnessGate::new();
    let mut measurement: Option<Measurement> = None;
    let mut local = match mode {
        Mode::Smith => Some(LocalModel::new(x0, params, tau1, tau1 + 5.0)?),
        _ => None,
    };

    // Vehicle-side command state.
    let mut steer_cmd = 0.0;
    let mut target: Option<(Pose2D, f64)> = None;
    let mut nmpc_input = (0.0, 0.0);
    let mut last_solution: Option<OcpSolution> = None;

    let mut log = SimLog {
        mode,
        seed,
        v_ref,
        rows: Vec::new(),
        regions: reference.regions.clone(),
        nmpc: Vec::new(),
        predictor: Vec::new(),
        downlink: Vec::new(),
        events: Vec::new(),
        completed: false,
    };

    let mut k: u64 = 0;
    loop {
        let t = tick_time(k);

        // Downlink departures up to now, with the state interpolated
        // between the last two ticks.
        if mode != Mode::Nodelay {
            loop {
                let dep = next_packet as f64 * interval;
                if dep > t + TIME_EPS {
                    break;
                }
                let w = if k == 0 { 1.0 } else { ((dep - tick_time(k - 1)) / TICK).clamp(0.0, 1.0) };
                let payload = prev_plant + (plant.x - prev_plant) * w;
                let delay = sampler.next_delay_s();
                let seq = downlink.send(dep, delay, payload);
                log.downlink.push(Packet::new(seq, seq, dep, delay));
                next_packet += 1;
            }
            for p in downlink.poll(t + TIME_EPS)? {
                measurement = Some(Measurement {
                    seq: p.seq,
                    departure: p.departure,
                    state: p.payload,
                });
            }
        }
        let fresh = gate.observe(measurement.map(|m| m.seq));
        let (d_now, dy_now) = {
            let (dy, d) = cross_track(&Pose2D::new(plant.x[idx::X], plant.x[idx::Y], plant.x[idx::PSI]), path);
            (d, dy)
        };

        // Control station.
        match mode {
            Mode::Smith => {
                let lm = local.as_mut().expect("smith mode has a local model");
                let cmd = match measurement {
                    Some(m) => {
                        let age = t - m.departure;
                        let out = smith_feedback(&lm.buffer, &m.state, t, tau1, age);
                        log.predictor.push(PredictorSample {
                            t,
                            feedback: out.state,
                            local: lm.x,
                            warm_up: out.warm_up,
                        });
                        stanley_command(&out.state, path, &params, &stanley)
                    }
                    None => 0.0,
                };
                uplink.send(t, tau1, Command::Steer(cmd));
                lm.advance(cmd, tick_time(k + 1))?;
            }
            Mode::DelayOnly => {
                if fresh {
                    let m = measurement.expect("fresh pulse carries a measurement");
                    let cmd = stanley_command(&m.state, path, &params, &stanley);
                    uplink.send(t, tau1, Command::Steer(cmd));
                }
            }
            Mode::Srpt => {
                if fresh {
                    let m = measurement.expect("fresh pulse carries a measurement");
                    let pose = pose_of(&m.state);
                    let age = t - m.departure;
                    let goal = lookahead_select(path, &pose, m.state[idx::SPEED], age, tau1, LOOKAHEAD_HORIZON);
                    let d_meas = path.project(pose.x, pose.y).s;
                    let d_goal = path.project(goal.x, goal.y).s;
                    let mu_cons = reference.conditions_at(d_meas).1.min(reference.conditions_at(d_goal).1);
                    uplink.send(t, tau1, Command::Target { pose: goal, mu_cons });
                }
            }
            Mode::Nodelay => {
                steer_cmd = stanley_command(&plant.x, path, &params, &stanley);
            }
        }

        // Vehicle.
        if mode != Mode::Nodelay {
            for p in uplink.poll(t + TIME_EPS)? {
                match p.payload {
                    Command::Steer(d) => steer_cmd = d,
                    Command::Target { pose, mu_cons } => target = Some((pose, mu_cons)),
                }
            }
        }
        let section = reference
            .region_at(d_now)
            .map(|i| reference.regions[i].label.clone())
            .unwrap_or_default();
        let v = plant.x[idx::SPEED];
        let mut row_nmpc: (Option<f64>, Option<usize>, Option<String>) = (None, None, None);
        let (u, cmd1, cmd2) = match mode {
            Mode::Srpt => {
                if k.is_multiple_of(NMPC_DIVIDER) {
                    if let Some((goal, mu_cons)) = target {
                        let vs = VehicleState::from_vector(&plant.x);
                        let (local_state, local_goal) = frame_reset(&vs, &goal);
                        let frame = Pose2D::new(vs.x, vs.y, vs.psi);
                        match build_ocp(&local_state, &local_goal, v_ref, mu_cons, &params) {
                            Ok(ocp) => {
                                let ocp = ocp.with_frame(frame);
                                let warm = if opts.solver.warm_start { last_solution.as_ref() } else { None };
                                let sol = solve(&ocp, warm, &opts.solver);
                                match first_input(&sol) {
                                    Ok(ci) => nmpc_input = (ci.steer_rate, ci.accel),
                                    Err(e) => {
                                        nmpc_input.0 = 0.0;
                                        log.events.push(SimEvent {
                                            t,
                                            message: format!("nmpc {e}; holding previous command"),
                                        });
                                    }
                                }
                                let bound = steer_rate_bound_hit(&sol);
                                log.nmpc.push(NmpcRecord {
                                    t,
                                    section: section.clone(),
                                    status: sol.status,
                                    iterations: sol.iterations,
                                    solve_ms: sol.solve_ms,
                                    terminal_speed: sol.states.last().map_or(f64::NAN, |x| x[idx::SPEED]),
                                    steer_rate: nmpc_input.0,
                                    accel: nmpc_input.1,
                                    steer_rate_bound_active: bound,
                                    mu_cons,
                                    kkt_residual: sol.kkt_residual,
                                    max_violation: sol.max_violation,
                                });
                                row_nmpc = (
                                    opts.record_timing.then_some(sol.solve_ms),
                                    Some(sol.iterations),
                                    Some(sol.status.as_str().to_string()),
                                );
                                last_solution = (sol.status != SolveStatus::Diverged).then_some(sol);
                            }
                            Err(e) => {
                                nmpc_input.0 = 0.0;
                                log.events.push(SimEvent {
                                    t,
                                    message: format!("nmpc setup failed: {e}; holding previous command"),
                                });
                            }
                        }
                    }
                }
                let (rate, a) = if target.is_some() { nmpc_input } else { (0.0, 0.0) };
                (
                    InputVec::new(rate, a + resistance_feedforward(v, &params)),
                    rate,
                    a,
                )
            }
            _ => {
                let a = if opts.cruise {
                    pi_cruise(v_ref, v, TICK, &mut cruise, &cruise_cfg, &params)
                } else {
                    0.0
                };
                (
                    InputVec::new(actuator_rate(plant.x[idx::DELTA], steer_cmd), a),
                    steer_cmd,
                    a,
                )
            }
        };

        log.rows.push(LogRow {
            t,
            x: plant.x[idx::X],
            y: plant.x[idx::Y],
            psi: plant.x[idx::PSI],
            v,
            beta: plant.x[idx::BETA],
            yaw_rate: plant.x[idx::YAW_RATE],
            delta: plant.x[idx::DELTA],
            mode: mode.as_str().to_string(),
            section,
            dy: dy_now,
            d: d_now,
            obs_seq: measurement.map(|m| m.seq),
            obs_age: measurement.map(|m| t - m.departure),
            cmd1,
            cmd2,
            nmpc_ms: row_nmpc.0,
            nmpc_iters: row_nmpc.1,
            nmpc_status: row_nmpc.2,
        });

        if d_now >= end_d {
            log.completed = true;
            break;
        }
        if dy_now.abs() > MAX_DEFLECTION {
            log.events.push(SimEvent {
                t,
                message: format!("deflection {dy_now:.2} m exceeds {MAX_DEFLECTION} m; run aborted"),
            });
            break;
        }
        if t >= max_time {
            log.events.push(SimEvent {
                t,
                message: "time limit reached".into(),
            });
            break;
        }

        prev_plant = plant.x;
        plant = match opts.plant {
            PlantKind::Augmented => {
                let (dist, _): (Disturbance, f64) = reference.conditions_at(d_now);
                step_plant(&plant, &u, &params, &dist, &config.plant, TICK)
                    .map_err(|source| HarnessError::Plant { t, source })?
            }
            PlantKind::Matched => PlantState {
                x: step_matched(&plant.x, &u, &params, t)?,
            },
        };
        k += 1;
    }
    Ok(log)
}

fn steer_rate_bound_hit(sol: &OcpSolution) -> bool {
    sol.inputs.iter().any(|u| u[0].abs() >= MAX_STEER_RATE * (1.0 - 1e-3))
}

fn pose_of(x: &StateVec) -> Pose2D {
    Pose2D::new(x[idx::X], x[idx::Y], x[idx::PSI])
}

fn stanley_command(
    x: &StateVec,
    path: &crate::trajectory::Trajectory,
    params: &VehicleParams,
    cfg: &StanleyConfig,
) -> f64 {
    let (psi_rel, e) = stanley_errors(&pose_of(x), params.l_front, path);
    stanley_steer(psi_rel, e, x[idx::SPEED], cfg)
}

/// Runs every mode on the same seed and tabulates per-section RMS
/// deflection.
pub fn compare(
    config: &ScenarioConfig,
    modes: &[Mode],
    opts: &RunOptions,
) -> Result<(ComparisonReport, Vec<SimLog>), HarnessError> {
    if modes.len() < 2 {
        return Err(HarnessError::TooFewModes);
    }
    let logs = modes
        .iter()
        .map(|&m| run_with(config, m, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let regions = build_reference(config)?.regions;
    let rms = logs
        .iter()
        .map(|log| {
            regions
                .iter()
                .map(|r| log.rms(r).unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    let report = ComparisonReport {
        sections: regions.iter().map(|r| r.label.clone()).collect(),
        modes: modes.iter().map(|m| m.as_str().to_string()).collect(),
        rms,
    };
    Ok((report, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("teleport".parse::<Mode>().is_err());
    }

    #[test]
    fn actuator_rate_limits() {
        assert_eq!(actuator_rate(0.0, 1.0), MAX_STEER_RATE);
        assert_eq!(actuator_rate(0.0, -1.0), -MAX_STEER_RATE);
        assert!((actuator_rate(0.0, 1e-4) - 1e-2).abs() < 1e-15);
    }
}
