//! Discrete-time platoon dynamics.
//!
//! Each vehicle is a double integrator discretized exactly under
//! piecewise-constant acceleration:
//!
//! ```text
//! x[k+1] = x[k] + T·v[k] + (T²/2)·u[k]
//! v[k+1] = v[k] + T·u[k]
//! ```
//!
//! Followers run the second-order consensus protocol
//! `u = K_p·L·(r_pos − x) + K_d·L·(r_vel − v)` against references derived
//! from the leader (`r_pos_i = x₀ − i·gap`, `r_vel_i = v₀`), which closes the
//! loop into `z[k+1] = A_k z[k] + B_k r[k]` with one `(A_k, B_k)` pair per
//! active topology.

use std::ops::Range;
use std::path::Path;

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::StatePath;
use crate::topology::{laplacian, PlatoonGraphSpec, TopologyState};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid leader profile: {0}")]
    InvalidProfile(String),
    #[error("topology path has {path_len} entries, horizon needs {horizon}")]
    PathTooShort { path_len: usize, horizon: usize },
    #[error("topology index {index} out of range for {count} modes")]
    ModeIndexOutOfRange { index: usize, count: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Platoon controller and geometry parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonConfig {
    pub n_vehicles: usize,
    /// Sampling time in seconds.
    pub step_s: f64,
    /// Proportional gain (1/s²).
    pub k_p: f64,
    /// Derivative gain (1/s).
    pub k_d: f64,
    /// Desired inter-vehicle spacing in meters.
    pub desired_gap_m: f64,
}

impl Default for PlatoonConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 5,
            step_s: 0.1,
            k_p: 0.5,
            k_d: 1.4,
            desired_gap_m: 50.0,
        }
    }
}

impl PlatoonConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if self.n_vehicles < 2 {
            return Err(DynamicsError::InvalidConfig(format!(
                "need at least 2 vehicles, got {}",
                self.n_vehicles
            )));
        }
        if !(self.step_s > 0.0) {
            return Err(DynamicsError::InvalidConfig(format!(
                "sampling time must be positive, got {}",
                self.step_s
            )));
        }
        if !(self.desired_gap_m > 0.0) {
            return Err(DynamicsError::InvalidConfig(format!(
                "desired gap must be positive, got {}",
                self.desired_gap_m
            )));
        }
        Ok(())
    }

    pub fn follower_count(&self) -> usize {
        self.n_vehicles - 1
    }
}

/// One exact discretization step of the double integrator under constant
/// acceleration `u` over the sampling interval.
pub fn foh_step(x: f64, v: f64, u: f64, t: f64) -> (f64, f64) {
    (x + t * v + 0.5 * t * t * u, v + t * u)
}

/// A piecewise-constant acceleration segment starting at `start_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelPhase {
    pub start_s: f64,
    pub accel_mps2: f64,
}

/// Leader speed profile: an initial speed plus a piecewise-constant
/// acceleration schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderProfile {
    pub initial_speed_mps: f64,
    pub phases: Vec<AccelPhase>,
}

impl LeaderProfile {
    pub fn new(initial_speed_mps: f64, phases: Vec<AccelPhase>) -> Result<Self, DynamicsError> {
        for pair in phases.windows(2) {
            if pair[1].start_s < pair[0].start_s {
                return Err(DynamicsError::InvalidProfile(format!(
                    "phase starts must be nondecreasing ({} after {})",
                    pair[1].start_s, pair[0].start_s
                )));
            }
        }
        Ok(Self {
            initial_speed_mps,
            phases,
        })
    }

    pub fn constant_speed(speed_mps: f64) -> Self {
        Self {
            initial_speed_mps: speed_mps,
            phases: Vec::new(),
        }
    }

    /// Default test maneuver: hold 20 m/s, brake at −1 m/s² to 15 m/s, hold,
    /// accelerate at +1 m/s² to 25 m/s, hold.
    pub fn brake_then_accelerate() -> Self {
        Self {
            initial_speed_mps: 20.0,
            phases: vec![
                AccelPhase {
                    start_s: 5.0,
                    accel_mps2: -1.0,
                },
                AccelPhase {
                    start_s: 10.0,
                    accel_mps2: 0.0,
                },
                AccelPhase {
                    start_s: 15.0,
                    accel_mps2: 1.0,
                },
                AccelPhase {
                    start_s: 25.0,
                    accel_mps2: 0.0,
                },
            ],
        }
    }

    /// Acceleration in force at time `t` (zero before the first phase).
    pub fn accel_at(&self, t: f64) -> f64 {
        let mut accel = 0.0;
        for phase in &self.phases {
            if phase.start_s <= t {
                accel = phase.accel_mps2;
            } else {
                break;
            }
        }
        accel
    }
}

/// Which closed-loop layout to build.
///
/// `Consistent` derives both blocks of the velocity update from the
/// discretized protocol, giving `v' = (I − K_d·T·L)v + …`. The
/// `TimeScaledVelocity` compatibility layout instead uses
/// `v' = (T·I − K_d·T·L)v + …`, i.e. the raw velocity feedthrough scaled by
/// the sampling time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedLoopForm {
    #[default]
    Consistent,
    TimeScaledVelocity,
}

/// Closed-loop matrices of one topology, plus the Laplacian they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub laplacian: Array2<f64>,
}

/// One `(A_k, B_k)` pair per topology state, in topology order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopModeSet {
    modes: Vec<Mode>,
    n_vehicles: usize,
    form: ClosedLoopForm,
}

impl ClosedLoopModeSet {
    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn n_vehicles(&self) -> usize {
        self.n_vehicles
    }

    pub fn form(&self) -> ClosedLoopForm {
        self.form
    }

    /// State dimension `2(N−1)`.
    pub fn state_dim(&self) -> usize {
        2 * (self.n_vehicles - 1)
    }

    pub fn a_matrices(&self) -> Vec<Array2<f64>> {
        self.modes.iter().map(|m| m.a.clone()).collect()
    }
}

/// Builds the closed-loop mode matrices for every topology state.
pub fn build_modes(
    spec: &PlatoonGraphSpec,
    topologies: &[TopologyState],
    config: &PlatoonConfig,
    form: ClosedLoopForm,
) -> Result<ClosedLoopModeSet, DynamicsError> {
    config.validate()?;
    if spec.n_vehicles() != config.n_vehicles {
        return Err(DynamicsError::DimensionMismatch {
            expected: config.n_vehicles,
            got: spec.n_vehicles(),
        });
    }
    let modes = topologies
        .iter()
        .map(|state| mode_from_laplacian(laplacian(state, spec), config, form))
        .collect();
    Ok(ClosedLoopModeSet {
        modes,
        n_vehicles: config.n_vehicles,
        form,
    })
}

/// Builds a single closed-loop mode directly from a follower Laplacian.
pub fn mode_from_laplacian(
    l: Array2<f64>,
    config: &PlatoonConfig,
    form: ClosedLoopForm,
) -> Mode {
    let d = l.nrows();
    let t = config.step_s;
    let cp = 0.5 * config.k_p * t * t;
    let cd = 0.5 * config.k_d * t * t;
    let eye = Array2::<f64>::eye(d);

    let mut a = Array2::<f64>::zeros((2 * d, 2 * d));
    a.slice_mut(s![..d, ..d]).assign(&(&eye - &(cp * &l)));
    a.slice_mut(s![..d, d..]).assign(&(t * &eye - &(cd * &l)));
    a.slice_mut(s![d.., ..d])
        .assign(&(-config.k_p * t * &l));
    let velocity_block = match form {
        ClosedLoopForm::Consistent => &eye - &(config.k_d * t * &l),
        ClosedLoopForm::TimeScaledVelocity => t * &eye - &(config.k_d * t * &l),
    };
    a.slice_mut(s![d.., d..]).assign(&velocity_block);

    let mut b = Array2::<f64>::zeros((2 * d, 2 * d));
    b.slice_mut(s![..d, ..d]).assign(&(cp * &l));
    b.slice_mut(s![..d, d..]).assign(&(cd * &l));
    b.slice_mut(s![d.., ..d]).assign(&(config.k_p * t * &l));
    b.slice_mut(s![d.., d..]).assign(&(config.k_d * t * &l));

    Mode { a, b, laplacian: l }
}

/// Simulation options.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub horizon: usize,
    /// Initial position offsets from the references, one per follower;
    /// `None` starts every follower exactly at its reference.
    pub position_offsets: Option<Vec<f64>>,
    pub leader_initial_position_m: f64,
}

impl SimOptions {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            position_offsets: None,
            leader_initial_position_m: 0.0,
        }
    }
}

/// Full per-step record of a simulated platoon run (vehicle 0 is the
/// leader; follower arrays are `horizon × (N−1)`).
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub step_s: f64,
    pub desired_gap_m: f64,
    pub topology_index: Vec<usize>,
    pub leader_position_m: Vec<f64>,
    pub leader_speed_mps: Vec<f64>,
    pub leader_accel_mps2: Vec<f64>,
    pub follower_position_m: Array2<f64>,
    pub follower_speed_mps: Array2<f64>,
    /// Realized follower accelerations `(v[k+1] − v[k])/T`; equals the
    /// applied consensus input for the consistent closed-loop form.
    pub follower_accel_mps2: Array2<f64>,
    pub ref_position_m: Array2<f64>,
    pub ref_speed_mps: Array2<f64>,
}

impl SimulationTrace {
    pub fn horizon(&self) -> usize {
        self.topology_index.len()
    }

    pub fn n_vehicles(&self) -> usize {
        self.follower_position_m.ncols() + 1
    }

    /// Speeds of all vehicles (leader first) at step `k`.
    pub fn speeds_at(&self, k: usize) -> Vec<f64> {
        let mut speeds = Vec::with_capacity(self.n_vehicles());
        speeds.push(self.leader_speed_mps[k]);
        speeds.extend(self.follower_speed_mps.row(k).iter().copied());
        speeds
    }

    /// Accelerations of all vehicles (leader first) at step `k`.
    pub fn accels_at(&self, k: usize) -> Vec<f64> {
        let mut accels = Vec::with_capacity(self.n_vehicles());
        accels.push(self.leader_accel_mps2[k]);
        accels.extend(self.follower_accel_mps2.row(k).iter().copied());
        accels
    }

    /// Positions of all vehicles (leader first) at step `k`.
    pub fn positions_at(&self, k: usize) -> Vec<f64> {
        let mut positions = Vec::with_capacity(self.n_vehicles());
        positions.push(self.leader_position_m[k]);
        positions.extend(self.follower_position_m.row(k).iter().copied());
        positions
    }

    /// Writes the trace as CSV with header
    /// `step,topology_index,x0,v0,a0,x1,v1,a1,…`. An optional comment line
    /// (for config hash and seed) is emitted first.
    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<(), DynamicsError> {
        let mut text = String::new();
        if let Some(comment) = comment {
            text.push_str("# ");
            text.push_str(comment);
            text.push('\n');
        }
        text.push_str("step,topology_index");
        for i in 0..self.n_vehicles() {
            text.push_str(&format!(",x{i},v{i},a{i}"));
        }
        text.push('\n');
        for k in 0..self.horizon() {
            text.push_str(&format!("{k},{}", self.topology_index[k]));
            let positions = self.positions_at(k);
            let speeds = self.speeds_at(k);
            let accels = self.accels_at(k);
            for i in 0..self.n_vehicles() {
                text.push_str(&format!(",{},{},{}", positions[i], speeds[i], accels[i]));
            }
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| DynamicsError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Simulates the closed loop along a sampled topology path.
///
/// The leader evolves exactly under its acceleration profile; references are
/// rebuilt from the leader state every step, and the follower stack advances
/// by the active mode's `(A, B)` pair.
pub fn simulate(
    config: &PlatoonConfig,
    mode_set: &ClosedLoopModeSet,
    topology_path: &StatePath,
    leader: &LeaderProfile,
    opts: &SimOptions,
) -> Result<SimulationTrace, DynamicsError> {
    config.validate()?;
    let d = config.follower_count();
    if mode_set.state_dim() != 2 * d {
        return Err(DynamicsError::DimensionMismatch {
            expected: 2 * d,
            got: mode_set.state_dim(),
        });
    }
    let horizon = opts.horizon;
    if topology_path.indices.len() < horizon {
        return Err(DynamicsError::PathTooShort {
            path_len: topology_path.indices.len(),
            horizon,
        });
    }
    if let Some(offsets) = &opts.position_offsets {
        if offsets.len() != d {
            return Err(DynamicsError::DimensionMismatch {
                expected: d,
                got: offsets.len(),
            });
        }
    }

    let t = config.step_s;
    let gap = config.desired_gap_m;
    let mut leader_pos = opts.leader_initial_position_m;
    let mut leader_speed = leader.initial_speed_mps;

    // z = [positions; velocities], followers at their references unless
    // perturbed.
    let mut z = Array1::<f64>::zeros(2 * d);
    for fi in 0..d {
        let offset = opts
            .position_offsets
            .as_ref()
            .map(|o| o[fi])
            .unwrap_or(0.0);
        z[fi] = leader_pos - (fi + 1) as f64 * gap + offset;
        z[d + fi] = leader_speed;
    }

    let mut trace = SimulationTrace {
        step_s: t,
        desired_gap_m: gap,
        topology_index: Vec::with_capacity(horizon),
        leader_position_m: Vec::with_capacity(horizon),
        leader_speed_mps: Vec::with_capacity(horizon),
        leader_accel_mps2: Vec::with_capacity(horizon),
        follower_position_m: Array2::zeros((horizon, d)),
        follower_speed_mps: Array2::zeros((horizon, d)),
        follower_accel_mps2: Array2::zeros((horizon, d)),
        ref_position_m: Array2::zeros((horizon, d)),
        ref_speed_mps: Array2::zeros((horizon, d)),
    };

    for k in 0..horizon {
        let mode_index = topology_path.indices[k];
        let mode = mode_set
            .modes
            .get(mode_index)
            .ok_or(DynamicsError::ModeIndexOutOfRange {
                index: mode_index,
                count: mode_set.n_modes(),
            })?;

        let time = k as f64 * t;
        let leader_accel = leader.accel_at(time);

        let mut r = Array1::<f64>::zeros(2 * d);
        for fi in 0..d {
            r[fi] = leader_pos - (fi + 1) as f64 * gap;
            r[d + fi] = leader_speed;
        }

        let z_next = mode.a.dot(&z) + mode.b.dot(&r);

        trace.topology_index.push(mode_index);
        trace.leader_position_m.push(leader_pos);
        trace.leader_speed_mps.push(leader_speed);
        trace.leader_accel_mps2.push(leader_accel);
        for fi in 0..d {
            trace.follower_position_m[[k, fi]] = z[fi];
            trace.follower_speed_mps[[k, fi]] = z[d + fi];
            trace.follower_accel_mps2[[k, fi]] = (z_next[d + fi] - z[d + fi]) / t;
            trace.ref_position_m[[k, fi]] = r[fi];
            trace.ref_speed_mps[[k, fi]] = r[d + fi];
        }

        z = z_next;
        let (p, s) = foh_step(leader_pos, leader_speed, leader_accel, t);
        leader_pos = p;
        leader_speed = s;
    }
    Ok(trace)
}

/// Aggregate performance metrics of a simulated run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    /// Mean over steps and followers of |actual gap − desired gap|.
    pub mean_abs_spacing_error_m: f64,
    /// Mean over steps of (max speed − min speed) across all vehicles.
    pub mean_speed_diff_mps: f64,
    /// Mean over steps of (max accel − min accel) across all vehicles.
    pub mean_accel_diff_mps2: f64,
}

/// Metrics over the full trace.
pub fn metrics(trace: &SimulationTrace, config: &PlatoonConfig) -> MetricsSummary {
    metrics_over(trace, config, 0..trace.horizon())
}

/// Metrics over a step range (e.g. the settled tail of a run).
pub fn metrics_over(
    trace: &SimulationTrace,
    config: &PlatoonConfig,
    range: Range<usize>,
) -> MetricsSummary {
    let steps = range.len();
    if steps == 0 {
        return MetricsSummary {
            mean_abs_spacing_error_m: 0.0,
            mean_speed_diff_mps: 0.0,
            mean_accel_diff_mps2: 0.0,
        };
    }
    let followers = trace.n_vehicles() - 1;
    let mut spacing_sum = 0.0;
    let mut speed_sum = 0.0;
    let mut accel_sum = 0.0;
    for k in range.clone() {
        let positions = trace.positions_at(k);
        for i in 1..positions.len() {
            let gap = positions[i - 1] - positions[i];
            spacing_sum += (gap - config.desired_gap_m).abs();
        }
        let speeds = trace.speeds_at(k);
        speed_sum += spread(&speeds);
        let accels = trace.accels_at(k);
        accel_sum += spread(&accels);
    }
    MetricsSummary {
        mean_abs_spacing_error_m: spacing_sum / (steps * followers) as f64,
        mean_speed_diff_mps: speed_sum / steps as f64,
        mean_accel_diff_mps2: accel_sum / steps as f64,
    }
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}
