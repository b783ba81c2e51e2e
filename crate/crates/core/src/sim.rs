//! Closed-loop episodes: 1 kHz plant, control-rate planner and NMPC, true
//! directional channel, and the log/metrics/plot-data files they produce.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::nmpc::{shift_warm_start, solve_ocp, NmpcError, OcpSolution, StageReference};
use crate::radio::{end_to_end_capacity, JammerNode, RadioError, RadioScene};
use crate::scenario::{
    inspection_trajectory, jammer_power_at, known_jammer_power, ExpansionPoint, ReferenceMode, ScenarioConfig,
    ScenarioError, SourceTrajectory, Workspace,
};
use crate::trajgen::{clip_to_trust_region, kappa, regularize, relay_reference, surrogate_at, Regularization, RelayReference, TrajgenError};
use crate::vehicle::{step_plant, ControlInput, VehicleError, VehicleState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("episode aborted at t = {time} s: {reason}")]
    Aborted {
        time: f64,
        reason: String,
        /// Rows logged before the failure, with a diagnostic trailer.
        partial: Box<SimLog>,
    },
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("log format: {0}")]
    Format(String),
    #[error("baseline is not time-aligned with the log: {0}")]
    Alignment(String),
    #[error("empty log")]
    EmptyLog,
}

impl SimError {
    /// True for failures of the solver stack rather than of the inputs.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, SimError::Aborted { .. })
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SimError {
    SimError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// How the planner prepared the surrogate at one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegularizationCode {
    #[default]
    Unchanged = 0,
    Perturbed = 1,
    Shifted = 2,
    /// No planner ran (held reference).
    None = 3,
}

impl RegularizationCode {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Unchanged,
            1 => Self::Perturbed,
            2 => Self::Shifted,
            3 => Self::None,
            _ => return None,
        })
    }
}

/// One control tick. Channel quantities are evaluated at the logged state;
/// `rotor_accels` is the input commanded over the following period.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimRow {
    pub t: f64,
    pub position: Vector3<f64>,
    pub euler: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub body_rates: Vector3<f64>,
    pub rotor_speeds: Vec<f64>,
    pub rotor_accels: Vec<f64>,
    pub ref_position: Vector3<f64>,
    pub ref_velocity: Vector3<f64>,
    pub ref_acceleration: Vector3<f64>,
    pub source_position: Vector3<f64>,
    pub misalign_12: f64,
    pub misalign_10: f64,
    pub slack_min: f64,
    pub slack_max: f64,
    pub sinr_21: f64,
    pub sinr_10: f64,
    pub eff_21: f64,
    pub eff_10: f64,
    pub capacity: f64,
    pub jammer_power: f64,
    pub jammer_power_known: f64,
    pub sqp_iterations: usize,
    pub qp_iterations: usize,
    pub kkt_residual: f64,
    pub max_defect: f64,
    pub regularization: RegularizationCode,
}

/// Episode record. `solve_times` is kept apart from the rows so that the
/// exported log is reproducible bit for bit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimLog {
    pub rotor_count: usize,
    pub bandwidth: f64,
    pub rows: Vec<SimRow>,
    /// NMPC wall time per row (s).
    pub solve_times: Vec<f64>,
    pub trailer: Option<String>,
}

impl SimLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn median_solve_time(&self) -> Option<f64> {
        if self.solve_times.is_empty() {
            return None;
        }
        let mut t = self.solve_times.clone();
        t.sort_by(f64::total_cmp);
        Some(t[t.len() / 2])
    }

    pub fn columns(&self) -> Vec<String> {
        log_columns(self.rotor_count)
    }
}

fn push3(out: &mut Vec<String>, prefix: &str, axes: [&str; 3]) {
    out.extend(axes.iter().map(|a| format!("{prefix}_{a}")));
}

fn log_columns(nu: usize) -> Vec<String> {
    let mut c = vec!["t".to_string()];
    push3(&mut c, "p", ["x", "y", "z"]);
    push3(&mut c, "eta", ["roll", "pitch", "yaw"]);
    push3(&mut c, "v", ["x", "y", "z"]);
    push3(&mut c, "omega", ["x", "y", "z"]);
    c.extend((1..=nu).map(|i| format!("u{i}")));
    c.extend((1..=nu).map(|i| format!("udot{i}")));
    push3(&mut c, "p_ref", ["x", "y", "z"]);
    push3(&mut c, "v_ref", ["x", "y", "z"]);
    push3(&mut c, "a_ref", ["x", "y", "z"]);
    push3(&mut c, "p_src", ["x", "y", "z"]);
    for s in [
        "v12",
        "v10",
        "slack_min",
        "slack_max",
        "sinr_21",
        "sinr_10",
        "eff_21",
        "eff_10",
        "capacity",
        "jammer_power",
        "jammer_power_known",
        "sqp_iters",
        "qp_iters",
        "kkt_residual",
        "max_defect",
        "regularization",
    ] {
        c.push(s.to_string());
    }
    c
}

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

impl SimRow {
    fn record(&self) -> Vec<String> {
        let mut r = vec![fmt(self.t)];
        for v in [&self.position, &self.euler, &self.velocity, &self.body_rates] {
            r.extend(v.iter().map(|&x| fmt(x)));
        }
        r.extend(self.rotor_speeds.iter().map(|&x| fmt(x)));
        r.extend(self.rotor_accels.iter().map(|&x| fmt(x)));
        for v in [&self.ref_position, &self.ref_velocity, &self.ref_acceleration, &self.source_position] {
            r.extend(v.iter().map(|&x| fmt(x)));
        }
        for x in [
            self.misalign_12,
            self.misalign_10,
            self.slack_min,
            self.slack_max,
            self.sinr_21,
            self.sinr_10,
            self.eff_21,
            self.eff_10,
            self.capacity,
            self.jammer_power,
            self.jammer_power_known,
        ] {
            r.push(fmt(x));
        }
        r.push(self.sqp_iterations.to_string());
        r.push(self.qp_iterations.to_string());
        r.push(fmt(self.kkt_residual));
        r.push(fmt(self.max_defect));
        r.push((self.regularization as u8).to_string());
        r
    }

    fn parse(fields: &csv::StringRecord, nu: usize, line: usize) -> Result<Self, SimError> {
        let bad = |i: usize| SimError::Format(format!("line {line}, column {}: not a number", i + 1));
        let f = |i: usize| -> Result<f64, SimError> { fields.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad(i)) };
        let i_ = |i: usize| -> Result<usize, SimError> { fields.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad(i)) };
        let v3 = |i: usize| -> Result<Vector3<f64>, SimError> { Ok(Vector3::new(f(i)?, f(i + 1)?, f(i + 2)?)) };
        let vec_n = |i: usize| -> Result<Vec<f64>, SimError> { (i..i + nu).map(f).collect() };
        let mut at = 13;
        let rotor_speeds = vec_n(at)?;
        at += nu;
        let rotor_accels = vec_n(at)?;
        at += nu;
        let code = i_(at + 27)?;
        Ok(SimRow {
            t: f(0)?,
            position: v3(1)?,
            euler: v3(4)?,
            velocity: v3(7)?,
            body_rates: v3(10)?,
            rotor_speeds,
            rotor_accels,
            ref_position: v3(at)?,
            ref_velocity: v3(at + 3)?,
            ref_acceleration: v3(at + 6)?,
            source_position: v3(at + 9)?,
            misalign_12: f(at + 12)?,
            misalign_10: f(at + 13)?,
            slack_min: f(at + 14)?,
            slack_max: f(at + 15)?,
            sinr_21: f(at + 16)?,
            sinr_10: f(at + 17)?,
            eff_21: f(at + 18)?,
            eff_10: f(at + 19)?,
            capacity: f(at + 20)?,
            jammer_power: f(at + 21)?,
            jammer_power_known: f(at + 22)?,
            sqp_iterations: i_(at + 23)?,
            qp_iterations: i_(at + 24)?,
            kkt_residual: f(at + 25)?,
            max_defect: f(at + 26)?,
            regularization: u8::try_from(code)
                .ok()
                .and_then(RegularizationCode::from_u8)
                .ok_or_else(|| bad(at + 27))?,
        })
    }
}

fn hold_reference(p: Vector3<f64>) -> RelayReference {
    RelayReference {
        position: p,
        velocity: Vector3::zeros(),
        acceleration: Vector3::zeros(),
    }
}

fn start_offset(config: &ScenarioConfig) -> Vector3<f64> {
    let r = config.sim.start_jitter;
    if r == 0.0 {
        return Vector3::zeros();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * r;
        }
    }
}

/// Project a reference into the workspace. Motion along a clamped axis is
/// zeroed.
pub fn clamp_to_workspace(mut r: RelayReference, ws: &Workspace) -> RelayReference {
    for i in 0..3 {
        let p = r.position[i];
        if p < ws.min[i] || p > ws.max[i] {
            r.position[i] = p.clamp(ws.min[i], ws.max[i]);
            r.velocity[i] = 0.0;
            r.acceleration[i] = 0.0;
        }
    }
    r
}

struct Tick {
    refs: Vec<StageReference>,
    code: RegularizationCode,
}

fn planner_tick(
    config: &ScenarioConfig,
    source: &SourceTrajectory,
    expansion_relay: &Vector3<f64>,
    t: f64,
) -> Result<Tick, TrajgenError> {
    let n = config.ocp.horizon_steps;
    let dt = config.ocp.dt;
    let samples: Vec<_> = (0..=n).map(|j| source.sample(t + j as f64 * dt)).collect();
    let stage = |r: RelayReference, src: Vector3<f64>| StageReference {
        position: r.position,
        velocity: r.velocity,
        acceleration: r.acceleration,
        bs_position: config.bs_position,
        source_position: src,
    };
    if config.planner.reference == ReferenceMode::Hold {
        let r = hold_reference(config.relay_start);
        return Ok(Tick {
            refs: samples.iter().map(|s| stage(r, s.position)).collect(),
            code: RegularizationCode::None,
        });
    }
    let params = config.conservative_params(known_jammer_power(config, t));
    let model = surrogate_at(&kappa(expansion_relay, &samples[0].position), &params)?;
    let (model, how) = regularize(model, &params, config.planner.regularize_attempts);
    let code = match how {
        Regularization::Unchanged => RegularizationCode::Unchanged,
        Regularization::Perturbed { .. } => RegularizationCode::Perturbed,
        Regularization::Shifted { .. } => RegularizationCode::Shifted,
    };
    let anchor = model.relay_expansion();
    let refs = samples
        .iter()
        .map(|s| {
            let r = relay_reference(&model, &s.position, &s.velocity, &s.acceleration)?;
            let r = clip_to_trust_region(r, &anchor, config.planner.trust_radius);
            Ok(stage(clamp_to_workspace(r, &config.workspace), s.position))
        })
        .collect::<Result<Vec<_>, TrajgenError>>()?;
    Ok(Tick { refs, code })
}

/// True channel with the relay at `position`, attitude `euler`; the source
/// and base station antennas are level.
pub fn channel_at(
    config: &ScenarioConfig,
    position: &Vector3<f64>,
    euler: &Vector3<f64>,
    source: &Vector3<f64>,
    jammer_power: f64,
) -> Result<crate::radio::ChannelReport, RadioError> {
    let radio = &config.radio;
    RadioScene {
        bs: radio.node(config.bs_position, Vector3::zeros()),
        relay: radio.node(*position, *euler),
        source: radio.node(*source, Vector3::zeros()),
        jammer: JammerNode {
            position: config.jammer_position,
            power: jammer_power,
        },
        bandwidth: radio.bandwidth,
    }
    .evaluate()
}

enum Failure {
    Trajgen(TrajgenError),
    Nmpc(NmpcError),
    Radio(RadioError),
    Vehicle(VehicleError),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Trajgen(e) => write!(f, "planner: {e}"),
            Failure::Nmpc(e) => write!(f, "nmpc: {e}"),
            Failure::Radio(e) => write!(f, "channel: {e}"),
            Failure::Vehicle(e) => write!(f, "plant: {e}"),
        }
    }
}

/// Run one closed-loop episode.
pub fn run_episode(config: &ScenarioConfig) -> Result<SimLog, SimError> {
    config.validate()?;
    let params = config.build_platform().map_err(ScenarioError::from)?;
    let ocp = config.ocp_config(params.gravity);
    let source = inspection_trajectory(config)?;
    let nu = params.rotor_count();
    let substeps = (config.ocp.dt / config.sim.plant_dt).round() as usize;
    let ticks = config.tick_count();

    let mut state = VehicleState::hover(&params, config.relay_start + start_offset(config)).map_err(ScenarioError::from)?;
    let mut expansion = state.position;
    let mut applied = ControlInput::zeros(nu);
    let mut warm: Option<OcpSolution> = None;
    let mut log = SimLog {
        rotor_count: nu,
        bandwidth: config.radio.bandwidth,
        rows: Vec::with_capacity(ticks),
        solve_times: Vec::with_capacity(ticks),
        trailer: None,
    };

    for k in 0..ticks {
        let t = k as f64 * config.ocp.dt;
        let outcome = (|| -> Result<(SimRow, OcpSolution, f64), Failure> {
            let anchor = match config.planner.expansion {
                ExpansionPoint::PreviousReference => expansion,
                ExpansionPoint::Measured => state.position,
            };
            let tick = planner_tick(config, &source, &anchor, t).map_err(Failure::Trajgen)?;
            let clock = Instant::now();
            let sol = solve_ocp(&state, &tick.refs, &applied, &params, &ocp, warm.as_ref()).map_err(Failure::Nmpc)?;
            let elapsed = clock.elapsed().as_secs_f64();
            let src = tick.refs[0].source_position;
            let pj = jammer_power_at(config, t);
            let ch = channel_at(config, &state.position, &state.euler, &src, pj).map_err(Failure::Radio)?;
            let r0 = &tick.refs[0];
            let slacks = &sol.slacks;
            let row = SimRow {
                t,
                position: state.position,
                euler: state.euler,
                velocity: state.velocity,
                body_rates: state.body_rates,
                rotor_speeds: state.rotor_speeds.iter().copied().collect(),
                rotor_accels: sol.first_input().rotor_accels.iter().copied().collect(),
                ref_position: r0.position,
                ref_velocity: r0.velocity,
                ref_acceleration: r0.acceleration,
                source_position: src,
                misalign_12: ch.misalign_12,
                misalign_10: ch.misalign_10,
                slack_min: slacks.iter().copied().fold(f64::INFINITY, f64::min),
                slack_max: slacks.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                sinr_21: ch.link_21.sinr,
                sinr_10: ch.link_10.sinr,
                eff_21: ch.link_21.spectral_efficiency,
                eff_10: ch.link_10.spectral_efficiency,
                capacity: ch.capacity,
                jammer_power: pj,
                jammer_power_known: known_jammer_power(config, t),
                sqp_iterations: sol.sqp_iterations,
                qp_iterations: sol.qp_iterations,
                kkt_residual: sol.kkt_residual,
                max_defect: sol.max_defect,
                regularization: tick.code,
            };
            Ok((row, sol, elapsed))
        })();
        let (row, sol, elapsed) = match outcome {
            Ok(v) => v,
            Err(e) => return Err(abort(log, t, e)),
        };
        expansion = row.ref_position;
        log.rows.push(row);
        log.solve_times.push(elapsed);

        applied = sol.first_input().clone();
        for _ in 0..substeps {
            state = match step_plant(&state, &applied, &params, config.sim.plant_dt) {
                Ok(s) if s.is_finite() => s,
                Ok(_) => return Err(abort(log, t, Failure::Vehicle(VehicleError::NonFinite))),
                Err(e) => return Err(abort(log, t, Failure::Vehicle(e))),
            };
        }
        warm = Some(shift_warm_start(&sol, &params, config.ocp.dt));
    }
    Ok(log)
}

fn abort(mut log: SimLog, time: f64, failure: Failure) -> SimError {
    let reason = failure.to_string();
    log.trailer = Some(format!("aborted at t = {time:?} s after {} rows: {reason}", log.rows.len()));
    SimError::Aborted {
        time,
        reason,
        partial: Box::new(log),
    }
}

/// A maximal run of rows with capacity below the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutageInterval {
    pub start: f64,
    pub end: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub min_capacity: f64,
    pub mean_capacity: f64,
    pub mean_eff_21: f64,
    pub mean_eff_10: f64,
    pub outage_count: usize,
    pub outages: Vec<OutageInterval>,
    /// Largest excursion of rotor speeds or commanded rates outside bounds.
    pub max_bound_violation: f64,
    pub max_position_deviation_vs_baseline: Option<f64>,
}

/// Rotor-speed and rate bounds used by metrics and audits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorBounds {
    pub speed_min: f64,
    pub speed_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
}

impl Default for RotorBounds {
    fn default() -> Self {
        let s = crate::vehicle::HexarotorSpec::default();
        Self {
            speed_min: s.speed_min,
            speed_max: s.speed_max,
            accel_min: s.accel_min,
            accel_max: s.accel_max,
        }
    }
}

impl RotorBounds {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        let s = &config.airframe;
        Self {
            speed_min: s.speed_min,
            speed_max: s.speed_max,
            accel_min: s.accel_min,
            accel_max: s.accel_max,
        }
    }

    /// Amount by which `row` leaves the bounds, 0 inside.
    pub fn violation(&self, row: &SimRow) -> f64 {
        let out = |x: f64, lo: f64, hi: f64| (lo - x).max(x - hi).max(0.0);
        let s = row.rotor_speeds.iter().map(|&u| out(u, self.speed_min, self.speed_max));
        let a = row.rotor_accels.iter().map(|&u| out(u, self.accel_min, self.accel_max));
        s.chain(a).fold(0.0, f64::max)
    }
}

/// Maximal runs of `values[i] < threshold` as index ranges.
pub fn runs_below(values: &[f64], threshold: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in values.iter().enumerate() {
        match (v < threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..values.len());
    }
    out
}

/// Largest position gap over the rows whose timestamps match exactly.
pub fn position_deviation(log: &SimLog, baseline: &SimLog) -> Result<f64, SimError> {
    let n = log.len().min(baseline.len());
    if n == 0 {
        return Err(SimError::Alignment("no common rows".into()));
    }
    let mut worst: f64 = 0.0;
    for (i, (a, b)) in log.rows.iter().zip(&baseline.rows).take(n).enumerate() {
        if a.t.to_bits() != b.t.to_bits() {
            return Err(SimError::Alignment(format!("row {i}: t = {:?} vs {:?}", a.t, b.t)));
        }
        worst = worst.max((a.position - b.position).norm());
    }
    Ok(worst)
}

pub fn compute_metrics(
    log: &SimLog,
    baseline: Option<&SimLog>,
    outage_threshold: f64,
    bounds: &RotorBounds,
) -> Result<Metrics, SimError> {
    if log.is_empty() {
        return Err(SimError::EmptyLog);
    }
    let n = log.len() as f64;
    let cap: Vec<f64> = log.rows.iter().map(|r| r.capacity).collect();
    let mean = |f: fn(&SimRow) -> f64| log.rows.iter().map(f).sum::<f64>() / n;
    let outages: Vec<OutageInterval> = runs_below(&cap, outage_threshold)
        .into_iter()
        .map(|r| OutageInterval {
            start: log.rows[r.start].t,
            end: log.rows[r.end - 1].t,
            rows: r.len(),
        })
        .collect();
    Ok(Metrics {
        min_capacity: cap.iter().copied().fold(f64::INFINITY, f64::min),
        mean_capacity: mean(|r| r.capacity),
        mean_eff_21: mean(|r| r.eff_21),
        mean_eff_10: mean(|r| r.eff_10),
        outage_count: outages.len(),
        outages,
        max_bound_violation: log.rows.iter().map(|r| bounds.violation(r)).fold(0.0, f64::max),
        max_position_deviation_vs_baseline: baseline.map(|b| position_deviation(log, b)).transpose()?,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, SimError> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<(), SimError> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_log_csv(log: &SimLog, path: &Path) -> Result<(), SimError> {
    write_table(path, &log.columns(), log.rows.iter().map(SimRow::record))
}

pub fn read_log_csv(path: &Path) -> Result<SimLog, SimError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = r.headers().map_err(|e| io_err(path, e))?.clone();
    let nu = header.iter().filter(|h| h.starts_with("udot")).count();
    let expected = log_columns(nu);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(SimError::Format(format!("{}: unexpected header", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        rows.push(SimRow::parse(&rec, nu, i + 2)?);
    }
    if rows.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(SimError::Format(format!("{}: time column is not increasing", path.display())));
    }
    Ok(SimLog {
        rotor_count: nu,
        bandwidth: 1.0,
        rows,
        solve_times: Vec::new(),
        trailer: None,
    })
}

pub fn write_metrics_csv(metrics: &Metrics, path: &Path) -> Result<(), SimError> {
    let mut kv = vec![
        ("min_capacity", fmt(metrics.min_capacity)),
        ("mean_capacity", fmt(metrics.mean_capacity)),
        ("mean_eff_21", fmt(metrics.mean_eff_21)),
        ("mean_eff_10", fmt(metrics.mean_eff_10)),
        ("outage_count", metrics.outage_count.to_string()),
        ("max_bound_violation", fmt(metrics.max_bound_violation)),
    ];
    if let Some(d) = metrics.max_position_deviation_vs_baseline {
        kv.push(("max_position_deviation_vs_baseline", fmt(d)));
    }
    write_table(
        path,
        &["key".into(), "value".into()],
        kv.into_iter().map(|(k, v)| vec![k.to_string(), v]),
    )
}

/// Read a `key,value` metrics table.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, String)>, SimError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| io_err(path, e))?;
            Ok((rec.get(0).unwrap_or("").to_string(), rec.get(1).unwrap_or("").to_string()))
        })
        .collect()
}

/// Per-figure series: rotor speeds, misalignment, link/end-to-end capacity,
/// and position deviation when a baseline is supplied.
pub fn write_plotdata(log: &SimLog, baseline: Option<&SimLog>, alignment_floor: f64, dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let nu = log.rotor_count;
    let mut h = vec!["t".to_string()];
    h.extend((1..=nu).map(|i| format!("u{i}")));
    write_table(
        &dir.join("fig5_rotor_speeds.csv"),
        &h,
        log.rows.iter().map(|r| {
            let mut v = vec![fmt(r.t)];
            v.extend(r.rotor_speeds.iter().map(|&x| fmt(x)));
            v
        }),
    )?;
    let h: Vec<String> = ["t", "v12", "v10", "alignment_product", "alignment_floor"].map(String::from).into();
    write_table(
        &dir.join("fig6_misalignment.csv"),
        &h,
        log.rows.iter().map(|r| {
            vec![
                fmt(r.t),
                fmt(r.misalign_12),
                fmt(r.misalign_10),
                fmt((1.0 - r.misalign_12) * (1.0 - r.misalign_10)),
                fmt(alignment_floor),
            ]
        }),
    )?;
    let h: Vec<String> = ["t", "eff_21", "eff_10", "capacity_end_to_end", "jammer_power"].map(String::from).into();
    write_table(
        &dir.join("fig7_capacity.csv"),
        &h,
        log.rows
            .iter()
            .map(|r| vec![fmt(r.t), fmt(r.eff_21), fmt(r.eff_10), fmt(r.capacity), fmt(r.jammer_power)]),
    )?;
    if let Some(b) = baseline {
        position_deviation(log, b)?;
        let h: Vec<String> = ["t", "dx", "dy", "dz", "norm"].map(String::from).into();
        write_table(
            &dir.join("fig8_deviation.csv"),
            &h,
            log.rows.iter().zip(&b.rows).map(|(r, q)| {
                let d = r.position - q.position;
                vec![fmt(r.t), fmt(d.x), fmt(d.y), fmt(d.z), fmt(d.norm())]
            }),
        )?;
    }
    Ok(())
}

/// Write `log.csv`, `metrics.csv`, `timing.csv`, `plotdata/` and, for an
/// aborted run, `diagnostic.txt` into `out_dir`.
pub fn export(
    log: &SimLog,
    metrics: &Metrics,
    baseline: Option<&SimLog>,
    alignment_floor: f64,
    out_dir: &Path,
) -> Result<(), SimError> {
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    write_log_csv(log, &out_dir.join("log.csv"))?;
    write_metrics_csv(metrics, &out_dir.join("metrics.csv"))?;
    write_table(
        &out_dir.join("timing.csv"),
        &["t".into(), "solve_time".into()],
        log.rows.iter().zip(&log.solve_times).map(|(r, &s)| vec![fmt(r.t), fmt(s)]),
    )?;
    write_plotdata(log, baseline, alignment_floor, &out_dir.join("plotdata"))?;
    if let Some(tr) = &log.trailer {
        let p = out_dir.join("diagnostic.txt");
        std::fs::write(&p, format!("{tr}\n")).map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

/// Recompute end-to-end capacity from a row's logged efficiencies.
pub fn row_capacity(row: &SimRow, bandwidth: f64) -> f64 {
    end_to_end_capacity(row.eff_21, row.eff_10, bandwidth)
}
