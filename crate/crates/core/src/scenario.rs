//! Declarative scenarios: node placement, platform, jammer schedule and
//! knowledge gate, the source's inspection path, and solver settings.
//!
//! Scenario files are TOML. Every key is optional; omitted keys take the
//! reference-experiment values. Unknown keys are rejected.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nmpc::{DirectionMode, OcpConfig};
use crate::radio::RadioParams;
use crate::trajgen::ConservativeParams;
use crate::vehicle::{build_hexarotor, HexarotorSpec, MravParams, RotorLayout, VehicleError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario field `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("platform: {0}")]
    Platform(#[from] VehicleError),
}

fn invalid<T>(field: &str, reason: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Validation {
        field: field.to_string(),
        reason: reason.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    #[default]
    Constrained,
    Unconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum JammerSchedule {
    #[default]
    AlwaysOn,
    OnOff { period_on: f64, period_off: f64 },
}

impl JammerSchedule {
    pub fn default_on_off() -> Self {
        JammerSchedule::OnOff {
            period_on: 5.0,
            period_off: 5.0,
        }
    }
}

/// Axis-aligned box every node and waypoint must stay in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Workspace {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            min: Vector3::new(-10.0, -6.0, 0.0),
            max: Vector3::new(4.0, 6.0, 19.0),
        }
    }
}

impl Workspace {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// How the source moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceMotion {
    /// Climb to a mid-height station, then to the insulator region.
    #[default]
    Inspection,
    /// Stay at `source_start`.
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceSettings {
    pub motion: SourceMotion,
    /// Height of the first inspection station (m).
    pub mid_height: f64,
    /// Height of the insulator region (m).
    pub top_height: f64,
    /// Horizontal sweep along the insulators (m).
    pub lateral_extent: f64,
    /// Time to complete the inspection (s); the source then hovers.
    pub period: f64,
}

impl Default for SourceSettings {
    fn default() -> Self {
        Self {
            motion: SourceMotion::Inspection,
            mid_height: 9.0,
            top_height: 18.0,
            lateral_extent: 2.5,
            period: 47.0,
        }
    }
}

/// Where relay references come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Surrogate minimiser re-expanded every control tick.
    #[default]
    Planner,
    /// Hold `relay_start` at rest.
    Hold,
}

/// Relay position at which the surrogate is expanded each tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionPoint {
    /// The planner's own previous position reference.
    #[default]
    PreviousReference,
    /// The measured relay position.
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSettings {
    pub reference: ReferenceMode,
    pub expansion: ExpansionPoint,
    /// Bound on `‖p_d − p₁ₑ‖` (m).
    pub trust_radius: f64,
    pub regularize_attempts: usize,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        Self {
            reference: ReferenceMode::Planner,
            expansion: ExpansionPoint::PreviousReference,
            trust_radius: crate::trajgen::TRUST_RADIUS,
            regularize_attempts: 8,
        }
    }
}

/// Controller block; matrix weights are scalar multiples of the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpSettings {
    /// N
    pub horizon_steps: usize,
    /// T_s (s), also the logging period
    pub dt: f64,
    /// Q_e
    pub q_e: f64,
    /// Q_{e|N}
    pub q_e_terminal: f64,
    /// Multipliers on the position, velocity and thrust-direction blocks of
    /// both tracking weights.
    pub q_e_blocks: [f64; 3],
    /// Q_u
    pub q_u: f64,
    /// Q_v
    pub q_v: f64,
    /// Q_{v|N}
    pub q_v_terminal: f64,
    /// Body-rate damping
    pub q_omega: f64,
    /// μ
    pub alignment_floor: f64,
    /// q_π
    pub slack_weight: f64,
    pub sqp_iters: usize,
    pub kkt_tolerance: f64,
    pub qp_tolerance: f64,
    pub input_rate_scale: f64,
    pub direction: DirectionMode,
}

impl Default for OcpSettings {
    fn default() -> Self {
        let d = OcpConfig::standard(6);
        Self {
            horizon_steps: d.horizon_steps,
            dt: d.dt,
            q_e: 10.0,
            q_e_terminal: 10.0,
            q_e_blocks: [1.0, 1.0, 10.0],
            q_u: 10.0,
            q_v: 10.0,
            q_v_terminal: 10.0,
            q_omega: d.weight_body_rate,
            alignment_floor: d.alignment_floor,
            slack_weight: 100.0,
            sqp_iters: d.sqp_iters,
            kkt_tolerance: d.kkt_tolerance,
            qp_tolerance: d.qp_tolerance,
            input_rate_scale: d.input_rate_scale,
            direction: d.direction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    /// Plant integration step (s).
    pub plant_dt: f64,
    /// End-to-end capacity below this counts as outage.
    pub outage_threshold: f64,
    /// Radius of a seeded random offset of the relay start (m).
    pub start_jitter: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            plant_dt: 1e-3,
            outage_threshold: 1e-3,
            start_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub bs_position: Vector3<f64>,
    pub jammer_position: Vector3<f64>,
    pub relay_start: Vector3<f64>,
    pub source_start: Vector3<f64>,
    pub platform: RotorLayout,
    pub alignment_mode: AlignmentMode,
    pub jammer_schedule: JammerSchedule,
    /// P_J (W)
    pub jammer_power: f64,
    /// τ_E (s)
    pub localization_delay: f64,
    pub duration: f64,
    pub workspace: Workspace,
    pub rng_seed: u64,
    pub airframe: HexarotorSpec,
    pub radio: RadioParams,
    pub ocp: OcpSettings,
    pub planner: PlannerSettings,
    pub source: SourceSettings,
    pub sim: SimSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            bs_position: Vector3::zeros(),
            jammer_position: Vector3::new(-6.95, -5.79, 1.72),
            relay_start: Vector3::new(-6.95, 5.79, 1.72),
            source_start: Vector3::new(-3.04, 5.79, 1.72),
            platform: RotorLayout::Tilted {
                angle: 20f64.to_radians(),
            },
            alignment_mode: AlignmentMode::Constrained,
            jammer_schedule: JammerSchedule::AlwaysOn,
            jammer_power: 1.0,
            localization_delay: 2.0,
            duration: 47.0,
            workspace: Workspace::default(),
            rng_seed: 0,
            airframe: HexarotorSpec::default(),
            radio: RadioParams::default(),
            ocp: OcpSettings::default(),
            planner: PlannerSettings::default(),
            source: SourceSettings::default(),
            sim: SimSettings::default(),
        }
    }
}

/// Platform × alignment mode × jammer schedule.
pub const PRESET_NAMES: [&str; 8] = [
    "coplanar_constrained_always_on",
    "coplanar_constrained_on_off",
    "coplanar_unconstrained_always_on",
    "coplanar_unconstrained_on_off",
    "tilted_constrained_always_on",
    "tilted_constrained_on_off",
    "tilted_unconstrained_always_on",
    "tilted_unconstrained_on_off",
];

/// Apply preset `name` on top of `base`.
pub fn apply_preset(base: &ScenarioConfig, name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let parts: Vec<&str> = name.splitn(3, '_').collect();
    let unknown = || ScenarioError::UnknownPreset(name.to_string());
    if parts.len() != 3 {
        return Err(unknown());
    }
    let mut cfg = base.clone();
    cfg.platform = match parts[0] {
        "coplanar" => RotorLayout::Coplanar,
        "tilted" => match base.platform {
            RotorLayout::Tilted { angle } => RotorLayout::Tilted { angle },
            RotorLayout::Coplanar => RotorLayout::Tilted {
                angle: 20f64.to_radians(),
            },
        },
        _ => return Err(unknown()),
    };
    cfg.alignment_mode = match parts[1] {
        "constrained" => AlignmentMode::Constrained,
        "unconstrained" => AlignmentMode::Unconstrained,
        _ => return Err(unknown()),
    };
    cfg.jammer_schedule = match parts[2] {
        "always_on" => JammerSchedule::AlwaysOn,
        "on_off" => match base.jammer_schedule {
            s @ JammerSchedule::OnOff { .. } => s,
            JammerSchedule::AlwaysOn => JammerSchedule::default_on_off(),
        },
        _ => return Err(unknown()),
    };
    Ok(cfg)
}

pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    apply_preset(&ScenarioConfig::default(), name)
}

fn line_column(doc: &str, offset: usize) -> (usize, usize) {
    let before = &doc[..offset.min(doc.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parse and validate a scenario document.
pub fn load_scenario(doc: &str) -> Result<ScenarioConfig, ScenarioError> {
    let cfg: ScenarioConfig = toml::from_str(doc).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_column(doc, s.start));
        ScenarioError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let doc = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_scenario(&doc)
}

impl ScenarioConfig {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return invalid("duration", "must be positive and finite");
        }
        if !(self.localization_delay >= 0.0) {
            return invalid("localization_delay", "must be non-negative");
        }
        if !(self.jammer_power >= 0.0) {
            return invalid("jammer_power", "must be non-negative");
        }
        if let JammerSchedule::OnOff { period_on, period_off } = self.jammer_schedule {
            if !(period_on > 0.0 && period_off >= 0.0) {
                return invalid("jammer_schedule", "period_on must be positive and period_off non-negative");
            }
        }
        for i in 0..3 {
            if !(self.workspace.min[i] < self.workspace.max[i]) {
                return invalid("workspace", "min must be below max on every axis");
            }
        }
        for (field, p) in [
            ("bs_position", &self.bs_position),
            ("jammer_position", &self.jammer_position),
            ("relay_start", &self.relay_start),
            ("source_start", &self.source_start),
        ] {
            if !self.workspace.contains(p) {
                return invalid(field, "outside the workspace");
            }
        }
        let o = &self.ocp;
        if o.horizon_steps < 2 {
            return invalid("ocp.horizon_steps", "must be at least 2");
        }
        if !(o.dt > 0.0) {
            return invalid("ocp.dt", "must be positive");
        }
        for (field, w) in [
            ("ocp.q_e", o.q_e),
            ("ocp.q_e_terminal", o.q_e_terminal),
            ("ocp.q_v", o.q_v),
            ("ocp.q_v_terminal", o.q_v_terminal),
            ("ocp.q_omega", o.q_omega),
        ] {
            if !(w >= 0.0) {
                return invalid(field, "must be non-negative");
            }
        }
        if o.q_e_blocks.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return invalid("ocp.q_e_blocks", "entries must be non-negative");
        }
        if !(o.q_u > 0.0) {
            return invalid("ocp.q_u", "must be positive");
        }
        if !(o.alignment_floor > 0.0 && o.alignment_floor <= 1.0) {
            return invalid("ocp.alignment_floor", "must lie in (0, 1]");
        }
        if !(o.slack_weight > 0.0) {
            return invalid("ocp.slack_weight", "must be positive");
        }
        if o.sqp_iters == 0 {
            return invalid("ocp.sqp_iters", "must be at least 1");
        }
        if !(o.qp_tolerance > 0.0) {
            return invalid("ocp.qp_tolerance", "must be positive");
        }
        if !(o.input_rate_scale > 0.0) {
            return invalid("ocp.input_rate_scale", "must be positive");
        }
        let s = &self.sim;
        if !(s.plant_dt > 0.0 && s.plant_dt <= o.dt) {
            return invalid("sim.plant_dt", "must be positive and no longer than ocp.dt");
        }
        let ratio = o.dt / s.plant_dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return invalid("sim.plant_dt", "must divide ocp.dt");
        }
        if !(s.outage_threshold >= 0.0) {
            return invalid("sim.outage_threshold", "must be non-negative");
        }
        if !(s.start_jitter >= 0.0) {
            return invalid("sim.start_jitter", "must be non-negative");
        }
        if !(self.planner.trust_radius > 0.0) {
            return invalid("planner.trust_radius", "must be positive");
        }
        if let Err(e) = self.radio.validate() {
            return invalid("radio", e.to_string());
        }
        if let Err(e) = self.build_platform() {
            return invalid("airframe", e.to_string());
        }
        if self.source.motion == SourceMotion::Inspection {
            if !(self.source.period > 0.0) {
                return invalid("source.period", "must be positive");
            }
            if !(self.source.lateral_extent >= 0.0 && self.source.lateral_extent <= 3.0) {
                return invalid("source.lateral_extent", "must lie in [0, 3] m");
            }
            for (t, p) in inspection_waypoints(self) {
                if !self.workspace.contains(&p) {
                    return invalid("source", format!("waypoint at t = {t} s leaves the workspace"));
                }
            }
        }
        Ok(())
    }

    pub fn build_platform(&self) -> Result<MravParams, VehicleError> {
        build_hexarotor(self.platform, &self.airframe)
    }

    pub fn ocp_config(&self, gravity: f64) -> OcpConfig {
        let block_weight = |q: f64, blocks: &[f64; 3]| {
            DMatrix::from_diagonal(&DVector::from_fn(9, |i, _| q * blocks[i / 3]))
        };
        let o = &self.ocp;
        let np = 6;
        let cfg = OcpConfig {
            horizon_steps: o.horizon_steps,
            dt: o.dt,
            weight_track: block_weight(o.q_e, &o.q_e_blocks),
            weight_track_terminal: block_weight(o.q_e_terminal, &o.q_e_blocks),
            weight_input_var: DMatrix::identity(np, np) * o.q_u,
            weight_misalign: Matrix2::identity() * o.q_v,
            weight_misalign_terminal: Matrix2::identity() * o.q_v_terminal,
            weight_body_rate: o.q_omega,
            alignment_floor: o.alignment_floor,
            slack_weight: o.slack_weight,
            alignment_constraint: true,
            sqp_iters: o.sqp_iters,
            kkt_tolerance: o.kkt_tolerance,
            qp_tolerance: o.qp_tolerance,
            input_rate_scale: o.input_rate_scale,
            direction: o.direction,
            gravity,
        };
        match self.alignment_mode {
            AlignmentMode::Constrained => cfg,
            AlignmentMode::Unconstrained => cfg.unconstrained(),
        }
    }

    /// Worst-case channel inputs with the planner's view of the jammer power.
    pub fn conservative_params(&self, known_jammer_power: f64) -> ConservativeParams {
        let noise_var = self.radio.noise_std * self.radio.noise_std;
        ConservativeParams {
            peak_gain: self.radio.antenna.peak_gain,
            alignment_floor: self.ocp.alignment_floor,
            tx_power: self.radio.tx_power,
            jammer_power_known: known_jammer_power,
            noise_var_relay: noise_var,
            noise_var_bs: noise_var,
            bandwidth: self.radio.bandwidth,
            bs_position: self.bs_position,
            jammer_position: self.jammer_position,
        }
    }

    /// Number of logged rows: one per control period, `t = 0` included.
    pub fn tick_count(&self) -> usize {
        (self.duration / self.ocp.dt + 1e-9).floor() as usize + 1
    }
}

/// True jammer power at time `t`.
pub fn jammer_power_at(config: &ScenarioConfig, t: f64) -> f64 {
    match config.jammer_schedule {
        JammerSchedule::AlwaysOn => config.jammer_power,
        JammerSchedule::OnOff { period_on, period_off } => {
            if t.rem_euclid(period_on + period_off) < period_on {
                config.jammer_power
            } else {
                0.0
            }
        }
    }
}

/// Jammer power as known to the planner: zero until the localisation delay
/// has elapsed.
pub fn known_jammer_power(config: &ScenarioConfig, t: f64) -> f64 {
    if t < config.localization_delay {
        0.0
    } else {
        jammer_power_at(config, t)
    }
}

/// Position, velocity and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

/// Rest-to-rest minimum-jerk segments through timed waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceTrajectory {
    pub waypoints: Vec<(f64, Vector3<f64>)>,
}

impl SourceTrajectory {
    pub fn new(waypoints: Vec<(f64, Vector3<f64>)>) -> Result<Self, ScenarioError> {
        if waypoints.is_empty() {
            return invalid("source", "needs at least one waypoint");
        }
        if waypoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return invalid("source", "waypoint times must be strictly increasing");
        }
        Ok(Self { waypoints })
    }

    pub fn stationary(position: Vector3<f64>) -> Self {
        Self {
            waypoints: vec![(0.0, position)],
        }
    }

    /// Evaluate at `t`; holds the end points outside the time span.
    pub fn sample(&self, t: f64) -> TrajectorySample {
        let hold = |p: Vector3<f64>| TrajectorySample {
            position: p,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        };
        let first = self.waypoints[0];
        let last = *self.waypoints.last().unwrap();
        if t <= first.0 {
            return hold(first.1);
        }
        if t >= last.0 {
            return hold(last.1);
        }
        let seg = self.waypoints.partition_point(|w| w.0 <= t) - 1;
        let (t0, p0) = self.waypoints[seg];
        let (t1, p1) = self.waypoints[seg + 1];
        let h = t1 - t0;
        let tau = (t - t0) / h;
        let (t2, t3) = (tau * tau, tau * tau * tau);
        let s = t3 * (10.0 - 15.0 * tau + 6.0 * t2);
        let ds = 30.0 * t2 * (1.0 - tau) * (1.0 - tau) / h;
        let dds = 60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau) / (h * h);
        let d = p1 - p0;
        TrajectorySample {
            position: p0 + d * s,
            velocity: d * ds,
            acceleration: d * dds,
        }
    }
}

fn inspection_waypoints(config: &ScenarioConfig) -> Vec<(f64, Vector3<f64>)> {
    let s = &config.source;
    let p0 = config.source_start;
    let t = |frac: f64| frac * s.period;
    let mid = Vector3::new(p0.x, p0.y, s.mid_height);
    let top = Vector3::new(p0.x + 0.5 * s.lateral_extent, p0.y - 0.3 * s.lateral_extent, s.top_height);
    let sweep = Vector3::new(p0.x - 0.5 * s.lateral_extent, p0.y - 0.3 * s.lateral_extent, s.top_height);
    vec![
        (t(0.0), p0),
        (t(0.06), p0),
        (t(0.30), mid),
        (t(0.42), mid),
        (t(0.66), top),
        (t(0.86), sweep),
        (t(1.0), sweep),
    ]
}

/// Source path for `config`: the tower inspection or a hold.
pub fn inspection_trajectory(config: &ScenarioConfig) -> Result<SourceTrajectory, ScenarioError> {
    match config.source.motion {
        SourceMotion::Hold => Ok(SourceTrajectory::stationary(config.source_start)),
        SourceMotion::Inspection => {
            let wps = inspection_waypoints(config);
            for (t, p) in &wps {
                if !config.workspace.contains(p) {
                    return invalid("source", format!("waypoint at t = {t} s leaves the workspace"));
                }
            }
            SourceTrajectory::new(wps)
        }
    }
}
