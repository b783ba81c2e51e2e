//! Receding-horizon relay controller.
//!
//! The optimal control problem is transcribed by multiple shooting over the
//! RK4 prediction model, linearised with Gauss–Newton, condensed onto the
//! input increments and solved with the dense QP in [`qp`].
//!
//! Per stage the least-squares residual is
//! `[p − p_d; v − ṗ_d; ρ − ρ_d; v₁₂; v₁₀]`, where `ρ` is the body z-axis in
//! world frame and `v_ij` the squared directional cosine towards each peer.
//! The input-variation residual is `s·(u̇_k − u̇_{k−1})` and the alignment
//! constraint `(1 − v₁₂)(1 − v₁₀) ≥ μ − π_k` is softened by `q_π·π_k²`.

mod ocp;
pub mod qp;

use nalgebra::{DMatrix, Matrix2, Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::{thrust_direction, thrust_direction_jacobian, ControlInput, VehicleError, VehicleState};

pub use ocp::{shift_warm_start, solve_ocp};
pub use qp::QpStatus;

/// Below this `‖p̈_d‖` the literal direction falls back to `e₃`.
pub const LITERAL_HOVER_FALLBACK: f64 = 1e-3;
const MIN_SEPARATION: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NmpcError {
    #[error("invalid controller setting `{name}`: {reason}")]
    Config { name: &'static str, reason: String },
    #[error("expected {expected} stage references, got {got}")]
    References { expected: usize, got: usize },
    #[error("relay coincides with its {0}")]
    Geometry(&'static str),
    #[error("prediction model: {0}")]
    Model(#[from] VehicleError),
    #[error("QP {status:?} at SQP iteration {iteration} ({active} active, max violation {max_violation:e})")]
    Qp {
        status: QpStatus,
        iteration: usize,
        active: usize,
        max_violation: f64,
    },
}

/// How the desired thrust direction `ρ_d` is derived from `p̈_d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMode {
    /// `(g·e₃ + p̈_d)/‖g·e₃ + p̈_d‖`
    #[default]
    GravityCompensated,
    /// `−p̈_d/‖p̈_d‖`, or `e₃` near zero acceleration.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpConfig {
    /// N
    pub horizon_steps: usize,
    /// T_s (s)
    pub dt: f64,
    /// Q_e (9×9)
    pub weight_track: DMatrix<f64>,
    /// Q_{e|N}
    pub weight_track_terminal: DMatrix<f64>,
    /// Q_u (N_p×N_p)
    pub weight_input_var: DMatrix<f64>,
    /// Q_v
    pub weight_misalign: Matrix2<f64>,
    /// Q_{v|N}
    pub weight_misalign_terminal: Matrix2<f64>,
    /// Scalar weight on body rates ω at every node (damps yaw, which the
    /// other terms leave free).
    pub weight_body_rate: f64,
    /// μ
    pub alignment_floor: f64,
    /// q_π
    pub slack_weight: f64,
    /// Include the soft alignment constraint and its slacks.
    pub alignment_constraint: bool,
    /// Maximum SQP iterations per solve.
    pub sqp_iters: usize,
    /// Further iterations run only while `kkt_residual` exceeds this.
    pub kkt_tolerance: f64,
    pub qp_tolerance: f64,
    /// `s` in the input-variation residual `s·(u̇_k − u̇_{k−1})`.
    pub input_rate_scale: f64,
    pub direction: DirectionMode,
    pub gravity: f64,
}

impl OcpConfig {
    /// Block-scalar weights with N = 30, T_s = 15 ms.
    pub fn standard(rotor_count: usize) -> Self {
        Self {
            horizon_steps: 30,
            dt: 0.015,
            weight_track: DMatrix::identity(9, 9) * 0.1,
            weight_track_terminal: DMatrix::identity(9, 9) * 0.1,
            weight_input_var: DMatrix::identity(rotor_count, rotor_count) * 10.0,
            weight_misalign: Matrix2::identity() * 10.0,
            weight_misalign_terminal: Matrix2::identity() * 10.0,
            weight_body_rate: 1e-2,
            alignment_floor: 0.2,
            slack_weight: 1e4,
            alignment_constraint: true,
            sqp_iters: 5,
            kkt_tolerance: 1e-3,
            qp_tolerance: 1e-9,
            input_rate_scale: 1e-3,
            direction: DirectionMode::GravityCompensated,
            gravity: 9.81,
        }
    }

    /// Drop both the misalignment penalty and the alignment constraint.
    pub fn unconstrained(mut self) -> Self {
        self.weight_misalign = Matrix2::zeros();
        self.weight_misalign_terminal = Matrix2::zeros();
        self.alignment_constraint = false;
        self
    }

    pub fn rotor_count(&self) -> usize {
        self.weight_input_var.nrows()
    }

    pub fn validate(&self) -> Result<(), NmpcError> {
        let bad = |name, reason: &str| {
            Err(NmpcError::Config {
                name,
                reason: reason.to_string(),
            })
        };
        if self.horizon_steps < 2 {
            return bad("horizon_steps", "must be at least 2");
        }
        if !(self.dt > 0.0) {
            return bad("dt", "must be positive");
        }
        let psd = |m: &DMatrix<f64>, strict: bool| {
            if (m - m.transpose()).amax() > 1e-12 {
                return false;
            }
            let min = m.clone().symmetric_eigenvalues().min();
            if strict { min > 0.0 } else { min >= -1e-12 }
        };
        for (name, w) in [("weight_track", &self.weight_track), ("weight_track_terminal", &self.weight_track_terminal)] {
            if w.shape() != (9, 9) || !psd(w, false) {
                return bad(name, "must be a 9×9 positive semidefinite matrix");
            }
        }
        if !self.weight_input_var.is_square() || !psd(&self.weight_input_var, true) {
            return bad("weight_input_var", "must be positive definite");
        }
        for (name, w) in [("weight_misalign", &self.weight_misalign), ("weight_misalign_terminal", &self.weight_misalign_terminal)] {
            if !psd(&DMatrix::from_column_slice(2, 2, w.as_slice()), false) {
                return bad(name, "must be positive semidefinite");
            }
        }
        if !(self.weight_body_rate >= 0.0) {
            return bad("weight_body_rate", "must be non-negative");
        }
        if !(self.alignment_floor > 0.0 && self.alignment_floor <= 1.0) {
            return bad("alignment_floor", "must lie in (0, 1]");
        }
        if !(self.slack_weight > 0.0) {
            return bad("slack_weight", "must be positive");
        }
        if self.sqp_iters == 0 {
            return bad("sqp_iters", "must be at least 1");
        }
        if !(self.qp_tolerance > 0.0 && self.input_rate_scale > 0.0 && self.gravity > 0.0) {
            return bad("qp_tolerance", "tolerances and scales must be positive");
        }
        Ok(())
    }
}

/// Reference and peer positions for one shooting node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageReference {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub bs_position: Vector3<f64>,
    pub source_position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub states: Vec<VehicleState>,
    pub inputs: Vec<ControlInput>,
    /// π_k, one per node.
    pub slacks: Vec<f64>,
    /// Largest of the last SQP step (inputs as speed change per step,
    /// slacks) and the remaining shooting defect.
    pub kkt_residual: f64,
    pub qp_status: QpStatus,
    /// Σℓ_k + q_π·Σπ_k² at the returned iterate.
    pub cost: f64,
    pub sqp_iterations: usize,
    pub qp_iterations: usize,
    /// Largest shooting defect component.
    pub max_defect: f64,
    /// Merit value after every accepted SQP iteration.
    pub merit_history: Vec<f64>,
}

impl OcpSolution {
    pub fn first_input(&self) -> &ControlInput {
        &self.inputs[0]
    }
}

/// `ρ_d` for a desired acceleration.
pub fn desired_thrust_direction(acceleration: &Vector3<f64>, mode: DirectionMode, gravity: f64) -> Vector3<f64> {
    match mode {
        DirectionMode::GravityCompensated => {
            let a = Vector3::z() * gravity + acceleration;
            let n = a.norm();
            if n > 0.0 { a / n } else { Vector3::z() }
        }
        DirectionMode::Literal => {
            let n = acceleration.norm();
            if n < LITERAL_HOVER_FALLBACK { Vector3::z() } else { -acceleration / n }
        }
    }
}

/// Composite tracking error `[p − p_d; v − ṗ_d; ρ − ρ_d]`.
pub fn tracking_error(state: &VehicleState, reference: &StageReference, mode: DirectionMode, gravity: f64) -> SVector<f64, 9> {
    let mut e = SVector::<f64, 9>::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&(state.position - reference.position));
    e.fixed_rows_mut::<3>(3).copy_from(&(state.velocity - reference.velocity));
    let rho_d = desired_thrust_direction(&reference.acceleration, mode, gravity);
    e.fixed_rows_mut::<3>(6).copy_from(&(thrust_direction(&state.euler) - rho_d));
    e
}

/// Squared directional cosine from the relay towards `peer` and its
/// gradients with respect to relay position and Euler angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Misalignment {
    pub value: f64,
    pub grad_position: Vector3<f64>,
    pub grad_euler: Vector3<f64>,
}

pub fn misalignment(position: &Vector3<f64>, euler: &Vector3<f64>, peer: &Vector3<f64>, what: &'static str) -> Result<Misalignment, NmpcError> {
    let r = peer - position;
    let d = r.norm();
    if d < MIN_SEPARATION {
        return Err(NmpcError::Geometry(what));
    }
    let n = r / d;
    let rho = thrust_direction(euler);
    let s = n.dot(&rho);
    let proj = Matrix3::identity() - n * n.transpose();
    let ds_dp = -(proj * rho) / d;
    let ds_deta = thrust_direction_jacobian(euler).transpose() * n;
    Ok(Misalignment {
        value: s * s,
        grad_position: ds_dp * (2.0 * s),
        grad_euler: ds_deta * (2.0 * s),
    })
}

/// `(v₁₂, v₁₀)` for the relay state.
pub fn misalignment_pair(state: &VehicleState, reference: &StageReference) -> Result<(Misalignment, Misalignment), NmpcError> {
    Ok((
        misalignment(&state.position, &state.euler, &reference.source_position, "source")?,
        misalignment(&state.position, &state.euler, &reference.bs_position, "base station")?,
    ))
}

/// `(1 − v₁₂)(1 − v₁₀) − μ`; the constraint holds when this is `≥ −π_k`.
pub fn alignment_residual(state: &VehicleState, reference: &StageReference, alignment_floor: f64) -> Result<f64, NmpcError> {
    let (a, b) = misalignment_pair(state, reference)?;
    Ok((1.0 - a.value) * (1.0 - b.value) - alignment_floor)
}

/// Stage cost `ℓ_k`. The terminal stage has no input-variation term and uses
/// the terminal weights.
pub fn stage_cost(
    state: &VehicleState,
    input: &ControlInput,
    prev_input: &ControlInput,
    reference: &StageReference,
    config: &OcpConfig,
    terminal: bool,
) -> Result<f64, NmpcError> {
    let e = tracking_error(state, reference, config.direction, config.gravity);
    let (a, b) = misalignment_pair(state, reference)?;
    let mis = nalgebra::Vector2::new(a.value, b.value);
    let (qe, qv) = if terminal {
        (&config.weight_track_terminal, &config.weight_misalign_terminal)
    } else {
        (&config.weight_track, &config.weight_misalign)
    };
    let e_dyn = nalgebra::DVector::from_column_slice(e.as_slice());
    let mut cost = e_dyn.dot(&(qe * &e_dyn)) + mis.dot(&(qv * mis));
    cost += config.weight_body_rate * state.body_rates.norm_squared();
    if !terminal {
        let du = (&input.rotor_accels - &prev_input.rotor_accels) * config.input_rate_scale;
        cost += du.dot(&(&config.weight_input_var * &du));
    }
    Ok(cost)
}
