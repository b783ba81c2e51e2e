//! Generically-tilted multirotor (GTMR) model.
//!
//! State layout used by the flat (solver-facing) API:
//!
//! | slice            | quantity                         |
//! |------------------|----------------------------------|
//! | `0..3`           | position, world frame (m)        |
//! | `3..6`           | ZYX Euler angles φ, ϑ, ψ (rad)   |
//! | `6..9`           | velocity, world frame (m/s)      |
//! | `9..12`          | body rates (rad/s)               |
//! | `12..12+N_p`     | rotor speeds (Hz)                |
//!
//! Rotor thrust is `c_ξ·u²` with `u` the stored rotor speed, so the speed
//! bounds apply to the state directly. The control input is the rotor
//! acceleration `u̇` (Hz/s).

mod airframe;
mod dynamics;
mod kinematics;

pub use airframe::{build_hexarotor, HexarotorSpec, MravParams, RotorLayout, RotorUnit};
pub use dynamics::{
    dynamics_rhs, rhs_flat, rhs_jacobian, rk4_flat, rk4_with_jacobians, step_plant, step_rk4,
    ControlInput, VehicleState,
};
pub use kinematics::{
    euler_rate_map, euler_rate_map_partials, rotation_from_euler, rotation_partials,
    thrust_direction, thrust_direction_jacobian, PITCH_GUARD,
};

use thiserror::Error;

pub const POS: usize = 0;
pub const EUL: usize = 3;
pub const VEL: usize = 6;
pub const RATE: usize = 9;
pub const ROTOR: usize = 12;

/// Length of the flat state vector for `rotor_count` rotors.
pub fn state_dim(rotor_count: usize) -> usize {
    ROTOR + rotor_count
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VehicleError {
    #[error("invalid vehicle parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("Euler-rate map singular at pitch {pitch} rad")]
    Singular { pitch: f64 },
    #[error("non-finite value produced during integration")]
    NonFinite,
    #[error("integration step must be positive (got {0})")]
    InvalidStep(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}
