use nalgebra::{Matrix3, Vector3};

use super::VehicleError;

/// Pitch magnitude beyond which the Euler-rate map is treated as singular.
pub const PITCH_GUARD: f64 = std::f64::consts::FRAC_PI_2 - 1e-6;

fn rot_x(a: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = a.sin_cos();
    (
        Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s),
    )
}

fn rot_y(a: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = a.sin_cos();
    (
        Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s),
    )
}

fn rot_z(a: f64) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s, c) = a.sin_cos();
    (
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0),
    )
}

/// Body-to-world rotation for ZYX (yaw-pitch-roll) Euler angles `(φ, ϑ, ψ)`.
pub fn rotation_from_euler(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (rx, _) = rot_x(euler[0]);
    let (ry, _) = rot_y(euler[1]);
    let (rz, _) = rot_z(euler[2]);
    rz * ry * rx
}

/// Partial derivatives `[∂R/∂φ, ∂R/∂ϑ, ∂R/∂ψ]`.
pub fn rotation_partials(euler: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (rx, drx) = rot_x(euler[0]);
    let (ry, dry) = rot_y(euler[1]);
    let (rz, drz) = rot_z(euler[2]);
    [rz * ry * drx, rz * dry * rx, drz * ry * rx]
}

/// Euler-rate map `T(η)` with `η̇ = T(η)·ω`, `ω` in the body frame.
pub fn euler_rate_map(euler: &Vector3<f64>) -> Result<Matrix3<f64>, VehicleError> {
    let pitch = euler[1];
    if !(pitch.abs() < PITCH_GUARD) {
        return Err(VehicleError::Singular { pitch });
    }
    let (sp, cp) = euler[0].sin_cos();
    let (st, ct) = pitch.sin_cos();
    let tt = st / ct;
    Ok(Matrix3::new(
        1.0,
        sp * tt,
        cp * tt,
        0.0,
        cp,
        -sp,
        0.0,
        sp / ct,
        cp / ct,
    ))
}

/// `[∂T/∂φ, ∂T/∂ϑ]`; `T` does not depend on yaw.
pub fn euler_rate_map_partials(euler: &Vector3<f64>) -> Result<[Matrix3<f64>; 2], VehicleError> {
    let pitch = euler[1];
    if !(pitch.abs() < PITCH_GUARD) {
        return Err(VehicleError::Singular { pitch });
    }
    let (sp, cp) = euler[0].sin_cos();
    let (st, ct) = pitch.sin_cos();
    let tt = st / ct;
    let sec2 = 1.0 / (ct * ct);
    let d_roll = Matrix3::new(
        0.0,
        cp * tt,
        -sp * tt,
        0.0,
        -sp,
        -cp,
        0.0,
        cp / ct,
        -sp / ct,
    );
    let d_pitch = Matrix3::new(
        0.0,
        sp * sec2,
        cp * sec2,
        0.0,
        0.0,
        0.0,
        0.0,
        sp * st * sec2,
        cp * st * sec2,
    );
    Ok([d_roll, d_pitch])
}

/// World-frame direction of the body z-axis, `R(η)·e₃`. This is both the
/// thrust direction of a coplanar airframe and the antenna boresight.
pub fn thrust_direction(euler: &Vector3<f64>) -> Vector3<f64> {
    let (sp, cp) = euler[0].sin_cos();
    let (st, ct) = euler[1].sin_cos();
    let (sy, cy) = euler[2].sin_cos();
    Vector3::new(cp * st * cy + sp * sy, cp * st * sy - sp * cy, cp * ct)
}

/// Jacobian of [`thrust_direction`] with respect to `(φ, ϑ, ψ)`; column `j`
/// is the derivative along angle `j`.
pub fn thrust_direction_jacobian(euler: &Vector3<f64>) -> Matrix3<f64> {
    let (sp, cp) = euler[0].sin_cos();
    let (st, ct) = euler[1].sin_cos();
    let (sy, cy) = euler[2].sin_cos();
    Matrix3::new(
        -sp * st * cy + cp * sy,
        cp * ct * cy,
        -cp * st * sy + sp * cy,
        -sp * st * sy - cp * cy,
        cp * ct * sy,
        cp * st * cy + sp * sy,
        -sp * ct,
        -cp * st,
        0.0,
    )
}
