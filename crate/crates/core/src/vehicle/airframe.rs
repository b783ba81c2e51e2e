use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use super::VehicleError;

/// One motor-propeller unit.
#[derive(Debug, Clone, PartialEq)]
pub struct RotorUnit {
    /// Rotor centre in the body frame (m).
    pub position_body: Vector3<f64>,
    /// Unit spin axis in the body frame.
    pub axis_body: Vector3<f64>,
    /// +1 or −1; sign of the reaction (drag) torque along the axis.
    pub spin_sign: f64,
    /// Thrust per squared speed, N/Hz².
    pub thrust_coeff: f64,
    /// Drag torque per squared speed, N·m/Hz².
    pub drag_coeff: f64,
}

impl RotorUnit {
    fn validate(&self, index: usize) -> Result<(), VehicleError> {
        if (self.axis_body.norm() - 1.0).abs() > 1e-12 {
            return Err(VehicleError::Parameter {
                name: "axis_body",
                reason: format!("rotor {index} axis is not unit length"),
            });
        }
        if !(self.thrust_coeff > 0.0) {
            return Err(VehicleError::Parameter {
                name: "thrust_coeff",
                reason: format!("rotor {index} thrust coefficient must be > 0"),
            });
        }
        if !(self.drag_coeff >= 0.0) {
            return Err(VehicleError::Parameter {
                name: "drag_coeff",
                reason: format!("rotor {index} drag coefficient must be >= 0"),
            });
        }
        if self.spin_sign != 1.0 && self.spin_sign != -1.0 {
            return Err(VehicleError::Parameter {
                name: "spin_sign",
                reason: format!("rotor {index} spin sign must be ±1"),
            });
        }
        Ok(())
    }

    /// Force column: thrust acts along the spin axis.
    fn force_column(&self) -> Vector3<f64> {
        self.axis_body
    }

    /// Moment column per unit thrust: lever arm plus reaction torque.
    fn moment_column(&self) -> Vector3<f64> {
        self.position_body.cross(&self.axis_body)
            + self.axis_body * (self.spin_sign * self.drag_coeff / self.thrust_coeff)
    }
}

/// Mass properties, rotor geometry, allocation maps and actuator bounds.
///
/// The allocation maps are derived from the rotor list at construction and
/// cannot drift from it.
#[derive(Debug, Clone, PartialEq)]
pub struct MravParams {
    mass: f64,
    inertia: Matrix3<f64>,
    inertia_inv: Matrix3<f64>,
    rotors: Vec<RotorUnit>,
    force_map: Matrix3xX<f64>,
    moment_map: Matrix3xX<f64>,
    pub speed_min: DVector<f64>,
    pub speed_max: DVector<f64>,
    pub accel_min: DVector<f64>,
    pub accel_max: DVector<f64>,
    pub gravity: f64,
}

impl MravParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mass: f64,
        inertia: Matrix3<f64>,
        rotors: Vec<RotorUnit>,
        speed_min: DVector<f64>,
        speed_max: DVector<f64>,
        accel_min: DVector<f64>,
        accel_max: DVector<f64>,
        gravity: f64,
    ) -> Result<Self, VehicleError> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(VehicleError::Parameter {
                name: "mass",
                reason: format!("must be positive, got {mass}"),
            });
        }
        if (inertia - inertia.transpose()).abs().max() > 1e-12 {
            return Err(VehicleError::Parameter {
                name: "inertia",
                reason: "must be symmetric".into(),
            });
        }
        let eig = inertia.symmetric_eigenvalues();
        if eig.iter().any(|&e| !(e > 0.0)) {
            return Err(VehicleError::Parameter {
                name: "inertia",
                reason: "must be positive definite".into(),
            });
        }
        let n = rotors.len();
        if n < 4 {
            return Err(VehicleError::Parameter {
                name: "rotors",
                reason: format!("need at least 4 rotors, got {n}"),
            });
        }
        for (i, r) in rotors.iter().enumerate() {
            r.validate(i)?;
        }
        for (name, v) in [
            ("speed_min", &speed_min),
            ("speed_max", &speed_max),
            ("accel_min", &accel_min),
            ("accel_max", &accel_max),
        ] {
            if v.len() != n {
                return Err(VehicleError::Parameter {
                    name,
                    reason: format!("expected {n} entries, got {}", v.len()),
                });
            }
        }
        for i in 0..n {
            if !(speed_min[i] < speed_max[i]) || speed_min[i] < 0.0 {
                return Err(VehicleError::Parameter {
                    name: "speed_min",
                    reason: format!("rotor {i}: need 0 <= speed_min < speed_max"),
                });
            }
            if !(accel_min[i] < 0.0 && 0.0 < accel_max[i]) {
                return Err(VehicleError::Parameter {
                    name: "accel_min",
                    reason: format!("rotor {i}: need accel_min < 0 < accel_max"),
                });
            }
        }
        if !(gravity > 0.0) {
            return Err(VehicleError::Parameter {
                name: "gravity",
                reason: "must be positive".into(),
            });
        }
        let inertia_inv = inertia.try_inverse().ok_or(VehicleError::Parameter {
            name: "inertia",
            reason: "not invertible".into(),
        })?;
        let (force_map, moment_map) = allocation_maps(&rotors);
        Ok(Self {
            mass,
            inertia,
            inertia_inv,
            rotors,
            force_map,
            moment_map,
            speed_min,
            speed_max,
            accel_min,
            accel_max,
            gravity,
        })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }
    pub fn inertia(&self) -> &Matrix3<f64> {
        &self.inertia
    }
    pub fn inertia_inv(&self) -> &Matrix3<f64> {
        &self.inertia_inv
    }
    pub fn rotors(&self) -> &[RotorUnit] {
        &self.rotors
    }
    pub fn rotor_count(&self) -> usize {
        self.rotors.len()
    }
    /// `F`: body force per unit rotor thrust.
    pub fn force_map(&self) -> &Matrix3xX<f64> {
        &self.force_map
    }
    /// `M`: body moment per unit rotor thrust.
    pub fn moment_map(&self) -> &Matrix3xX<f64> {
        &self.moment_map
    }

    /// Allocation maps rebuilt from the rotor list.
    pub fn rebuild_maps(&self) -> (Matrix3xX<f64>, Matrix3xX<f64>) {
        allocation_maps(&self.rotors)
    }

    /// Stacked wrench map `[F; M]` (6×N_p).
    pub fn wrench_map(&self) -> DMatrix<f64> {
        let n = self.rotor_count();
        let mut w = DMatrix::zeros(6, n);
        w.rows_mut(0, 3).copy_from(&self.force_map);
        w.rows_mut(3, 3).copy_from(&self.moment_map);
        w
    }

    /// Per-rotor thrust `ξ_i = c_ξ,i·u_i²`.
    pub fn thrusts(&self, speeds: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.rotor_count(),
            self.rotors
                .iter()
                .zip(speeds)
                .map(|(r, &u)| r.thrust_coeff * u * u),
        )
    }

    /// Rotor speeds holding a level hover (η = 0): least-norm thrusts solving
    /// `[F; M]·ξ = (0, 0, m·g, 0, 0, 0)`.
    pub fn hover_speeds(&self) -> Result<DVector<f64>, VehicleError> {
        let w = self.wrench_map();
        let mut target = DVector::zeros(6);
        target[2] = self.mass * self.gravity;
        let pinv = w
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| VehicleError::Parameter {
                name: "rotors",
                reason: format!("allocation pseudo-inverse failed: {e}"),
            })?;
        let xi = pinv * &target;
        let residual = (&w * &xi - &target).amax();
        if residual > 1e-9 || xi.iter().any(|&t| t < 0.0) {
            return Err(VehicleError::Parameter {
                name: "rotors",
                reason: "layout cannot hover level with non-negative thrusts".into(),
            });
        }
        Ok(DVector::from_iterator(
            xi.len(),
            xi.iter()
                .zip(&self.rotors)
                .map(|(&t, r)| (t / r.thrust_coeff).sqrt()),
        ))
    }
}

fn allocation_maps(rotors: &[RotorUnit]) -> (Matrix3xX<f64>, Matrix3xX<f64>) {
    let force = Matrix3xX::from_columns(&rotors.iter().map(RotorUnit::force_column).collect::<Vec<_>>());
    let moment =
        Matrix3xX::from_columns(&rotors.iter().map(RotorUnit::moment_column).collect::<Vec<_>>());
    (force, moment)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RotorLayout {
    Coplanar,
    /// Each axis is tilted about its arm by `angle` (rad), alternating sign.
    Tilted { angle: f64 },
}

/// Physical parameters of a symmetric hexarotor. Defaults are the platform
/// of the reference experiments (2.57 kg, diag(0.11, 0.11, 0.19) kg·m²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HexarotorSpec {
    /// m (kg)
    pub mass: f64,
    /// diagonal of J (kg·m²)
    pub inertia_diag: [f64; 3],
    pub arm_length: f64,
    /// c_ξ
    pub thrust_coeff: f64,
    /// c_τ
    pub drag_coeff: f64,
    /// γ̲, γ̄ (Hz)
    pub speed_min: f64,
    pub speed_max: f64,
    /// γ̲̇, γ̇̄ (Hz/s)
    pub accel_min: f64,
    pub accel_max: f64,
    /// g (m/s²)
    pub gravity: f64,
}

impl Default for HexarotorSpec {
    fn default() -> Self {
        Self {
            mass: 2.57,
            inertia_diag: [0.11, 0.11, 0.19],
            arm_length: 0.4,
            thrust_coeff: 1.18e-3,
            drag_coeff: 2.5e-5,
            speed_min: 16.0,
            speed_max: 100.0,
            accel_min: -300.0,
            accel_max: 400.0,
            gravity: 9.81,
        }
    }
}

/// Six rotors at 60° azimuth steps with alternating spin. A tilted layout
/// rotates each axis about its arm direction by ±`angle`, sign alternating
/// in phase with the spin direction.
pub fn build_hexarotor(layout: RotorLayout, spec: &HexarotorSpec) -> Result<MravParams, VehicleError> {
    if !(spec.arm_length > 0.0) {
        return Err(VehicleError::Parameter {
            name: "arm_length",
            reason: format!("must be positive, got {}", spec.arm_length),
        });
    }
    if spec.inertia_diag.iter().any(|&j| !(j > 0.0)) {
        return Err(VehicleError::Parameter {
            name: "inertia_diag",
            reason: "entries must be positive".into(),
        });
    }
    let tilt = match layout {
        RotorLayout::Coplanar => 0.0,
        RotorLayout::Tilted { angle } => {
            let limit = std::f64::consts::FRAC_PI_3;
            if !(angle.abs() < limit) || angle == 0.0 {
                return Err(VehicleError::Parameter {
                    name: "tilt_angle",
                    reason: format!("tilt must be nonzero and within (−π/3, π/3), got {angle}"),
                });
            }
            angle
        }
    };
    let rotors = (0..6)
        .map(|k| {
            let azimuth = k as f64 * std::f64::consts::FRAC_PI_3;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let arm = Vector3::new(azimuth.cos(), azimuth.sin(), 0.0);
            let alpha = sign * tilt;
            // Rodrigues rotation of e₃ about the arm (arm ⟂ e₃).
            let axis = Vector3::z() * alpha.cos() + arm.cross(&Vector3::z()) * alpha.sin();
            RotorUnit {
                position_body: arm * spec.arm_length,
                axis_body: axis.normalize(),
                spin_sign: sign,
                thrust_coeff: spec.thrust_coeff,
                drag_coeff: spec.drag_coeff,
            }
        })
        .collect();
    let fill = |v: f64| DVector::from_element(6, v);
    MravParams::new(
        spec.mass,
        Matrix3::from_diagonal(&Vector3::from(spec.inertia_diag)),
        rotors,
        fill(spec.speed_min),
        fill(spec.speed_max),
        fill(spec.accel_min),
        fill(spec.accel_max),
        spec.gravity,
    )
}
