//! Independent checks used by the test suite and the `audit` subcommand.
//!
//! Nothing here calls the analytic derivatives or the solver it verifies.

use std::fmt;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use thiserror::Error;

use crate::exec::{map_range, Execution};
use crate::scenario::ScenarioConfig;
use crate::sim::{SimLog, SimRow};
use crate::trajgen::{inverse_capacity, ConservativeParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("non-finite sample at offset {offset:?}")]
    NonFinite { offset: Vec<f64> },
    #[error("empty grid: {0}")]
    EmptyGrid(&'static str),
    #[error("invalid step {0}")]
    Step(f64),
}

/// Step lengths for [`finite_diff_check`]. The Hessian uses its own, larger
/// step since second differences lose twice the digits to round-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSteps {
    pub grad: f64,
    pub hess: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self { grad: 1e-4, hess: 1e-3 }
    }
}

impl FdSteps {
    pub fn uniform(h: f64) -> Self {
        Self { grad: h, hess: h }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub max_rel_err_grad: f64,
    pub max_rel_err_hess: f64,
    pub worst_case_point: Vector6<f64>,
    pub fd_gradient: Vector6<f64>,
    pub fd_hessian: Matrix6<f64>,
}

const ABS_FLOOR: f64 = 1e-10;

/// Central-difference gradient and Hessian of `f` at `x`, compared against
/// `grad` and `hess`. Errors are max-norm relative, `‖a−b‖∞ / max(‖b‖∞, 1e-10)`.
/// `f` returning `None` or a non-finite value is an error.
pub fn finite_diff_check<F>(
    f: F,
    x: &Vector6<f64>,
    steps: FdSteps,
    grad: &Vector6<f64>,
    hess: &Matrix6<f64>,
) -> Result<DerivativeReport, OracleError>
where
    F: Fn(&Vector6<f64>) -> Option<f64>,
{
    for h in [steps.grad, steps.hess] {
        if !(h > 0.0 && h.is_finite()) {
            return Err(OracleError::Step(h));
        }
    }
    let eval = |offset: Vector6<f64>| -> Result<f64, OracleError> {
        match f(&(x + offset)) {
            Some(v) if v.is_finite() => Ok(v),
            _ => Err(OracleError::NonFinite {
                offset: offset.iter().copied().collect(),
            }),
        }
    };
    let e = |i: usize, h: f64| {
        let mut v = Vector6::zeros();
        v[i] = h;
        v
    };

    let mut fd_grad = Vector6::zeros();
    for i in 0..6 {
        let h = steps.grad;
        fd_grad[i] = (eval(e(i, h))? - eval(e(i, -h))?) / (2.0 * h);
    }

    let h = steps.hess;
    let f0 = eval(Vector6::zeros())?;
    let mut fd_hess = Matrix6::zeros();
    for i in 0..6 {
        fd_hess[(i, i)] = (eval(e(i, h))? - 2.0 * f0 + eval(e(i, -h))?) / (h * h);
        for j in 0..i {
            let pp = eval(e(i, h) + e(j, h))?;
            let pm = eval(e(i, h) + e(j, -h))?;
            let mp = eval(e(i, -h) + e(j, h))?;
            let mm = eval(e(i, -h) + e(j, -h))?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            fd_hess[(i, j)] = v;
            fd_hess[(j, i)] = v;
        }
    }

    let rel = |diff: f64, scale: f64| diff / scale.max(ABS_FLOOR);
    Ok(DerivativeReport {
        max_rel_err_grad: rel((fd_grad - grad).amax(), grad.amax()),
        max_rel_err_hess: rel((fd_hess - hess).amax(), hess.amax()),
        worst_case_point: *x,
        fd_gradient: fd_grad,
        fd_hessian: fd_hess,
    })
}

/// Run [`finite_diff_check`] at several points and keep the worst errors.
pub fn finite_diff_sweep<F, D>(
    f: F,
    derivs: D,
    points: &[Vector6<f64>],
    steps: FdSteps,
    exec: Execution,
) -> Result<DerivativeReport, OracleError>
where
    F: Fn(&Vector6<f64>) -> Option<f64> + Sync,
    D: Fn(&Vector6<f64>) -> Option<(Vector6<f64>, Matrix6<f64>)> + Sync,
{
    if points.is_empty() {
        return Err(OracleError::EmptyGrid("no sample points"));
    }
    let reports = crate::exec::map_slice(exec, points, |p| {
        let (g, h) = derivs(p).ok_or(OracleError::NonFinite {
            offset: vec![0.0; 6],
        })?;
        finite_diff_check(&f, p, steps, &g, &h)
    });
    let mut worst: Option<DerivativeReport> = None;
    let mut worst_hess = 0.0f64;
    for r in reports {
        let r = r?;
        worst_hess = worst_hess.max(r.max_rel_err_hess);
        match &worst {
            Some(w) if w.max_rel_err_grad >= r.max_rel_err_grad => {}
            _ => worst = Some(r),
        }
    }
    let mut w = worst.expect("non-empty");
    w.max_rel_err_hess = worst_hess;
    Ok(w)
}

/// Best grid point found by [`grid_search_relay`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMinimum {
    pub position: Vector3<f64>,
    pub value: f64,
    pub evaluated: usize,
}

fn better(a: &GridMinimum, b: &GridMinimum) -> bool {
    if a.value != b.value {
        return a.value < b.value;
    }
    let (pa, pb) = (a.position, b.position);
    (pa.x, pa.y, pa.z) < (pb.x, pb.y, pb.z)
}

/// Exhaustive minimum of the conservative inverse capacity over a cubic grid
/// of `half_width` around `center`. Points coincident with a node are skipped.
/// Slabs along x run in parallel under [`Execution::Parallel`]; ties go to the
/// lexicographically smallest position so the result is order independent.
pub fn grid_search_relay(
    params: &ConservativeParams,
    source_pos: &Vector3<f64>,
    center: &Vector3<f64>,
    half_width: f64,
    resolution: f64,
    exec: Execution,
) -> Result<GridMinimum, OracleError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(OracleError::Step(resolution));
    }
    if !(half_width >= 0.0 && half_width.is_finite()) {
        return Err(OracleError::EmptyGrid("negative half width"));
    }
    let per_side = (2.0 * half_width / resolution + 1e-9).floor() as usize + 1;
    let coord = |i: usize| -half_width + i as f64 * resolution;
    let slabs = map_range(exec, per_side, |i| {
        let mut best: Option<GridMinimum> = None;
        let mut evaluated = 0;
        for j in 0..per_side {
            for k in 0..per_side {
                let p = center + Vector3::new(coord(i), coord(j), coord(k));
                let Ok(value) = inverse_capacity(&p, source_pos, params) else { continue };
                if !value.is_finite() {
                    continue;
                }
                evaluated += 1;
                let cand = GridMinimum { position: p, value, evaluated: 0 };
                if best.as_ref().map_or(true, |b| better(&cand, b)) {
                    best = Some(cand);
                }
            }
        }
        best.map(|b| GridMinimum { evaluated, ..b })
    });
    let mut total = 0;
    let mut best: Option<GridMinimum> = None;
    for s in slabs.into_iter().flatten() {
        total += s.evaluated;
        if best.as_ref().map_or(true, |b| better(&s, b)) {
            best = Some(s);
        }
    }
    best.map(|b| GridMinimum { evaluated: total, ..b })
        .ok_or(OracleError::EmptyGrid("no admissible grid point"))
}

/// Tolerances for [`audit_run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditLimits {
    pub speed_min: f64,
    pub speed_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    /// Slack allowed on every inequality.
    pub margin: f64,
    pub orthonormality: f64,
    /// Relative tolerance on the logged end-to-end capacity.
    pub capacity: f64,
}

impl Default for AuditLimits {
    fn default() -> Self {
        let s = crate::vehicle::HexarotorSpec::default();
        Self {
            speed_min: s.speed_min,
            speed_max: s.speed_max,
            accel_min: s.accel_min,
            accel_max: s.accel_max,
            margin: 1e-9,
            orthonormality: 1e-10,
            capacity: 1e-12,
        }
    }
}

impl AuditLimits {
    pub fn from_config(config: &ScenarioConfig) -> Self {
        let s = &config.airframe;
        Self {
            speed_min: s.speed_min,
            speed_max: s.speed_max,
            accel_min: s.accel_min,
            accel_max: s.accel_max,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Check {
    SpeedMin { rotor: usize },
    SpeedMax { rotor: usize },
    AccelMin { rotor: usize },
    AccelMax { rotor: usize },
    SlackMin,
    SlackMax,
    HarmonicBound,
    Orthonormality,
    CapacityConsistency,
    NonFinite,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Check::SpeedMin { rotor } => write!(f, "u{} below speed_min", rotor + 1),
            Check::SpeedMax { rotor } => write!(f, "u{} above speed_max", rotor + 1),
            Check::AccelMin { rotor } => write!(f, "udot{} below accel_min", rotor + 1),
            Check::AccelMax { rotor } => write!(f, "udot{} above accel_max", rotor + 1),
            Check::SlackMin => f.write_str("negative slack_min"),
            Check::SlackMax => f.write_str("negative slack_max"),
            Check::HarmonicBound => f.write_str("capacity above B*min(eff)"),
            Check::Orthonormality => f.write_str("rotation not orthonormal"),
            Check::CapacityConsistency => f.write_str("capacity inconsistent with eff_21, eff_10"),
            Check::NonFinite => f.write_str("non-finite entry"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub row: usize,
    pub t: f64,
    pub check: Check,
    pub value: f64,
    pub limit: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "row {} (t = {:.3} s): {} (value {:e}, limit {:e})",
            self.row, self.t, self.check, self.value, self.limit
        )
    }
}

// Written out by hand rather than through the vehicle module.
fn zyx_rotation(eta: &Vector3<f64>) -> Matrix3<f64> {
    let (sr, cr) = eta.x.sin_cos();
    let (sp, cp) = eta.y.sin_cos();
    let (sy, cy) = eta.z.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

fn row_is_finite(row: &SimRow) -> bool {
    let scalars = [
        row.t,
        row.slack_min,
        row.slack_max,
        row.eff_21,
        row.eff_10,
        row.capacity,
    ];
    scalars.iter().all(|x| x.is_finite())
        && row.euler.iter().all(|x| x.is_finite())
        && row.rotor_speeds.iter().all(|x| x.is_finite())
        && row.rotor_accels.iter().all(|x| x.is_finite())
}

/// Row-wise invariant audit of a closed-loop log. An empty result means the
/// run is clean.
pub fn audit_run(log: &SimLog, limits: &AuditLimits) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, row) in log.rows.iter().enumerate() {
        let mut push = |check, value, limit| out.push(Violation { row: i, t: row.t, check, value, limit });
        if !row_is_finite(row) {
            push(Check::NonFinite, f64::NAN, 0.0);
            continue;
        }
        let m = limits.margin;
        for (k, &u) in row.rotor_speeds.iter().enumerate() {
            if u < limits.speed_min - m {
                push(Check::SpeedMin { rotor: k }, u, limits.speed_min);
            }
            if u > limits.speed_max + m {
                push(Check::SpeedMax { rotor: k }, u, limits.speed_max);
            }
        }
        for (k, &a) in row.rotor_accels.iter().enumerate() {
            if a < limits.accel_min - m {
                push(Check::AccelMin { rotor: k }, a, limits.accel_min);
            }
            if a > limits.accel_max + m {
                push(Check::AccelMax { rotor: k }, a, limits.accel_max);
            }
        }
        if row.slack_min < -m {
            push(Check::SlackMin, row.slack_min, 0.0);
        }
        if row.slack_max < -m {
            push(Check::SlackMax, row.slack_max, 0.0);
        }

        let b = log.bandwidth;
        let (a1, a2) = (row.eff_21, row.eff_10);
        let bound = b * a1.min(a2).max(0.0);
        if row.capacity > bound * (1.0 + limits.capacity) + m {
            push(Check::HarmonicBound, row.capacity, bound);
        }
        let expected = if a1 > 0.0 && a2 > 0.0 { b / (1.0 / a1 + 1.0 / a2) } else { 0.0 };
        if (row.capacity - expected).abs() > limits.capacity * expected.abs().max(1.0) {
            push(Check::CapacityConsistency, row.capacity, expected);
        }

        let r = zyx_rotation(&row.euler);
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > limits.orthonormality {
            push(Check::Orthonormality, err, limits.orthonormality);
        }
    }
    out
}
