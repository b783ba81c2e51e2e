use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::kinematics::{euler_rate_map, euler_rate_map_partials, rotation_from_euler, rotation_partials};
use super::{state_dim, MravParams, VehicleError, EUL, POS, RATE, ROTOR, VEL};

/// Augmented GTMR state `(p, η, v, ω, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub position: Vector3<f64>,
    pub euler: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub body_rates: Vector3<f64>,
    pub rotor_speeds: DVector<f64>,
}

/// Rotor accelerations `u̇` (Hz/s).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub rotor_accels: DVector<f64>,
}

impl ControlInput {
    pub fn zeros(rotor_count: usize) -> Self {
        Self {
            rotor_accels: DVector::zeros(rotor_count),
        }
    }
}

impl VehicleState {
    /// Level hover at `position` with the rotor speeds that balance gravity.
    pub fn hover(params: &MravParams, position: Vector3<f64>) -> Result<Self, VehicleError> {
        Ok(Self {
            position,
            euler: Vector3::zeros(),
            velocity: Vector3::zeros(),
            body_rates: Vector3::zeros(),
            rotor_speeds: params.hover_speeds()?,
        })
    }

    pub fn rotor_count(&self) -> usize {
        self.rotor_speeds.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(state_dim(self.rotor_count()));
        x.fixed_rows_mut::<3>(POS).copy_from(&self.position);
        x.fixed_rows_mut::<3>(EUL).copy_from(&self.euler);
        x.fixed_rows_mut::<3>(VEL).copy_from(&self.velocity);
        x.fixed_rows_mut::<3>(RATE).copy_from(&self.body_rates);
        x.rows_mut(ROTOR, self.rotor_count()).copy_from(&self.rotor_speeds);
        x
    }

    pub fn from_slice(x: &[f64]) -> Result<Self, VehicleError> {
        if x.len() < ROTOR + 4 {
            return Err(VehicleError::Dimension {
                expected: ROTOR + 4,
                got: x.len(),
            });
        }
        let v3 = |i: usize| Vector3::new(x[i], x[i + 1], x[i + 2]);
        Ok(Self {
            position: v3(POS),
            euler: v3(EUL),
            velocity: v3(VEL),
            body_rates: v3(RATE),
            rotor_speeds: DVector::from_column_slice(&x[ROTOR..]),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

fn check_dims(params: &MravParams, x: &[f64], udot: &[f64]) -> Result<(), VehicleError> {
    let n = params.rotor_count();
    if x.len() != state_dim(n) {
        return Err(VehicleError::Dimension {
            expected: state_dim(n),
            got: x.len(),
        });
    }
    if udot.len() != n {
        return Err(VehicleError::Dimension {
            expected: n,
            got: udot.len(),
        });
    }
    Ok(())
}

fn v3(x: &[f64], i: usize) -> Vector3<f64> {
    Vector3::new(x[i], x[i + 1], x[i + 2])
}

/// Newton–Euler right-hand side on the flat state, written into `out`.
pub fn rhs_flat(params: &MravParams, x: &[f64], udot: &[f64], out: &mut [f64]) -> Result<(), VehicleError> {
    check_dims(params, x, udot)?;
    let n = params.rotor_count();
    let eta = v3(x, EUL);
    let omega = v3(x, RATE);
    let t_map = euler_rate_map(&eta)?;
    let r = rotation_from_euler(&eta);
    let xi = params.thrusts(&x[ROTOR..]);
    let force_body = params.force_map() * &xi;
    let moment_body = params.moment_map() * &xi;
    let j = params.inertia();

    let eta_dot = t_map * omega;
    let v_dot = r * force_body / params.mass() - Vector3::z() * params.gravity;
    let w_dot = params.inertia_inv() * (moment_body - omega.cross(&(j * omega)));

    out[POS..POS + 3].copy_from_slice(&x[VEL..VEL + 3]);
    out[EUL..EUL + 3].copy_from_slice(eta_dot.as_slice());
    out[VEL..VEL + 3].copy_from_slice(v_dot.as_slice());
    out[RATE..RATE + 3].copy_from_slice(w_dot.as_slice());
    out[ROTOR..ROTOR + n].copy_from_slice(udot);
    Ok(())
}

/// `∂f/∂x` of [`rhs_flat`]. The input Jacobian is constant: identity on the
/// rotor-speed rows.
pub fn rhs_jacobian(params: &MravParams, x: &[f64]) -> Result<DMatrix<f64>, VehicleError> {
    let n = params.rotor_count();
    let nx = state_dim(n);
    if x.len() != nx {
        return Err(VehicleError::Dimension { expected: nx, got: x.len() });
    }
    let eta = v3(x, EUL);
    let omega = v3(x, RATE);
    let t_map = euler_rate_map(&eta)?;
    let dt_map = euler_rate_map_partials(&eta)?;
    let r = rotation_from_euler(&eta);
    let dr = rotation_partials(&eta);
    let speeds = &x[ROTOR..];
    let xi = params.thrusts(speeds);
    let force_body = params.force_map() * &xi;
    let j = params.inertia();
    let j_inv = params.inertia_inv();
    let m = params.mass();

    let mut jac = DMatrix::zeros(nx, nx);
    for k in 0..3 {
        jac[(POS + k, VEL + k)] = 1.0;
    }
    for a in 0..2 {
        let col = dt_map[a] * omega;
        for k in 0..3 {
            jac[(EUL + k, EUL + a)] = col[k];
        }
    }
    jac.fixed_view_mut::<3, 3>(EUL, RATE).copy_from(&t_map);
    for a in 0..3 {
        let col = dr[a] * force_body / m;
        for k in 0..3 {
            jac[(VEL + k, EUL + a)] = col[k];
        }
    }
    let skew = |w: &Vector3<f64>| Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0);
    let jw = j * omega;
    let d_gyro = j_inv * (skew(&jw) - skew(&omega) * j);
    jac.fixed_view_mut::<3, 3>(RATE, RATE).copy_from(&d_gyro);
    for (i, rotor) in params.rotors().iter().enumerate() {
        let dxi = 2.0 * rotor.thrust_coeff * speeds[i];
        let dv = r * params.force_map().column(i) * (dxi / m);
        let dw = j_inv * params.moment_map().column(i) * dxi;
        for k in 0..3 {
            jac[(VEL + k, ROTOR + i)] = dv[k];
            jac[(RATE + k, ROTOR + i)] = dw[k];
        }
    }
    Ok(jac)
}

/// Continuous-time derivative of `state` under `input`. The returned value
/// reuses [`VehicleState`] as a container for `(ṗ, η̇, v̇, ω̇, u̇)`.
pub fn dynamics_rhs(
    state: &VehicleState,
    input: &ControlInput,
    params: &MravParams,
) -> Result<VehicleState, VehicleError> {
    let x = state.to_vector();
    let mut out = vec![0.0; x.len()];
    rhs_flat(params, x.as_slice(), input.rotor_accels.as_slice(), &mut out)?;
    VehicleState::from_slice(&out)
}

fn axpy(y: &mut [f64], a: f64, x: &[f64], base: &[f64]) {
    for ((yi, xi), bi) in y.iter_mut().zip(x).zip(base) {
        *yi = bi + a * xi;
    }
}

/// One classical RK4 step of length `dt` on the flat state (input held).
pub fn rk4_flat(params: &MravParams, x: &[f64], udot: &[f64], dt: f64) -> Result<DVector<f64>, VehicleError> {
    if !(dt > 0.0) {
        return Err(VehicleError::InvalidStep(dt));
    }
    let nx = x.len();
    let mut k1 = vec![0.0; nx];
    let mut k2 = vec![0.0; nx];
    let mut k3 = vec![0.0; nx];
    let mut k4 = vec![0.0; nx];
    let mut tmp = vec![0.0; nx];
    rhs_flat(params, x, udot, &mut k1)?;
    axpy(&mut tmp, 0.5 * dt, &k1, x);
    rhs_flat(params, &tmp, udot, &mut k2)?;
    axpy(&mut tmp, 0.5 * dt, &k2, x);
    rhs_flat(params, &tmp, udot, &mut k3)?;
    axpy(&mut tmp, dt, &k3, x);
    rhs_flat(params, &tmp, udot, &mut k4)?;
    let next = DVector::from_iterator(
        nx,
        (0..nx).map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])),
    );
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(VehicleError::NonFinite)
    }
}

/// RK4 step together with its exact sensitivities `A = ∂x⁺/∂x` and
/// `B = ∂x⁺/∂u̇`, obtained by differentiating each stage.
pub fn rk4_with_jacobians(
    params: &MravParams,
    x: &[f64],
    udot: &[f64],
    dt: f64,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), VehicleError> {
    if !(dt > 0.0) {
        return Err(VehicleError::InvalidStep(dt));
    }
    let n = params.rotor_count();
    let nx = x.len();
    let mut f_u = DMatrix::zeros(nx, n);
    for i in 0..n {
        f_u[(ROTOR + i, i)] = 1.0;
    }
    let eye = DMatrix::<f64>::identity(nx, nx);

    let mut k = [vec![0.0; nx], vec![0.0; nx], vec![0.0; nx], vec![0.0; nx]];
    let mut tmp = vec![0.0; nx];
    let scales = [0.5 * dt, 0.5 * dt, dt];

    rhs_flat(params, x, udot, &mut k[0])?;
    let jac1 = rhs_jacobian(params, x)?;
    let mut dkx = vec![jac1];
    let mut dku = vec![f_u.clone()];
    for s in 0..3 {
        let (done, rest) = k.split_at_mut(s + 1);
        axpy(&mut tmp, scales[s], &done[s], x);
        rhs_flat(params, &tmp, udot, &mut rest[0])?;
        let jac = rhs_jacobian(params, &tmp)?;
        let dx = &jac * (&eye + &dkx[s] * scales[s]);
        let du = &jac * (&dku[s] * scales[s]) + &f_u;
        dkx.push(dx);
        dku.push(du);
    }
    let next = DVector::from_iterator(
        nx,
        (0..nx).map(|i| x[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i])),
    );
    if !next.iter().all(|v| v.is_finite()) {
        return Err(VehicleError::NonFinite);
    }
    let a = &eye + (&dkx[0] + &dkx[1] * 2.0 + &dkx[2] * 2.0 + &dkx[3]) * (dt / 6.0);
    let b = (&dku[0] + &dku[1] * 2.0 + &dku[2] * 2.0 + &dku[3]) * (dt / 6.0);
    Ok((next, a, b))
}

/// Classical RK4 over [`dynamics_rhs`] without saturation (prediction model).
pub fn step_rk4(
    state: &VehicleState,
    input: &ControlInput,
    params: &MravParams,
    dt: f64,
) -> Result<VehicleState, VehicleError> {
    let x = state.to_vector();
    let next = rk4_flat(params, x.as_slice(), input.rotor_accels.as_slice(), dt)?;
    VehicleState::from_slice(next.as_slice())
}

/// RK4 step as the simulated plant: rotor speeds saturate at their bounds.
pub fn step_plant(
    state: &VehicleState,
    input: &ControlInput,
    params: &MravParams,
    dt: f64,
) -> Result<VehicleState, VehicleError> {
    let mut next = step_rk4(state, input, params, dt)?;
    for i in 0..next.rotor_count() {
        next.rotor_speeds[i] = next.rotor_speeds[i].clamp(params.speed_min[i], params.speed_max[i]);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{build_hexarotor, HexarotorSpec, RotorLayout, RotorUnit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coplanar() -> MravParams {
        build_hexarotor(RotorLayout::Coplanar, &HexarotorSpec::default()).unwrap()
    }

    fn tilted() -> MravParams {
        build_hexarotor(RotorLayout::Tilted { angle: 20f64.to_radians() }, &HexarotorSpec::default()).unwrap()
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let p = coplanar();
        let s = VehicleState::hover(&p, Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let d = dynamics_rhs(&s, &ControlInput::zeros(6), &p).unwrap();
        assert!(d.velocity.norm() < 1e-12, "v̇ = {}", d.velocity);
        assert!(d.body_rates.norm() < 1e-12);
    }

    #[test]
    fn zero_thrust_is_free_fall() {
        let p = coplanar();
        let mut s = VehicleState::hover(&p, Vector3::zeros()).unwrap();
        s.rotor_speeds.fill(0.0);
        let d = dynamics_rhs(&s, &ControlInput::zeros(6), &p).unwrap();
        assert_eq!(d.velocity, Vector3::new(0.0, 0.0, -9.81));
    }

    #[test]
    fn alternate_rotor_speedup_gives_pure_yaw() {
        let p = coplanar();
        let mut s = VehicleState::hover(&p, Vector3::zeros()).unwrap();
        for i in (0..6).step_by(2) {
            s.rotor_speeds[i] += 5.0;
        }
        let d = dynamics_rhs(&s, &ControlInput::zeros(6), &p).unwrap();
        assert!(d.body_rates.x.abs() < 1e-12 && d.body_rates.y.abs() < 1e-12);
        assert!(d.body_rates.z.abs() > 1e-3);
    }

    #[test]
    fn hover_step_keeps_position() {
        let p = coplanar();
        let s = VehicleState::hover(&p, Vector3::new(0.0, 0.0, 5.0)).unwrap();
        let next = step_rk4(&s, &ControlInput::zeros(6), &p, 1e-3).unwrap();
        assert!((next.position - s.position).norm() < 1e-9);
    }

    #[test]
    fn free_fall_matches_closed_form() {
        let p = coplanar();
        let mut s = VehicleState::hover(&p, Vector3::zeros()).unwrap();
        s.rotor_speeds.fill(0.0);
        let spec = HexarotorSpec {
            speed_min: 0.0,
            ..HexarotorSpec::default()
        };
        let p0 = build_hexarotor(RotorLayout::Coplanar, &spec).unwrap();
        let _ = p;
        for _ in 0..1000 {
            s = step_rk4(&s, &ControlInput::zeros(6), &p0, 1e-3).unwrap();
        }
        assert!((s.position.z + 4.905).abs() < 1e-6, "z = {}", s.position.z);
    }

    #[test]
    fn plant_saturates_rotor_speeds() {
        let p = coplanar();
        let s = VehicleState::hover(&p, Vector3::zeros()).unwrap();
        let input = ControlInput {
            rotor_accels: DVector::from_element(6, 400.0),
        };
        let mut x = s;
        for _ in 0..200 {
            x = step_plant(&x, &input, &p, 1e-3).unwrap();
        }
        assert!(x.rotor_speeds.iter().all(|&u| u == 100.0));
    }

    #[test]
    fn rejects_nonpositive_step() {
        let p = coplanar();
        let s = VehicleState::hover(&p, Vector3::zeros()).unwrap();
        assert_eq!(
            step_rk4(&s, &ControlInput::zeros(6), &p, 0.0).unwrap_err(),
            VehicleError::InvalidStep(0.0)
        );
    }

    #[test]
    fn gimbal_lock_is_reported() {
        let p = coplanar();
        let mut s = VehicleState::hover(&p, Vector3::zeros()).unwrap();
        s.euler.y = std::f64::consts::FRAC_PI_2;
        assert!(matches!(
            dynamics_rhs(&s, &ControlInput::zeros(6), &p),
            Err(VehicleError::Singular { .. })
        ));
    }

    #[test]
    fn zero_moment_keeps_rates_zero() {
        // Plus-shaped quad on exactly representable arms: with equal speeds
        // every moment contribution cancels bit for bit.
        let arms = [Vector3::x(), -Vector3::x(), Vector3::y(), -Vector3::y()];
        let rotors = arms
            .iter()
            .zip([1.0, 1.0, -1.0, -1.0])
            .map(|(&position_body, spin_sign)| RotorUnit {
                position_body,
                axis_body: Vector3::z(),
                spin_sign,
                thrust_coeff: 1.18e-3,
                drag_coeff: 2e-5,
            })
            .collect();
        let n = 4;
        let p = MravParams::new(
            2.57,
            Matrix3::from_diagonal(&Vector3::new(0.11, 0.11, 0.19)),
            rotors,
            DVector::from_element(n, 16.0),
            DVector::from_element(n, 100.0),
            DVector::from_element(n, -300.0),
            DVector::from_element(n, 400.0),
            9.81,
        )
        .unwrap();
        let mut s = VehicleState::hover(&p, Vector3::zeros()).unwrap();
        s.rotor_speeds = DVector::from_element(n, 60.0);
        let input = ControlInput {
            rotor_accels: DVector::from_element(n, 30.0),
        };
        for _ in 0..500 {
            s = step_rk4(&s, &input, &p, 1e-3).unwrap();
            assert!(s.body_rates.iter().all(|&w| w == 0.0));
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, p: &MravParams) -> DVector<f64> {
        let mut x = VehicleState::hover(p, Vector3::zeros()).unwrap().to_vector();
        for i in 0..12 {
            x[i] += rng.random_range(-0.5..0.5);
        }
        for i in 12..x.len() {
            x[i] += rng.random_range(-10.0..10.0);
        }
        x
    }

    #[test]
    fn continuous_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in [coplanar(), tilted()] {
            for _ in 0..20 {
                let x = random_state(&mut rng, &p);
                let jac = rhs_jacobian(&p, x.as_slice()).unwrap();
                let u = vec![0.0; 6];
                let h = 1e-6;
                for j in 0..x.len() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let mut fp = vec![0.0; x.len()];
                    let mut fm = vec![0.0; x.len()];
                    rhs_flat(&p, xp.as_slice(), &u, &mut fp).unwrap();
                    rhs_flat(&p, xm.as_slice(), &u, &mut fm).unwrap();
                    for i in 0..x.len() {
                        let num = (fp[i] - fm[i]) / (2.0 * h);
                        assert!((num - jac[(i, j)]).abs() < 1e-6 * (1.0 + num.abs()), "({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn discrete_sensitivities_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = tilted();
        let dt = 0.015;
        for _ in 0..10 {
            let x = random_state(&mut rng, &p);
            let u: Vec<f64> = (0..6).map(|_| rng.random_range(-200.0..200.0)).collect();
            let (next, a, b) = rk4_with_jacobians(&p, x.as_slice(), &u, dt).unwrap();
            assert_eq!(next, rk4_flat(&p, x.as_slice(), &u, dt).unwrap());
            let h = 1e-6;
            for j in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let d = (rk4_flat(&p, xp.as_slice(), &u, dt).unwrap() - rk4_flat(&p, xm.as_slice(), &u, dt).unwrap())
                    / (2.0 * h);
                assert!((d - a.column(j)).amax() < 1e-6);
            }
            for j in 0..6 {
                let mut up = u.clone();
                let mut um = u.clone();
                up[j] += 1e-3;
                um[j] -= 1e-3;
                let d = (rk4_flat(&p, x.as_slice(), &up, dt).unwrap() - rk4_flat(&p, x.as_slice(), &um, dt).unwrap())
                    / 2e-3;
                assert!((d - b.column(j)).amax() < 1e-8);
            }
        }
    }
}
