use nalgebra::{DMatrix, DVector};

use super::qp::{solve_qp, LinearConstraint, QpProblem, QpSettings, QpStatus};
use super::{misalignment_pair, NmpcError, OcpConfig, OcpSolution, StageReference};
use crate::vehicle::{
    rk4_flat, rk4_with_jacobians, state_dim, thrust_direction_jacobian, ControlInput, MravParams,
    VehicleState, EUL, POS, RATE, ROTOR, VEL,
};

/// QP variable unit for rotor accelerations (Hz/s).
const INPUT_UNIT: f64 = 100.0;
const NRES: usize = 14;
const HESSIAN_FLOOR: f64 = 1e-10;
const LINE_SEARCH_STEPS: usize = 4;
const DEFECT_PENALTY: f64 = 1e3;

#[derive(Clone)]
struct Iterate {
    x: Vec<DVector<f64>>,
    u: Vec<DVector<f64>>,
    pi: Vec<f64>,
}

struct Evaluation {
    cost: f64,
    merit: f64,
    max_defect: f64,
}

struct Problem<'a> {
    initial: DVector<f64>,
    refs: &'a [StageReference],
    prev_input: &'a DVector<f64>,
    params: &'a MravParams,
    config: &'a OcpConfig,
    w_stage: DMatrix<f64>,
    w_terminal: DMatrix<f64>,
    n: usize,
    nx: usize,
    nu: usize,
}

impl Problem<'_> {
    fn slack_count(&self) -> usize {
        if self.config.alignment_constraint { self.n + 1 } else { 0 }
    }

    /// Stacked residual `[e; v₁₂; v₁₀; ω]` and its state Jacobian.
    fn residual(&self, x: &DVector<f64>, k: usize) -> Result<(DVector<f64>, DMatrix<f64>), NmpcError> {
        let state = VehicleState::from_slice(x.as_slice())?;
        let reference = &self.refs[k];
        let e = super::tracking_error(&state, reference, self.config.direction, self.config.gravity);
        let (a, b) = misalignment_pair(&state, reference)?;
        let mut r = DVector::zeros(NRES);
        r.rows_mut(0, 9).copy_from(&e);
        r[9] = a.value;
        r[10] = b.value;
        r.rows_mut(11, 3).copy_from(&state.body_rates);
        let mut jac = DMatrix::zeros(NRES, self.nx);
        for i in 0..3 {
            jac[(i, POS + i)] = 1.0;
            jac[(3 + i, VEL + i)] = 1.0;
            jac[(11 + i, RATE + i)] = 1.0;
        }
        jac.view_mut((6, EUL), (3, 3)).copy_from(&thrust_direction_jacobian(&state.euler));
        for (row, m) in [(9, a), (10, b)] {
            for i in 0..3 {
                jac[(row, POS + i)] = m.grad_position[i];
                jac[(row, EUL + i)] = m.grad_euler[i];
            }
        }
        Ok((r, jac))
    }

    /// Alignment residual `(1−v₁₂)(1−v₁₀) − μ` and its state gradient.
    fn alignment(&self, x: &DVector<f64>, k: usize) -> Result<(f64, DVector<f64>), NmpcError> {
        let state = VehicleState::from_slice(x.as_slice())?;
        let (a, b) = misalignment_pair(&state, &self.refs[k])?;
        let value = (1.0 - a.value) * (1.0 - b.value) - self.config.alignment_floor;
        let mut grad = DVector::zeros(self.nx);
        for i in 0..3 {
            grad[POS + i] = -(1.0 - b.value) * a.grad_position[i] - (1.0 - a.value) * b.grad_position[i];
            grad[EUL + i] = -(1.0 - b.value) * a.grad_euler[i] - (1.0 - a.value) * b.grad_euler[i];
        }
        Ok((value, grad))
    }

    fn weight(&self, k: usize) -> &DMatrix<f64> {
        if k == self.n { &self.w_terminal } else { &self.w_stage }
    }

    fn input_var_weight(&self) -> DMatrix<f64> {
        let s = self.config.input_rate_scale;
        &self.config.weight_input_var * (s * s)
    }

    fn evaluate(&self, it: &Iterate) -> Result<Evaluation, NmpcError> {
        let mut cost = 0.0;
        for k in 0..=self.n {
            let (r, _) = self.residual(&it.x[k], k)?;
            cost += r.dot(&(self.weight(k) * &r));
        }
        let qu = self.input_var_weight();
        for k in 0..self.n {
            let prev = if k == 0 { self.prev_input } else { &it.u[k - 1] };
            let du = &it.u[k] - prev;
            cost += du.dot(&(&qu * &du));
        }
        let mut penalty = 0.0;
        if self.config.alignment_constraint {
            for k in 0..=self.n {
                cost += self.config.slack_weight * it.pi[k] * it.pi[k];
                let (a, _) = self.alignment(&it.x[k], k)?;
                penalty += (-(a + it.pi[k])).max(0.0);
            }
        }
        let mut max_defect = (&self.initial - &it.x[0]).amax();
        let dt = self.config.dt;
        for k in 0..self.n {
            let pred = rk4_flat(self.params, it.x[k].as_slice(), it.u[k].as_slice(), dt)?;
            let d = pred - &it.x[k + 1];
            max_defect = max_defect.max(d.amax());
            penalty += d.lp_norm(1);
        }
        Ok(Evaluation {
            cost,
            merit: cost + DEFECT_PENALTY * penalty,
            max_defect,
        })
    }
}

struct Step {
    du: Vec<DVector<f64>>,
    dx: Vec<DVector<f64>>,
    pi: Vec<f64>,
    status: QpStatus,
    qp_iterations: usize,
}

fn rollout(params: &MravParams, x0: &DVector<f64>, inputs: &[DVector<f64>], dt: f64) -> Result<Vec<DVector<f64>>, NmpcError> {
    let mut xs = vec![x0.clone()];
    for u in inputs {
        let next = rk4_flat(params, xs.last().unwrap().as_slice(), u.as_slice(), dt)?;
        xs.push(next);
    }
    Ok(xs)
}

fn build_and_solve(pb: &Problem, it: &Iterate, sqp_iteration: usize) -> Result<Step, NmpcError> {
    let (n, nx, nu) = (pb.n, pb.nx, pb.nu);
    let dt = pb.config.dt;
    let nzu = n * nu;
    let ns = pb.slack_count();
    let nz = nzu + ns;

    // Linearise and condense: Δx_k = c_k + G_k·Δu_{0..k}.
    let mut c = vec![&pb.initial - &it.x[0]];
    let mut g: Vec<DMatrix<f64>> = vec![DMatrix::zeros(nx, 0)];
    for k in 0..n {
        let (pred, a, b) = rk4_with_jacobians(pb.params, it.x[k].as_slice(), it.u[k].as_slice(), dt)?;
        let ck = &a * &c[k] + (pred - &it.x[k + 1]);
        let mut gk = DMatrix::zeros(nx, (k + 1) * nu);
        if k > 0 {
            gk.view_mut((0, 0), (nx, k * nu)).copy_from(&(&a * &g[k]));
        }
        gk.view_mut((0, k * nu), (nx, nu)).copy_from(&b);
        c.push(ck);
        g.push(gk);
    }

    // Gauss–Newton Hessian; stage k only touches the leading k·N_p block.
    let mut h = DMatrix::zeros(nz, nz);
    let mut grad = DVector::zeros(nz);
    for k in 1..=n {
        let m = k * nu;
        let (r, cj) = pb.residual(&it.x[k], k)?;
        let w = pb.weight(k);
        let jk = &cj * &g[k];
        let rt = r + &cj * &c[k];
        let jt = jk.transpose();
        h.view_mut((0, 0), (m, m)).gemm(1.0, &jt, &(w * &jk), 1.0);
        grad.rows_mut(0, m).gemm(1.0, &jt, &(w * rt), 1.0);
    }
    let qu = pb.input_var_weight();
    for k in 0..n {
        let prev = if k == 0 { pb.prev_input } else { &it.u[k - 1] };
        let gq = &qu * (&it.u[k] - prev);
        let mut hk = h.view_mut((k * nu, k * nu), (nu, nu));
        hk += &qu;
        let mut gk = grad.rows_mut(k * nu, nu);
        gk += &gq;
        if k > 0 {
            let mut hp = h.view_mut(((k - 1) * nu, (k - 1) * nu), (nu, nu));
            hp += &qu;
            let mut off = h.view_mut((k * nu, (k - 1) * nu), (nu, nu));
            off -= &qu;
            let mut off = h.view_mut(((k - 1) * nu, k * nu), (nu, nu));
            off -= &qu;
            let mut gp = grad.rows_mut((k - 1) * nu, nu);
            gp -= &gq;
        }
    }
    for s in 0..ns {
        h[(nzu + s, nzu + s)] = pb.config.slack_weight;
    }

    let mut cons = Vec::with_capacity(2 * nzu + 2 * nzu + 2 * ns);
    let p = pb.params;
    for k in 0..n {
        for i in 0..nu {
            let j = k * nu + i;
            cons.push(LinearConstraint::lower(j, p.accel_min[i] - it.u[k][i]));
            cons.push(LinearConstraint::upper(j, p.accel_max[i] - it.u[k][i]));
        }
    }
    for k in 1..=n {
        for i in 0..nu {
            let row = ROTOR + i;
            let coeffs: Vec<(usize, f64)> = (0..k * nu)
                .filter_map(|j| {
                    let v = g[k][(row, j)];
                    (v != 0.0).then_some((j, v))
                })
                .collect();
            let base = it.x[k][row] + c[k][row];
            cons.push(LinearConstraint::new(coeffs.clone(), p.speed_min[i] - base));
            cons.push(LinearConstraint::new(
                coeffs.into_iter().map(|(j, v)| (j, -v)).collect(),
                base - p.speed_max[i],
            ));
        }
    }
    if ns > 0 {
        for k in 0..=n {
            let (a, ga) = pb.alignment(&it.x[k], k)?;
            let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(k * nu + 1);
            if k > 0 {
                let row = g[k].tr_mul(&ga);
                coeffs.extend(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)));
            }
            coeffs.push((nzu + k, 1.0));
            cons.push(LinearConstraint::new(coeffs, -a - ga.dot(&c[k])));
            cons.push(LinearConstraint::lower(nzu + k, 0.0));
        }
    }

    // Scale to O(1) variables.
    let scale: Vec<f64> = (0..nz)
        .map(|j| if j < nzu { INPUT_UNIT } else { 1.0 / pb.config.slack_weight.sqrt() })
        .collect();
    for i in 0..nz {
        for j in 0..nz {
            h[(i, j)] *= scale[i] * scale[j];
        }
        h[(i, i)] += HESSIAN_FLOOR;
        grad[i] *= scale[i];
    }
    for con in &mut cons {
        for (j, v) in &mut con.coeffs {
            *v *= scale[*j];
        }
    }
    let qp = QpProblem {
        hessian: h,
        gradient: grad,
        constraints: cons,
    };
    let sol = solve_qp(
        &qp,
        &QpSettings {
            tolerance: pb.config.qp_tolerance,
            ..QpSettings::default()
        },
    );
    if sol.status != QpStatus::Optimal {
        return Err(NmpcError::Qp {
            status: sol.status,
            iteration: sqp_iteration,
            active: sol.active.len(),
            max_violation: sol.max_violation,
        });
    }
    let w = DVector::from_iterator(nz, (0..nz).map(|j| sol.x[j] * scale[j]));
    let du: Vec<DVector<f64>> = (0..n).map(|k| w.rows(k * nu, nu).into_owned()).collect();
    let dx: Vec<DVector<f64>> = (0..=n)
        .map(|k| {
            if k == 0 {
                c[0].clone()
            } else {
                &c[k] + &g[k] * w.rows(0, k * nu)
            }
        })
        .collect();
    let pi = (0..ns).map(|s| w[nzu + s].max(0.0)).collect();
    Ok(Step {
        du,
        dx,
        pi,
        status: sol.status,
        qp_iterations: sol.iterations,
    })
}

fn apply(pb: &Problem, it: &Iterate, step: &Step, alpha: f64) -> Iterate {
    let p = pb.params;
    let u = it
        .u
        .iter()
        .zip(&step.du)
        .map(|(u, du)| {
            let mut v = u + du * alpha;
            for i in 0..v.len() {
                v[i] = v[i].clamp(p.accel_min[i], p.accel_max[i]);
            }
            v
        })
        .collect();
    let x = it.x.iter().zip(&step.dx).map(|(x, dx)| x + dx * alpha).collect();
    let pi = it
        .pi
        .iter()
        .zip(&step.pi)
        .map(|(&a, &b)| (a + alpha * (b - a)).max(0.0))
        .collect();
    Iterate { x, u, pi }
}

/// Gauss–Newton SQP on the multiple-shooting problem.
///
/// The first iteration takes the full QP step (real-time iteration). Further
/// iterations, up to `config.sqp_iters`, run while `kkt_residual` exceeds
/// `config.kkt_tolerance` and are accepted only if they lower the merit
/// (cost plus an ℓ₁ penalty on defects and alignment violation), halving the
/// step up to four times.
pub fn solve_ocp(
    initial: &VehicleState,
    refs: &[StageReference],
    prev_applied_input: &ControlInput,
    params: &MravParams,
    config: &OcpConfig,
    warm: Option<&OcpSolution>,
) -> Result<OcpSolution, NmpcError> {
    config.validate()?;
    let n = config.horizon_steps;
    if refs.len() != n + 1 {
        return Err(NmpcError::References { expected: n + 1, got: refs.len() });
    }
    let nu = params.rotor_count();
    if config.rotor_count() != nu || initial.rotor_count() != nu || prev_applied_input.rotor_accels.len() != nu {
        return Err(NmpcError::Config {
            name: "weight_input_var",
            reason: format!("dimension does not match {nu} rotors"),
        });
    }
    let nx = state_dim(nu);
    let mut w_stage = DMatrix::zeros(NRES, NRES);
    w_stage.view_mut((0, 0), (9, 9)).copy_from(&config.weight_track);
    w_stage.view_mut((9, 9), (2, 2)).copy_from(&config.weight_misalign);
    w_stage.view_mut((11, 11), (3, 3)).fill_with_identity();
    w_stage.view_mut((11, 11), (3, 3)).scale_mut(config.weight_body_rate);
    let mut w_terminal = DMatrix::zeros(NRES, NRES);
    w_terminal.view_mut((0, 0), (9, 9)).copy_from(&config.weight_track_terminal);
    w_terminal.view_mut((9, 9), (2, 2)).copy_from(&config.weight_misalign_terminal);
    w_terminal.view_mut((11, 11), (3, 3)).fill_with_identity();
    w_terminal.view_mut((11, 11), (3, 3)).scale_mut(config.weight_body_rate);
    let pb = Problem {
        initial: initial.to_vector(),
        refs,
        prev_input: &prev_applied_input.rotor_accels,
        params,
        config,
        w_stage,
        w_terminal,
        n,
        nx,
        nu,
    };
    let ns = pb.slack_count();

    let mut it = match warm {
        Some(w) if w.states.len() == n + 1 && w.inputs.len() == n && w.states[0].rotor_count() == nu => Iterate {
            x: w.states.iter().map(VehicleState::to_vector).collect(),
            u: w.inputs.iter().map(|u| u.rotor_accels.clone()).collect(),
            pi: if ns > 0 && w.slacks.len() == ns { w.slacks.clone() } else { vec![0.0; ns] },
        },
        _ => {
            let u = vec![DVector::zeros(nu); n];
            Iterate {
                x: rollout(params, &pb.initial, &u, config.dt)?,
                u,
                pi: vec![0.0; ns],
            }
        }
    };

    let mut iterations = 0;
    let mut qp_iterations = 0;
    let mut status = QpStatus::Optimal;
    let mut kkt = f64::INFINITY;
    let mut history = Vec::new();
    let mut current: Option<Evaluation> = None;
    for sqp in 0..config.sqp_iters {
        let step = build_and_solve(&pb, &it, sqp)?;
        iterations += 1;
        qp_iterations += step.qp_iterations;
        status = step.status;
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..=LINE_SEARCH_STEPS {
            let trial = apply(&pb, &it, &step, alpha);
            // A trial that leaves the model's domain counts as a rejection.
            let Ok(eval) = pb.evaluate(&trial) else {
                alpha *= 0.5;
                continue;
            };
            let ok = match &current {
                None => true,
                Some(cur) => eval.merit <= cur.merit,
            };
            if ok {
                accepted = Some((trial, eval, alpha));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, eval, alpha)) = accepted else { break };
        let du_max = step.du.iter().map(|d| d.amax()).fold(0.0, f64::max) * alpha;
        let dpi_max = it
            .pi
            .iter()
            .zip(&step.pi)
            .map(|(a, b)| (b - a).abs() * alpha)
            .fold(0.0, f64::max);
        kkt = (du_max * config.dt).max(dpi_max).max(eval.max_defect);
        history.push(eval.merit);
        it = trial;
        current = Some(eval);
        if kkt <= config.kkt_tolerance {
            break;
        }
    }
    let eval = match current {
        Some(e) => e,
        None => pb.evaluate(&it)?,
    };

    let states = it
        .x
        .iter()
        .map(|x| VehicleState::from_slice(x.as_slice()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OcpSolution {
        states,
        inputs: it.u.into_iter().map(|rotor_accels| ControlInput { rotor_accels }).collect(),
        slacks: if ns > 0 { it.pi } else { vec![0.0; n + 1] },
        kkt_residual: kkt,
        qp_status: status,
        cost: eval.cost,
        sqp_iterations: iterations,
        qp_iterations,
        max_defect: eval.max_defect,
        merit_history: history,
    })
}

/// Shift a solution one stage forward for warm starting. The last input is
/// repeated and the last state is propagated with one RK4 step of `dt`.
pub fn shift_warm_start(solution: &OcpSolution, model: &MravParams, dt: f64) -> OcpSolution {
    let mut out = solution.clone();
    let n = solution.inputs.len();
    if n == 0 {
        return out;
    }
    out.states.rotate_left(1);
    out.inputs.rotate_left(1);
    out.inputs[n - 1] = solution.inputs[n - 1].clone();
    let last = &solution.states[n];
    out.states[n] = crate::vehicle::step_rk4(last, &solution.inputs[n - 1], model, dt).unwrap_or_else(|_| last.clone());
    out.slacks.rotate_left(1);
    if let Some(&s) = solution.slacks.last() {
        let m = out.slacks.len();
        out.slacks[m - 1] = s;
    }
    out.merit_history.clear();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmpc::alignment_residual;
    use crate::vehicle::{build_hexarotor, HexarotorSpec, RotorLayout};
    use nalgebra::Vector3;

    fn platform(tilted: bool) -> MravParams {
        let layout = if tilted {
            RotorLayout::Tilted { angle: 20f64.to_radians() }
        } else {
            RotorLayout::Coplanar
        };
        build_hexarotor(layout, &HexarotorSpec::default()).unwrap()
    }

    fn hover_refs(p: Vector3<f64>, source: Vector3<f64>, n: usize) -> Vec<StageReference> {
        vec![
            StageReference {
                position: p,
                velocity: Vector3::zeros(),
                acceleration: Vector3::zeros(),
                bs_position: Vector3::new(0.0, 0.0, p.z),
                source_position: source,
            };
            n + 1
        ]
    }

    #[test]
    fn hover_is_a_fixed_point() {
        let params = platform(false);
        let cfg = OcpConfig::standard(6);
        let p = Vector3::new(-5.0, 3.0, 2.0);
        let x0 = VehicleState::hover(&params, p).unwrap();
        let refs = hover_refs(p, p + Vector3::new(2.0, 1.0, 0.0), cfg.horizon_steps);
        let sol = solve_ocp(&x0, &refs, &ControlInput::zeros(6), &params, &cfg, None).unwrap();
        assert!(sol.first_input().rotor_accels.amax() < 1e-3, "{}", sol.first_input().rotor_accels);
        assert!(sol.slacks.iter().all(|&s| s < 1e-8));
        assert!(sol.max_defect < 1e-6);
    }

    #[test]
    fn boresight_source_forces_slack() {
        let params = platform(false);
        let cfg = OcpConfig::standard(6);
        let p = Vector3::new(-5.0, 3.0, 2.0);
        let x0 = VehicleState::hover(&params, p).unwrap();
        let refs = hover_refs(p, p + Vector3::new(0.0, 0.0, 6.0), cfg.horizon_steps);
        let sol = solve_ocp(&x0, &refs, &ControlInput::zeros(6), &params, &cfg, None).unwrap();
        assert!(sol.slacks.iter().any(|&s| s > 1e-3));
        for (k, s) in sol.states.iter().enumerate() {
            let a = alignment_residual(s, &refs[k], cfg.alignment_floor).unwrap();
            if sol.slacks[k] > 1e-6 {
                // Active soft constraint: equality up to linearisation error.
                assert!((a + sol.slacks[k]).abs() < 1e-3, "stage {k}: {a} {}", sol.slacks[k]);
            }
            assert!(sol.slacks[k] >= 0.0);
        }
    }

    #[test]
    fn inputs_respect_bounds_under_large_offset() {
        let params = platform(true);
        let cfg = OcpConfig::standard(6);
        let p = Vector3::new(-5.0, 3.0, 2.0);
        let x0 = VehicleState::hover(&params, p).unwrap();
        let refs = hover_refs(p + Vector3::new(3.0, -2.0, 4.0), p + Vector3::new(2.0, 1.0, 0.0), cfg.horizon_steps);
        let sol = solve_ocp(&x0, &refs, &ControlInput::zeros(6), &params, &cfg, None).unwrap();
        for u in &sol.inputs {
            for i in 0..6 {
                assert!(u.rotor_accels[i] >= params.accel_min[i] && u.rotor_accels[i] <= params.accel_max[i]);
            }
        }
        for s in &sol.states {
            for i in 0..6 {
                assert!(s.rotor_speeds[i] >= params.speed_min[i] - 1e-9);
                assert!(s.rotor_speeds[i] <= params.speed_max[i] + 1e-9);
            }
        }
        assert!(sol.first_input().rotor_accels.amax() > 1.0);
        for w in sol.merit_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn shifting_hover_is_identity() {
        let params = platform(false);
        let cfg = OcpConfig::standard(6);
        let p = Vector3::new(-5.0, 3.0, 2.0);
        let x0 = VehicleState::hover(&params, p).unwrap();
        let n = cfg.horizon_steps;
        let sol = OcpSolution {
            states: vec![x0.clone(); n + 1],
            inputs: vec![ControlInput::zeros(6); n],
            slacks: vec![0.0; n + 1],
            kkt_residual: 0.0,
            qp_status: QpStatus::Optimal,
            cost: 0.0,
            sqp_iterations: 1,
            qp_iterations: 0,
            max_defect: 0.0,
            merit_history: vec![],
        };
        let shifted = shift_warm_start(&sol, &params, cfg.dt);
        for (a, b) in shifted.states.iter().zip(&sol.states) {
            assert!((a.to_vector() - b.to_vector()).amax() < 1e-12);
        }
        assert_eq!(shifted.inputs, sol.inputs);
        assert_eq!(shifted.slacks, sol.slacks);
    }

    #[test]
    fn warm_start_needs_no_more_iterations() {
        let params = platform(false);
        let mut cfg = OcpConfig::standard(6);
        cfg.kkt_tolerance = 1e-6;
        let p = Vector3::new(-5.0, 3.0, 2.0);
        let x0 = VehicleState::hover(&params, p).unwrap();
        let refs = hover_refs(p + Vector3::new(0.05, 0.0, 0.0), p + Vector3::new(2.0, 1.0, 0.0), cfg.horizon_steps);
        let cold = solve_ocp(&x0, &refs, &ControlInput::zeros(6), &params, &cfg, None).unwrap();
        let mut x1 = x0.clone();
        for _ in 0..15 {
            x1 = crate::vehicle::step_plant(&x1, cold.first_input(), &params, 1e-3).unwrap();
        }
        let shifted = shift_warm_start(&cold, &params, cfg.dt);
        let warm = solve_ocp(&x1, &refs, cold.first_input(), &params, &cfg, Some(&shifted)).unwrap();
        let cold_next = solve_ocp(&x1, &refs, cold.first_input(), &params, &cfg, None).unwrap();
        assert!(warm.sqp_iterations <= cold_next.sqp_iterations, "{} vs {}", warm.sqp_iterations, cold_next.sqp_iterations);
    }

    #[test]
    fn unconstrained_mode_has_no_slacks() {
        let params = platform(false);
        let cfg = OcpConfig::standard(6).unconstrained();
        let p = Vector3::new(-5.0, 3.0, 2.0);
        let x0 = VehicleState::hover(&params, p).unwrap();
        let refs = hover_refs(p, p + Vector3::new(0.0, 0.0, 6.0), cfg.horizon_steps);
        let sol = solve_ocp(&x0, &refs, &ControlInput::zeros(6), &params, &cfg, None).unwrap();
        assert!(sol.slacks.iter().all(|&s| s == 0.0));
        assert!(sol.first_input().rotor_accels.amax() < 1e-3);
    }

    #[test]
    fn reference_count_is_checked() {
        let params = platform(false);
        let cfg = OcpConfig::standard(6);
        let x0 = VehicleState::hover(&params, Vector3::new(1.0, 1.0, 1.0)).unwrap();
        let refs = hover_refs(Vector3::new(1.0, 1.0, 1.0), Vector3::new(3.0, 1.0, 1.0), 3);
        assert!(matches!(
            solve_ocp(&x0, &refs, &ControlInput::zeros(6), &params, &cfg, None),
            Err(NmpcError::References { .. })
        ));
    }
}
