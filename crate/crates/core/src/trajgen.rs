//! Communications-aware relay references.
//!
//! Angular gains are replaced by worst-case bounds (peak gain for the jammer,
//! `√μ·Ḡ` for legitimate links) so the inverse end-to-end capacity
//! `f̄(p₁, p₂)` depends on three distances only: source–relay, jammer–relay
//! and relay–base station. Its exact gradient and Hessian give a quadratic
//! model whose minimiser over the relay position is the reference.

use std::f64::consts::LN_2;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum eigenvalue accepted for the relay Hessian block.
pub const EPS_PD: f64 = 1e-6;
/// First perturbation length (m) tried by [`regularize`].
pub const REGULARIZE_STEP: f64 = 1e-3;
/// Default bound on `‖p_d − p₁ₑ‖` applied by [`clip_to_trust_region`].
pub const TRUST_RADIUS: f64 = 0.5;
const MIN_SEPARATION: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajgenError {
    #[error("coincident nodes: {0}")]
    Coincident(&'static str),
    #[error("conservative SINR is zero on the {0} link; inverse capacity is infinite")]
    InfiniteCost(&'static str),
    #[error("relay Hessian block is not invertible")]
    Singular,
    #[error("invalid trajectory-generator parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
}

/// Inputs of the worst-case channel model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservativeParams {
    /// Ḡ
    pub peak_gain: f64,
    /// μ
    pub alignment_floor: f64,
    /// P_U (W)
    pub tx_power: f64,
    /// P_J as known to the planner (W)
    pub jammer_power_known: f64,
    /// σ₁² (W)
    pub noise_var_relay: f64,
    /// σ₀² (W)
    pub noise_var_bs: f64,
    /// B (Hz)
    pub bandwidth: f64,
    pub bs_position: Vector3<f64>,
    pub jammer_position: Vector3<f64>,
}

impl ConservativeParams {
    pub fn validate(&self) -> Result<(), TrajgenError> {
        let bad = |name, reason: &str| {
            Err(TrajgenError::Parameter {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.alignment_floor > 0.0 && self.alignment_floor <= 1.0) {
            return bad("alignment_floor", "must lie in (0, 1]");
        }
        if !(self.peak_gain > 0.0) {
            return bad("peak_gain", "must be positive");
        }
        if !(self.tx_power >= 0.0 && self.jammer_power_known >= 0.0) {
            return bad("tx_power", "powers must be non-negative");
        }
        if !(self.noise_var_relay > 0.0 && self.noise_var_bs > 0.0) {
            return bad("noise_var_relay", "noise variances must be positive");
        }
        if !(self.bandwidth > 0.0) {
            return bad("bandwidth", "must be positive");
        }
        if (self.bs_position - self.jammer_position).norm() < MIN_SEPARATION {
            return Err(TrajgenError::Coincident("jammer and base station"));
        }
        Ok(())
    }

    fn legit_numerator(&self) -> f64 {
        self.alignment_floor * self.peak_gain * self.peak_gain * self.tx_power
    }

    fn jammer_term(&self) -> f64 {
        self.peak_gain * self.jammer_power_known
    }

    /// Interference-plus-noise at the base station; constant in `κ`.
    fn bs_denominator(&self) -> f64 {
        let d = (self.jammer_position - self.bs_position).norm();
        self.jammer_term() / (d * d) + self.noise_var_bs
    }
}

/// Quadratic model of `f̄` around `κ_e = (p₁ₑ, p₂ₑ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub expansion_point: Vector6<f64>,
    pub value: f64,
    /// g₁
    pub grad_relay: Vector3<f64>,
    /// g₂
    pub grad_source: Vector3<f64>,
    /// H₁₁
    pub hess_rr: Matrix3<f64>,
    /// H₁₂
    pub hess_rs: Matrix3<f64>,
    /// H₂₂
    pub hess_ss: Matrix3<f64>,
}

impl SurrogateModel {
    pub fn relay_expansion(&self) -> Vector3<f64> {
        self.expansion_point.fixed_rows::<3>(0).into_owned()
    }

    pub fn source_expansion(&self) -> Vector3<f64> {
        self.expansion_point.fixed_rows::<3>(3).into_owned()
    }

    pub fn gradient(&self) -> Vector6<f64> {
        let mut g = Vector6::zeros();
        g.fixed_rows_mut::<3>(0).copy_from(&self.grad_relay);
        g.fixed_rows_mut::<3>(3).copy_from(&self.grad_source);
        g
    }

    pub fn hessian(&self) -> Matrix6<f64> {
        let mut h = Matrix6::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.hess_rr);
        h.fixed_view_mut::<3, 3>(0, 3).copy_from(&self.hess_rs);
        h.fixed_view_mut::<3, 3>(3, 0).copy_from(&self.hess_rs.transpose());
        h.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.hess_ss);
        h
    }

    pub fn min_relay_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.hess_rr).eigenvalues.min()
    }
}

/// Position, velocity and acceleration reference for the relay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayReference {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

/// Stack relay and source positions into `κ`.
pub fn kappa(relay: &Vector3<f64>, source: &Vector3<f64>) -> Vector6<f64> {
    let mut k = Vector6::zeros();
    k.fixed_rows_mut::<3>(0).copy_from(relay);
    k.fixed_rows_mut::<3>(3).copy_from(source);
    k
}

struct Distances {
    d21: f64,
    dj1: f64,
    d10: f64,
    n21: Vector3<f64>,
    nj1: Vector3<f64>,
    n10: Vector3<f64>,
}

fn distances(relay: &Vector3<f64>, source: &Vector3<f64>, params: &ConservativeParams) -> Result<Distances, TrajgenError> {
    let r21 = relay - source;
    let rj1 = relay - params.jammer_position;
    let r10 = relay - params.bs_position;
    let (d21, dj1, d10) = (r21.norm(), rj1.norm(), r10.norm());
    if d21 < MIN_SEPARATION {
        return Err(TrajgenError::Coincident("relay and source"));
    }
    if dj1 < MIN_SEPARATION {
        return Err(TrajgenError::Coincident("relay and jammer"));
    }
    if d10 < MIN_SEPARATION {
        return Err(TrajgenError::Coincident("relay and base station"));
    }
    Ok(Distances {
        d21,
        dj1,
        d10,
        n21: r21 / d21,
        nj1: rj1 / dj1,
        n10: r10 / d10,
    })
}

/// Worst-case SINRs `(Γ̄₂₁, Γ̄₁₀)`.
pub fn conservative_sinr(
    relay: &Vector3<f64>,
    source: &Vector3<f64>,
    params: &ConservativeParams,
) -> Result<(f64, f64), TrajgenError> {
    let d = distances(relay, source, params)?;
    let k = params.legit_numerator();
    let relay_den = params.jammer_term() / (d.dj1 * d.dj1) + params.noise_var_relay;
    Ok((
        k / (d.d21 * d.d21 * relay_den),
        k / (d.d10 * d.d10 * params.bs_denominator()),
    ))
}

/// Reciprocal capacity of one hop, `1/(B·log₂(1+Γ))`, and its first two
/// derivatives with respect to `Γ`.
fn hop_cost(gamma: f64, bandwidth: f64) -> (f64, f64, f64) {
    let l = gamma.ln_1p();
    let inv = 1.0 / (1.0 + gamma);
    let c = LN_2 / bandwidth;
    let value = c / l;
    let d1 = -c * inv / (l * l);
    let d2 = c * inv * inv / (l * l) * (2.0 / l + 1.0);
    (value, d1, d2)
}

/// `f̄ = (1/B)·[1/log₂(1+Γ̄₂₁) + 1/log₂(1+Γ̄₁₀)]` (s/bit).
pub fn inverse_capacity(
    relay: &Vector3<f64>,
    source: &Vector3<f64>,
    params: &ConservativeParams,
) -> Result<f64, TrajgenError> {
    let (g21, g10) = conservative_sinr(relay, source, params)?;
    if !(g21 > 0.0) {
        return Err(TrajgenError::InfiniteCost("source-relay"));
    }
    if !(g10 > 0.0) {
        return Err(TrajgenError::InfiniteCost("relay-base station"));
    }
    Ok(hop_cost(g21, params.bandwidth).0 + hop_cost(g10, params.bandwidth).0)
}

/// `κ`-space wrapper of [`inverse_capacity`].
pub fn inverse_capacity_at(point: &Vector6<f64>, params: &ConservativeParams) -> Result<f64, TrajgenError> {
    let relay = point.fixed_rows::<3>(0).into_owned();
    let source = point.fixed_rows::<3>(3).into_owned();
    inverse_capacity(&relay, &source, params)
}

fn projector(n: &Vector3<f64>, d: f64) -> Matrix3<f64> {
    (Matrix3::identity() - n * n.transpose()) / d
}

/// Exact gradient and partitioned Hessian of `f̄` at `expansion`.
pub fn surrogate_at(expansion: &Vector6<f64>, params: &ConservativeParams) -> Result<SurrogateModel, TrajgenError> {
    let relay = expansion.fixed_rows::<3>(0).into_owned();
    let source = expansion.fixed_rows::<3>(3).into_owned();
    let d = distances(&relay, &source, params)?;
    let (g21, g10) = conservative_sinr(&relay, &source, params)?;
    if !(g21 > 0.0) {
        return Err(TrajgenError::InfiniteCost("source-relay"));
    }
    if !(g10 > 0.0) {
        return Err(TrajgenError::InfiniteCost("relay-base station"));
    }
    let b = params.bandwidth;

    // Source-relay hop as a function of (d₂₁, d_J1).
    let a = params.jammer_term();
    let den = a / (d.dj1 * d.dj1) + params.noise_var_relay;
    let den_j = -2.0 * a / d.dj1.powi(3);
    let den_jj = 6.0 * a / d.dj1.powi(4);
    let g_d = -2.0 * g21 / d.d21;
    let g_dd = 6.0 * g21 / (d.d21 * d.d21);
    let g_j = -g21 * den_j / den;
    let g_jj = g21 * (2.0 * den_j * den_j / (den * den) - den_jj / den);
    let g_dj = -2.0 * g_j / d.d21;
    let (v21, p1, p2) = hop_cost(g21, b);
    let f_d = p1 * g_d;
    let f_j = p1 * g_j;
    let f_dd = p2 * g_d * g_d + p1 * g_dd;
    let f_jj = p2 * g_j * g_j + p1 * g_jj;
    let f_dj = p2 * g_d * g_j + p1 * g_dj;

    // Relay-base hop as a function of d₁₀.
    let (v10, q1, q2) = hop_cost(g10, b);
    let h_d = -2.0 * g10 / d.d10;
    let h_dd = 6.0 * g10 / (d.d10 * d.d10);
    let e_d = q1 * h_d;
    let e_dd = q2 * h_d * h_d + q1 * h_dd;

    let p21 = projector(&d.n21, d.d21);
    let pj1 = projector(&d.nj1, d.dj1);
    let p10 = projector(&d.n10, d.d10);
    let outer = |x: &Vector3<f64>, y: &Vector3<f64>| x * y.transpose();

    let grad_relay = d.n21 * f_d + d.nj1 * f_j + d.n10 * e_d;
    let grad_source = -d.n21 * f_d;
    let hess_rr = p21 * f_d
        + pj1 * f_j
        + p10 * e_d
        + outer(&d.n21, &d.n21) * f_dd
        + outer(&d.nj1, &d.nj1) * f_jj
        + (outer(&d.n21, &d.nj1) + outer(&d.nj1, &d.n21)) * f_dj
        + outer(&d.n10, &d.n10) * e_dd;
    let hess_rs = -(p21 * f_d) - outer(&d.n21, &d.n21) * f_dd - outer(&d.nj1, &d.n21) * f_dj;
    let hess_ss = p21 * f_d + outer(&d.n21, &d.n21) * f_dd;

    Ok(SurrogateModel {
        expansion_point: *expansion,
        value: v21 + v10,
        grad_relay,
        grad_source,
        hess_rr: symmetrize(hess_rr),
        hess_rs,
        hess_ss: symmetrize(hess_ss),
    })
}

fn symmetrize(m: Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// Second-order Taylor model `f^[2](κ; κ_e)`.
pub fn taylor_eval(model: &SurrogateModel, query: &Vector6<f64>) -> f64 {
    let delta = query - model.expansion_point;
    model.value + model.gradient().dot(&delta) + 0.5 * delta.dot(&(model.hessian() * delta))
}

/// Minimiser of the Taylor model over the relay position plus its first two
/// time derivatives for a source moving with `source_vel`, `source_acc`.
pub fn relay_reference(
    model: &SurrogateModel,
    source_pos: &Vector3<f64>,
    source_vel: &Vector3<f64>,
    source_acc: &Vector3<f64>,
) -> Result<RelayReference, TrajgenError> {
    let chol = model.hess_rr.cholesky().ok_or(TrajgenError::Singular)?;
    let delta_src = source_pos - model.source_expansion();
    let step = chol.solve(&(model.grad_relay + model.hess_rs * delta_src));
    let sens = chol.solve(&model.hess_rs);
    Ok(RelayReference {
        position: model.relay_expansion() - step,
        velocity: -(sens * source_vel),
        acceleration: -(sens * source_acc),
    })
}

/// Scale the whole reference triple back so that `‖p_d − anchor‖ ≤ radius`.
pub fn clip_to_trust_region(reference: RelayReference, anchor: &Vector3<f64>, radius: f64) -> RelayReference {
    let offset = reference.position - anchor;
    let norm = offset.norm();
    if norm <= radius {
        return reference;
    }
    let s = radius / norm;
    RelayReference {
        position: anchor + offset * s,
        velocity: reference.velocity * s,
        acceleration: reference.acceleration * s,
    }
}

/// How [`regularize`] made the relay Hessian block positive definite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// Already positive definite; model returned as is.
    Unchanged,
    /// Re-expanded after moving `κ_e` by `shift` metres against the gradient.
    Perturbed { attempts: usize, shift: f64 },
    /// Perturbation failed; `λ·I` was added to `H₁₁`.
    Shifted { lambda: f64 },
}

impl Regularization {
    pub fn is_fallback(&self) -> bool {
        matches!(self, Regularization::Shifted { .. })
    }
}

/// Ensure `H₁₁ ⪰ ε_pd·I`. Never fails on an ill-conditioned Hessian: after
/// `max_attempts` perturbations the diagonal shift is applied to the
/// original model and reported.
pub fn regularize(
    model: SurrogateModel,
    params: &ConservativeParams,
    max_attempts: usize,
) -> (SurrogateModel, Regularization) {
    let min_eig = model.min_relay_eigenvalue();
    if min_eig >= EPS_PD {
        return (model, Regularization::Unchanged);
    }
    let g = model.gradient();
    let gnorm = g.norm();
    if gnorm > 0.0 {
        let dir = -g / gnorm;
        let mut eps = REGULARIZE_STEP;
        for attempt in 1..=max_attempts {
            let candidate = model.expansion_point + dir * eps;
            if let Ok(m) = surrogate_at(&candidate, params) {
                if m.min_relay_eigenvalue() >= EPS_PD {
                    return (m, Regularization::Perturbed { attempts: attempt, shift: eps });
                }
            }
            eps *= 2.0;
        }
    }
    let lambda = EPS_PD - min_eig;
    let mut shifted = model;
    shifted.hess_rr += Matrix3::identity() * lambda;
    (shifted, Regularization::Shifted { lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{finite_diff_check, FdSteps};
    use crate::radio::{link_budget, JammerNode, RadioParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table_params(jammer_power: f64) -> ConservativeParams {
        ConservativeParams {
            peak_gain: 1.0,
            alignment_floor: 0.2,
            tx_power: 1.0,
            jammer_power_known: jammer_power,
            noise_var_relay: 1.0,
            noise_var_bs: 1.0,
            bandwidth: 1.0,
            bs_position: Vector3::zeros(),
            jammer_position: Vector3::new(-6.95, -5.79, 1.72),
        }
    }

    fn relay0() -> Vector3<f64> {
        Vector3::new(-6.95, 5.79, 1.72)
    }

    fn source0() -> Vector3<f64> {
        Vector3::new(-3.04, 5.79, 1.72)
    }

    #[test]
    fn reference_geometry_bs_sinr() {
        let (_, g10) = conservative_sinr(&relay0(), &source0(), &table_params(1.0)).unwrap();
        let d: f64 = 9.208;
        let hand = 0.2 / (d * d * (1.0 / (d * d) + 1.0));
        assert!((g10 - hand).abs() / hand < 1e-3);
        assert!((g10 - 2.33e-3).abs() < 5e-6);
    }

    #[test]
    fn unit_hop_without_jammer() {
        let mut p = table_params(0.0);
        p.alignment_floor = 1.0;
        p.tx_power = 3.0;
        let relay = Vector3::new(1.0, 2.0, 3.0);
        let source = relay + Vector3::new(0.0, 1.0, 0.0);
        let (g21, _) = conservative_sinr(&relay, &source, &p).unwrap();
        assert!((g21 - 3.0).abs() < 1e-15);
    }

    #[test]
    fn coincident_nodes_are_rejected() {
        let p = table_params(1.0);
        assert!(matches!(
            conservative_sinr(&relay0(), &relay0(), &p),
            Err(TrajgenError::Coincident(_))
        ));
        assert!(matches!(
            inverse_capacity(&Vector3::zeros(), &source0(), &p),
            Err(TrajgenError::Coincident(_))
        ));
        let mut silent = p;
        silent.tx_power = 0.0;
        assert!(matches!(
            inverse_capacity(&relay0(), &source0(), &silent),
            Err(TrajgenError::InfiniteCost(_))
        ));
    }

    #[test]
    fn unit_efficiencies_give_cost_two() {
        // Γ̄ = 1 on both hops: μ = 1, no jammer, unit distances.
        let mut p = table_params(0.0);
        p.alignment_floor = 1.0;
        let relay = Vector3::new(1.0, 0.0, 0.0);
        let source = Vector3::new(1.0, 1.0, 0.0);
        assert!((inverse_capacity(&relay, &source, &p).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn cost_is_reciprocal_of_conservative_capacity() {
        let p = table_params(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let relay = Vector3::new(rng.random_range(-9.0..3.0), rng.random_range(-5.0..5.0), rng.random_range(0.5..18.0));
            let source = Vector3::new(rng.random_range(-9.0..3.0), rng.random_range(-5.0..5.0), rng.random_range(0.5..18.0));
            let (g21, g10) = conservative_sinr(&relay, &source, &p).unwrap();
            let c = crate::radio::end_to_end_capacity((1.0 + g21).log2(), (1.0 + g10).log2(), p.bandwidth);
            let f = inverse_capacity(&relay, &source, &p).unwrap();
            assert!((f * c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn approaching_the_jammer_raises_cost() {
        // The relay moves on the circle of fixed distance to both source and
        // BS, so only the jammer distance changes.
        let mut p = table_params(5.0);
        p.jammer_position = Vector3::new(2.0, 0.0, 10.0);
        let source = Vector3::new(4.0, 0.0, 0.0);
        let mut prev = 0.0;
        for i in 0..=20 {
            let th = i as f64 / 20.0 * std::f64::consts::FRAC_PI_2;
            let relay = Vector3::new(2.0, 3.0 * th.cos(), 3.0 * th.sin());
            let f = inverse_capacity(&relay, &source, &p).unwrap();
            assert!(f > prev);
            prev = f;
        }
    }

    #[test]
    fn conservative_sinr_bounds_aligned_true_sinr() {
        // When both legitimate antenna products are at least μ·Ḡ², the true
        // SINR dominates the conservative one (F ≤ F̄ always).
        let p = table_params(1.0);
        let radio = RadioParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut checked = 0;
        for _ in 0..5000 {
            let relay = Vector3::new(rng.random_range(-9.0..3.0), rng.random_range(-5.0..5.0), rng.random_range(0.5..18.0));
            let source = Vector3::new(rng.random_range(-9.0..3.0), rng.random_range(-5.0..5.0), rng.random_range(0.5..18.0));
            let eta = Vector3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-3.0..3.0));
            let Ok((g21, g10)) = conservative_sinr(&relay, &source, &p) else { continue };
            let src = radio.node(source, Vector3::zeros());
            let rel = radio.node(relay, eta);
            let bs = radio.node(p.bs_position, Vector3::zeros());
            let jam = JammerNode { position: p.jammer_position, power: 1.0 };
            let l21 = link_budget(&src, &rel, &jam).unwrap();
            let l10 = link_budget(&rel, &bs, &jam).unwrap();
            let d21 = (relay - source).norm();
            let d10 = relay.norm();
            if (l21.gain * d21).powi(2) >= p.alignment_floor {
                assert!(g21 <= l21.sinr * (1.0 + 1e-12));
                checked += 1;
            }
            if (l10.gain * d10).powi(2) >= p.alignment_floor {
                assert!(g10 <= l10.sinr * (1.0 + 1e-12));
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn derivatives_match_finite_differences_at_reference_geometry() {
        let p = table_params(1.0);
        let k = kappa(&relay0(), &source0());
        let model = surrogate_at(&k, &p).unwrap();
        let report = finite_diff_check(|x| inverse_capacity_at(x, &p).ok(), &k, FdSteps::default(), &model.gradient(), &model.hessian())
            .unwrap();
        assert!(report.max_rel_err_grad < 1e-5, "{report:?}");
        assert!(report.max_rel_err_hess < 1e-5, "{report:?}");
    }

    #[test]
    fn symmetric_geometry_has_no_axial_gradient() {
        let mut p = table_params(0.0);
        p.bs_position = Vector3::new(0.0, 0.0, 0.0);
        let source = Vector3::new(6.0, 0.0, 0.0);
        let relay = Vector3::new(3.0, 2.0, 1.0);
        let axis = (source - p.bs_position).normalize();
        let m = surrogate_at(&kappa(&relay, &source), &p).unwrap();
        assert!(m.grad_relay.dot(&axis).abs() < 1e-12 * m.grad_relay.norm().max(1.0));
    }

    #[test]
    fn full_hessian_is_symmetric() {
        let p = table_params(1.0);
        let m = surrogate_at(&kappa(&relay0(), &source0()), &p).unwrap();
        let h = m.hessian();
        assert!((h - h.transpose()).abs().max() < 1e-9);
        assert!((m.hess_rr - m.hess_rr.transpose()).abs().max() < 1e-9);
    }

    #[test]
    fn taylor_model_is_exact_at_expansion_and_idempotent() {
        let p = table_params(1.0);
        let k = kappa(&relay0(), &source0());
        let m = surrogate_at(&k, &p).unwrap();
        assert_eq!(taylor_eval(&m, &k), m.value);
        // The Taylor model of a quadratic is itself.
        let q = k + Vector6::new(0.3, -0.2, 0.1, 0.05, 0.0, -0.1);
        let shifted = SurrogateModel {
            expansion_point: q,
            value: taylor_eval(&m, &q),
            grad_relay: (m.gradient() + m.hessian() * (q - k)).fixed_rows::<3>(0).into_owned(),
            grad_source: (m.gradient() + m.hessian() * (q - k)).fixed_rows::<3>(3).into_owned(),
            ..m.clone()
        };
        for probe in [k, k * 1.01, q + Vector6::repeat(0.2)] {
            let a = taylor_eval(&m, &probe);
            let b = taylor_eval(&shifted, &probe);
            assert!((a - b).abs() < 1e-9 * a.abs());
        }
    }

    #[test]
    fn taylor_remainder_is_third_order() {
        let p = table_params(1.0);
        let k = kappa(&relay0(), &source0());
        let m = surrogate_at(&k, &p).unwrap();
        let dir = Vector6::new(0.5, -0.3, 0.4, 0.2, 0.6, -0.2).normalize();
        let steps = [0.4, 0.2, 0.1, 0.05];
        let errs: Vec<f64> = steps
            .iter()
            .map(|&s| {
                let q = k + dir * s;
                (taylor_eval(&m, &q) - inverse_capacity_at(&q, &p).unwrap()).abs()
            })
            .collect();
        for w in 0..steps.len() - 1 {
            let slope = (errs[w] / errs[w + 1]).ln() / (steps[w] / steps[w + 1]).ln();
            assert!((2.9..=3.1).contains(&slope), "slope {slope} from {errs:?}");
        }
    }

    #[test]
    fn stationary_source_gives_zero_rates() {
        let p = table_params(1.0);
        let m = surrogate_at(&kappa(&relay0(), &source0()), &p).unwrap();
        let r = relay_reference(&m, &source0(), &Vector3::zeros(), &Vector3::zeros()).unwrap();
        assert_eq!(r.velocity, Vector3::zeros());
        assert_eq!(r.acceleration, Vector3::zeros());
    }

    #[test]
    fn critical_point_is_its_own_reference() {
        let p = table_params(1.0);
        let mut m = surrogate_at(&kappa(&relay0(), &source0()), &p).unwrap();
        m.grad_relay = Vector3::zeros();
        let r = relay_reference(&m, &source0(), &Vector3::x(), &Vector3::y()).unwrap();
        assert_eq!(r.position, relay0());
    }

    #[test]
    fn reference_rates_match_numeric_derivative() {
        let p = table_params(1.0);
        let m = surrogate_at(&kappa(&relay0(), &source0()), &p).unwrap();
        let src = |t: f64| source0() + Vector3::new(0.3 * t.sin(), 0.2 * t, 0.5 * t * t);
        let vel = |t: f64| Vector3::new(0.3 * t.cos(), 0.2, t);
        let h = 1e-4;
        for &t in &[0.0, 0.5, 1.3] {
            let r = relay_reference(&m, &src(t), &vel(t), &Vector3::zeros()).unwrap();
            let rp = relay_reference(&m, &src(t + h), &vel(t), &Vector3::zeros()).unwrap();
            let rm = relay_reference(&m, &src(t - h), &vel(t), &Vector3::zeros()).unwrap();
            let numeric = (rp.position - rm.position) / (2.0 * h);
            assert!((numeric - r.velocity).norm() < 1e-3);
        }
    }

    #[test]
    fn trust_region_scales_the_triple() {
        let r = RelayReference {
            position: Vector3::new(2.0, 0.0, 0.0),
            velocity: Vector3::new(1.0, 0.0, 0.0),
            acceleration: Vector3::new(0.0, 4.0, 0.0),
        };
        let c = clip_to_trust_region(r, &Vector3::zeros(), 0.5);
        assert!((c.position.norm() - 0.5).abs() < 1e-15);
        assert_eq!(c.velocity, Vector3::new(0.25, 0.0, 0.0));
        assert_eq!(c.acceleration, Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(clip_to_trust_region(r, &Vector3::new(1.8, 0.0, 0.0), 0.5), r);
    }

    #[test]
    fn well_conditioned_model_is_untouched() {
        let p = table_params(1.0);
        let m = surrogate_at(&kappa(&relay0(), &source0()), &p).unwrap();
        assert!(m.min_relay_eigenvalue() > EPS_PD);
        let (out, how) = regularize(m.clone(), &p, 5);
        assert_eq!(how, Regularization::Unchanged);
        assert_eq!(out.expansion_point, m.expansion_point);
        assert_eq!(out, m);
    }

    #[test]
    fn forced_fallback_shift_hits_threshold() {
        let p = table_params(1.0);
        let mut m = surrogate_at(&kappa(&relay0(), &source0()), &p).unwrap();
        m.hess_rr -= Matrix3::identity() * (m.min_relay_eigenvalue() + 0.3);
        let (out, how) = regularize(m, &p, 0);
        assert!(how.is_fallback());
        assert!((out.min_relay_eigenvalue() - EPS_PD).abs() < 1e-12);
    }

    /// High-SNR collinear placement: moving along the source–BS axis lowers
    /// the weaker hop's cost faster than the stronger hop's rises, so `f̄` is
    /// concave along the axis.
    fn saddle_case() -> (ConservativeParams, Vector6<f64>) {
        let mut p = table_params(0.0);
        p.tx_power = 1e4;
        p.alignment_floor = 1.0;
        let source = Vector3::new(10.0, 0.0, 0.0);
        let relay = Vector3::new(4.0, 0.0, 0.0);
        (p, kappa(&relay, &source))
    }

    #[test]
    fn collinear_saddle_is_regularized() {
        let (p, k) = saddle_case();
        let m = surrogate_at(&k, &p).unwrap();
        assert!(m.min_relay_eigenvalue() < 0.0, "constructed case must be indefinite");
        let (out, how) = regularize(m, &p, 12);
        assert_ne!(how, Regularization::Unchanged);
        assert!(out.min_relay_eigenvalue() >= EPS_PD * (1.0 - 1e-9), "{how:?}");
        assert!(out.hess_rr.cholesky().is_some());
    }
}
