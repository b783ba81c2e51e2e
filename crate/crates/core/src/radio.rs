//! Directional-antenna RF link budget under jamming.
//!
//! Every node carries a dipole along its body z-axis. Gains are azimuth
//! independent and vanish along the boresight. Legitimate links combine the
//! departure and arrival gains, and the jammer is an isotropic radiator seen
//! through the receiver's pattern only.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::{rotation_from_euler, thrust_direction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadioError {
    #[error("elevation {0} rad outside [0, π]")]
    Domain(f64),
    #[error("coincident node positions")]
    Coincident,
    #[error("bandwidth split undefined when both spectral efficiencies are zero")]
    Split,
    #[error("invalid radio parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
}

/// Normalised elevation profile of the dipole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DipolePattern {
    /// `[cos(π/2·cosϑ)/sinϑ]²`
    #[default]
    HalfWaveDipole,
    /// `sin²ϑ`
    SinSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DipoleAntenna {
    /// Ḡ, the gain in the equatorial plane.
    pub peak_gain: f64,
    /// D; stored for reference, not applied to the gain.
    pub directivity: f64,
    pub pattern: DipolePattern,
}

impl Default for DipoleAntenna {
    fn default() -> Self {
        Self {
            peak_gain: 1.0,
            directivity: 1.64,
            pattern: DipolePattern::HalfWaveDipole,
        }
    }
}

impl DipoleAntenna {
    pub fn gain(&self, elevation: f64) -> Result<f64, RadioError> {
        dipole_gain(self, elevation)
    }
}

/// Gain at `elevation` measured from the boresight.
pub fn dipole_gain(antenna: &DipoleAntenna, elevation: f64) -> Result<f64, RadioError> {
    if !(0.0..=std::f64::consts::PI).contains(&elevation) {
        return Err(RadioError::Domain(elevation));
    }
    let s = elevation.sin();
    let shape = match antenna.pattern {
        DipolePattern::HalfWaveDipole => {
            if s < 1e-12 {
                0.0
            } else {
                let r = (std::f64::consts::FRAC_PI_2 * elevation.cos()).cos() / s;
                r * r
            }
        }
        DipolePattern::SinSquared => s * s,
    };
    Ok(antenna.peak_gain * shape)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioNode {
    pub position: Vector3<f64>,
    /// ZYX Euler angles; the boresight is the rotated body z-axis.
    pub euler: Vector3<f64>,
    pub antenna: DipoleAntenna,
    /// P_U (W)
    pub tx_power: f64,
    /// σ (√W)
    pub noise_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JammerNode {
    pub position: Vector3<f64>,
    /// P_J (W)
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    /// H (1/m)
    pub gain: f64,
    /// F (1/m)
    pub jam_gain: f64,
    pub sinr: f64,
    /// log₂(1+Γ), bit/s/Hz
    pub spectral_efficiency: f64,
    pub aod: f64,
    pub aoa: f64,
    pub jam_aoa: f64,
}

fn unit_direction(from: &Vector3<f64>, to: &Vector3<f64>) -> Result<(Vector3<f64>, f64), RadioError> {
    let delta = to - from;
    let d = delta.norm();
    if !(d > 0.0) {
        return Err(RadioError::Coincident);
    }
    Ok((delta / d, d))
}

/// Angle between the observer's boresight and the direction to `target`.
pub fn elevation_angle(observer: &RadioNode, target: &Vector3<f64>) -> Result<f64, RadioError> {
    let (dir, _) = unit_direction(&observer.position, target)?;
    let a = rotation_from_euler(&observer.euler).transpose() * dir;
    let horizontal = (a.x * a.x + a.y * a.y).sqrt();
    // Clamp guards against atan2 round-off pushing the angle outside [0, π].
    Ok((std::f64::consts::FRAC_PI_2 - a.z.atan2(horizontal)).clamp(0.0, std::f64::consts::PI))
}

/// Legitimate channel gain `H = √(G(ϑᴰ)·G(ϑᴬ)) / d`.
pub fn link_gain(tx: &RadioNode, rx: &RadioNode) -> Result<f64, RadioError> {
    Ok(link_gain_with_angles(tx, rx)?.0)
}

fn link_gain_with_angles(tx: &RadioNode, rx: &RadioNode) -> Result<(f64, f64, f64), RadioError> {
    let (_, d) = unit_direction(&tx.position, &rx.position)?;
    let aod = elevation_angle(tx, &rx.position)?;
    let aoa = elevation_angle(rx, &tx.position)?;
    let g = (tx.antenna.gain(aod)? * rx.antenna.gain(aoa)?).sqrt();
    Ok((g / d, aod, aoa))
}

/// Jamming gain `F = √G(ϑᴬ_J) / d`; the jammer itself is isotropic.
pub fn jammer_gain(jammer: &JammerNode, rx: &RadioNode) -> Result<f64, RadioError> {
    Ok(jammer_gain_with_angle(jammer, rx)?.0)
}

fn jammer_gain_with_angle(jammer: &JammerNode, rx: &RadioNode) -> Result<(f64, f64), RadioError> {
    let (_, d) = unit_direction(&rx.position, &jammer.position)?;
    let aoa = elevation_angle(rx, &jammer.position)?;
    Ok((rx.antenna.gain(aoa)?.sqrt() / d, aoa))
}

/// `Γ = H²·P_U / (F²·P_J + σ²)`.
pub fn sinr(tx: &RadioNode, rx: &RadioNode, jammer: &JammerNode) -> Result<f64, RadioError> {
    Ok(link_budget(tx, rx, jammer)?.sinr)
}

pub fn link_budget(tx: &RadioNode, rx: &RadioNode, jammer: &JammerNode) -> Result<LinkBudget, RadioError> {
    let (gain, aod, aoa) = link_gain_with_angles(tx, rx)?;
    let (jam_gain, jam_aoa) = jammer_gain_with_angle(jammer, rx)?;
    let sinr = gain * gain * tx.tx_power / (jam_gain * jam_gain * jammer.power + rx.noise_std * rx.noise_std);
    Ok(LinkBudget {
        gain,
        jam_gain,
        sinr,
        spectral_efficiency: (1.0 + sinr).log2(),
        aod,
        aoa,
        jam_aoa,
    })
}

/// Shannon capacity `B·log₂(1+Γ)`.
pub fn link_capacity(sinr: f64, bandwidth: f64) -> f64 {
    bandwidth * (1.0 + sinr).log2()
}

/// Equalised two-hop rate `B·c₂₁·c₁₀/(c₂₁+c₁₀)`; zero if either hop is down.
pub fn end_to_end_capacity(eff_21: f64, eff_10: f64, total_bandwidth: f64) -> f64 {
    if eff_21 <= 0.0 || eff_10 <= 0.0 {
        return 0.0;
    }
    total_bandwidth * eff_21 * eff_10 / (eff_21 + eff_10)
}

/// Bandwidth split `(B₂₁, B₁₀)` equalising both per-link capacities.
pub fn bandwidth_split(eff_21: f64, eff_10: f64, total_bandwidth: f64) -> Result<(f64, f64), RadioError> {
    let sum = eff_21 + eff_10;
    if !(sum > 0.0) {
        return Err(RadioError::Split);
    }
    Ok((total_bandwidth * eff_10 / sum, total_bandwidth * eff_21 / sum))
}

/// Squared directional cosine `v = ⟨Δ, R·z_B⟩²` between the unit link
/// direction and the node's boresight.
pub fn directional_cosine_sq(node: &RadioNode, peer_position: &Vector3<f64>) -> Result<f64, RadioError> {
    let (dir, _) = unit_direction(&node.position, peer_position)?;
    let c = dir.dot(&thrust_direction(&node.euler));
    Ok((c * c).min(1.0))
}

/// Channel parameters shared by every node of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioParams {
    pub antenna: DipoleAntenna,
    /// P_U (W)
    pub tx_power: f64,
    /// σ_J (√W), applied to every receiver
    pub noise_std: f64,
    /// B (Hz)
    pub bandwidth: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            antenna: DipoleAntenna::default(),
            tx_power: 1.0,
            noise_std: 1.0,
            bandwidth: 1.0,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), RadioError> {
        let bad = |name, reason: &str| {
            Err(RadioError::Parameter {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.antenna.peak_gain > 0.0) {
            return bad("peak_gain", "must be positive");
        }
        if !(self.tx_power >= 0.0) {
            return bad("tx_power", "must be non-negative");
        }
        if !(self.noise_std > 0.0) {
            return bad("noise_std", "must be positive");
        }
        if !(self.bandwidth > 0.0) {
            return bad("bandwidth", "must be positive");
        }
        Ok(())
    }

    pub fn node(&self, position: Vector3<f64>, euler: Vector3<f64>) -> RadioNode {
        RadioNode {
            position,
            euler,
            antenna: self.antenna,
            tx_power: self.tx_power,
            noise_std: self.noise_std,
        }
    }
}

/// Base station, relay, source and jammer at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioScene {
    pub bs: RadioNode,
    pub relay: RadioNode,
    pub source: RadioNode,
    pub jammer: JammerNode,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelReport {
    /// source → relay
    pub link_21: LinkBudget,
    /// relay → base station
    pub link_10: LinkBudget,
    /// v₁₂, relay boresight vs. source direction
    pub misalign_12: f64,
    /// v₁₀, relay boresight vs. base-station direction
    pub misalign_10: f64,
    pub capacity: f64,
}

impl RadioScene {
    pub fn evaluate(&self) -> Result<ChannelReport, RadioError> {
        let link_21 = link_budget(&self.source, &self.relay, &self.jammer)?;
        let link_10 = link_budget(&self.relay, &self.bs, &self.jammer)?;
        Ok(ChannelReport {
            link_21,
            link_10,
            misalign_12: directional_cosine_sq(&self.relay, &self.source.position)?,
            misalign_10: directional_cosine_sq(&self.relay, &self.bs.position)?,
            capacity: end_to_end_capacity(
                link_21.spectral_efficiency,
                link_10.spectral_efficiency,
                self.bandwidth,
            ),
        })
    }
}
