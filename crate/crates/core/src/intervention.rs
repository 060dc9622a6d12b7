//! Evidence-accumulation takeover engine.
//!
//! A driver supervising an automated vehicle compares it with how they would
//! drive themselves. The comparison runs against a *shadow* vehicle: a
//! counterfactual copy of the AV driven by the driver's own car-following
//! law, following the same leader but never interacting with the real
//! platoon. Three normalized channels (spacing, relative speed, time
//! pressure) combine into a dissimilarity `U ∈ [0, 1]` that drifts the
//! evidence `E`; once `E` exceeds the threshold the driver takes over for
//! good.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::calibration::Posterior;
use crate::cf::{CfController, CfSpec};
use crate::error::{Error, Result};
use crate::kinematics::{euler_step, VehicleState, DT, VEHICLE_LENGTH};
use crate::rng::gaussian_draw;

/// Below this AV speed the remaining-travel-time estimate is saturated
/// instead of dividing by a vanishing speed.
pub const TTA_MIN_SPEED: f64 = 0.1;

/// Calibrated part of the evidence model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EaTheta {
    pub e0: f64,
    /// Drift rate per step.
    pub d: f64,
    /// Evidence threshold.
    pub e_t: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl EaTheta {
    pub fn weights(&self) -> [f64; 3] {
        [self.w1, self.w2, self.w3]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|x| !(0.0..=1.0).contains(x)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("EA weights must lie in [0,1] and sum to 1, got {w:?}")));
        }
        if !(self.e0 >= 0.0) || !(self.e_t > self.e0) {
            return Err(Error::InvalidInput(format!(
                "EA requires E_T > E0 >= 0, got E0={}, E_T={}",
                self.e0, self.e_t
            )));
        }
        if !(self.d >= 0.0) || !self.d.is_finite() {
            return Err(Error::InvalidInput(format!("EA drift must be finite and >= 0, got {}", self.d)));
        }
        Ok(())
    }
}

/// Min-max normalization bounds of one dissimilarity channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub min: f64,
    pub max: f64,
}

impl Scale {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

/// Fixed (not calibrated) part of the evidence model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EaConfig {
    /// Standard deviation of the diffusion noise.
    pub sigma: f64,
    /// Diffusion coefficient.
    pub alpha: f64,
    pub phi_x: Scale,
    pub phi_v: Scale,
    pub phi_tta: Scale,
    /// Total trip distance (m).
    pub d_total: f64,
    /// Target total travel time (s).
    pub ttt_a: f64,
}

impl Default for EaConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            alpha: 0.1,
            phi_x: Scale::new(0.0, 20.0),
            phi_v: Scale::new(0.0, 5.0),
            phi_tta: Scale::new(0.0, 30.0),
            d_total: 1350.0,
            ttt_a: 68.0,
        }
    }
}

impl EaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("phi_x", self.phi_x), ("phi_v", self.phi_v), ("phi_tta", self.phi_tta)] {
            if !(s.max > s.min) {
                return Err(Error::InvalidInput(format!("{name}: max must exceed min ({} <= {})", s.max, s.min)));
            }
        }
        if !(self.sigma >= 0.0) || !(self.alpha >= 0.0) {
            return Err(Error::InvalidInput("EA sigma and alpha must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EaParams {
    pub theta: EaTheta,
    pub config: EaConfig,
}

impl EaParams {
    pub fn new(theta: EaTheta, config: EaConfig) -> Result<Self> {
        theta.validate()?;
        config.validate()?;
        Ok(Self { theta, config })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Dissimilarity {
    pub u: f64,
    pub phi_x: f64,
    pub phi_v: f64,
    pub phi_tta: f64,
}

impl Dissimilarity {
    pub fn channels(&self) -> [f64; 3] {
        [self.phi_x, self.phi_v, self.phi_tta]
    }
}

/// The three normalized channels `(Φx, Φv, Φ_TTA)`; they depend on the
/// kinematics and the fixed configuration only, not on the calibrated
/// parameters.
pub fn channels(
    av: &VehicleState,
    shadow: &VehicleState,
    leader: &VehicleState,
    t: f64,
    cfg: &EaConfig,
) -> [f64; 3] {
    // Δx_AV − Δx_HDV and Δv_AV − Δv_HDV: the leader terms cancel.
    let spacing_diff = (shadow.y - av.y).abs();
    let speed_diff = (shadow.v - av.v).abs();
    let _ = leader;
    let tta_available = (cfg.ttt_a - t).max(0.0);
    let tta_remaining = if av.v <= TTA_MIN_SPEED {
        cfg.phi_tta.max + tta_available
    } else {
        (cfg.d_total - av.y) / av.v
    };
    let pressure = (tta_remaining - tta_available).max(0.0);
    [
        cfg.phi_x.normalize(spacing_diff),
        cfg.phi_v.normalize(speed_diff),
        cfg.phi_tta.normalize(pressure),
    ]
}

/// Driving-style dissimilarity between the AV and the driver's shadow at
/// elapsed trip time `t`.
pub fn dissimilarity(
    av: &VehicleState,
    shadow: &VehicleState,
    leader: &VehicleState,
    t: f64,
    p: &EaParams,
) -> Dissimilarity {
    let [phi_x, phi_v, phi_tta] = channels(av, shadow, leader, t, &p.config);
    let w = p.theta.weights();
    Dissimilarity {
        u: (w[0] * phi_x + w[1] * phi_v + w[2] * phi_tta).clamp(0.0, 1.0),
        phi_x,
        phi_v,
        phi_tta,
    }
}

/// Remaining travel time at current speed, `(D_T - y) / v`.
pub fn tta_remaining(y: f64, v: f64, d_total: f64) -> f64 {
    (d_total - y) / v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Automated,
    Manual,
}

impl Mode {
    /// The mode bit: 1 automated, 0 manual.
    pub fn eta(self) -> f64 {
        match self {
            Mode::Automated => 1.0,
            Mode::Manual => 0.0,
        }
    }
}

/// Live evidence state of one supervised AV, including its shadow driver.
#[derive(Debug, Clone)]
pub struct EaState {
    pub e: f64,
    pub mode: Mode,
    pub u: f64,
    pub shadow: VehicleState,
    shadow_law: CfController,
    pub takeover_time: Option<f64>,
    /// Number of evidence updates applied so far.
    pub steps: usize,
    /// Set when the shadow had to be pulled back behind its leader.
    pub shadow_clamped: bool,
}

impl EaState {
    /// Fresh state with the shadow placed exactly on the AV.
    pub fn new(e0: f64, av: &VehicleState, shadow_spec: CfSpec) -> Self {
        let shadow = VehicleState {
            role: crate::kinematics::Role::Shadow,
            a: 0.0,
            ..*av
        };
        Self {
            e: e0,
            mode: Mode::Automated,
            u: 0.0,
            shadow,
            shadow_law: CfController::new(shadow_spec),
            takeover_time: None,
            steps: 0,
            shadow_clamped: false,
        }
    }

    pub fn shadow_spec(&self) -> &CfSpec {
        self.shadow_law.spec()
    }

    pub fn eta(&self) -> f64 {
        self.mode.eta()
    }

    /// One evidence update: `E' = max(0, E + d·U·η + α·ε)` with the previous
    /// step's η, then `η' = 1` iff `E' <= E_T`. Evidence freezes after the
    /// first takeover.
    pub fn ea_step<R: RngCore + ?Sized>(&mut self, u: f64, p: &EaParams, rng: &mut R) -> Result<()> {
        self.u = u;
        if self.mode == Mode::Manual {
            return Ok(());
        }
        let eps = gaussian_draw(rng, 0.0, p.config.sigma)?;
        let drift = p.theta.d * u * self.mode.eta();
        self.e = (self.e + drift + p.config.alpha * eps).max(0.0);
        self.steps += 1;
        if self.e > p.theta.e_t {
            self.switch_to_manual();
        }
        Ok(())
    }

    /// Hand control to the driver now, whatever the evidence says.
    pub fn force_takeover(&mut self) {
        if self.mode == Mode::Automated {
            self.steps += 1;
            self.switch_to_manual();
        }
    }

    /// Record one evidence step without letting it trigger a takeover.
    pub fn advance_suppressed<R: RngCore + ?Sized>(&mut self, u: f64, p: &EaParams, rng: &mut R) -> Result<()> {
        self.u = u;
        let eps = gaussian_draw(rng, 0.0, p.config.sigma)?;
        self.e = (self.e + p.theta.d * u + p.config.alpha * eps).max(0.0);
        self.steps += 1;
        Ok(())
    }

    fn switch_to_manual(&mut self) {
        self.mode = Mode::Manual;
        if self.takeover_time.is_none() {
            self.takeover_time = Some(self.steps as f64 * DT);
        }
    }

    /// Advance the shadow one tick behind `leader` (start-of-tick state).
    pub fn step_shadow(&mut self, leader: &VehicleState, dt: f64) -> Result<()> {
        let mut gap = leader.y - self.shadow.y - VEHICLE_LENGTH;
        if gap <= 0.0 {
            self.shadow.y = leader.y - VEHICLE_LENGTH - 0.1;
            self.shadow_clamped = true;
            gap = 0.1;
        }
        let dv = leader.v - self.shadow.v;
        let a = self.shadow_law.accel(gap, self.shadow.v, dv, leader.v)?;
        self.shadow = euler_step(&self.shadow, a, dt)?;
        self.shadow_law.record(self.shadow.a);
        Ok(())
    }
}

/// Convex switch between the driver's law and the automation.
pub fn generalized_cf_accel(eta: f64, a_hdv: f64, a_av: f64) -> f64 {
    (1.0 - eta) * a_hdv + eta * a_av
}

/// Draw one particle (weight-proportionally) and merge it with the fixed
/// configuration.
pub fn sample_ea_params<R: RngCore + ?Sized>(
    rng: &mut R,
    posterior: &Posterior,
    config: &EaConfig,
) -> Result<EaParams> {
    let particles = posterior.particles();
    if particles.is_empty() {
        return Err(Error::Empty("EA posterior"));
    }
    let u: f64 = rng.random::<f64>() * posterior.total_weight();
    let mut acc = 0.0;
    let mut chosen = particles.len() - 1;
    for (i, p) in particles.iter().enumerate() {
        acc += p.weight;
        if u < acc {
            chosen = i;
            break;
        }
    }
    Ok(EaParams {
        theta: particles[chosen].theta,
        config: *config,
    })
}
