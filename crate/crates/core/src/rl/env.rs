//! The control unit (leader, AV, one human follower) as a learning
//! environment: state, reward and episode stepping.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cf::{CfSpec, IdmParams};
use crate::error::{Error, Result};
use crate::intervention::{EaConfig, EaParams, EaTheta};
use crate::kinematics::{Trajectory, DT, SPEED_LIMIT};
use crate::metrics::RATIO_CAP;
use crate::platoon::{init_platoon, AvController, AvObservation, LeaderPulse, PlatoonConfig, Scenario, Simulation, TakeoverMode};
use crate::rng::{streams, RngStream};

pub const N_STATE: usize = 7;

/// `[gap_front, gap_rear, dv_front, dv_rear, w1·Φx, w2·Φv, w3·Φ_TTA]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlState(pub [f64; N_STATE]);

impl RlState {
    pub fn from_observation(obs: &AvObservation) -> Self {
        let [px, pv, pt] = obs.weighted_phi;
        Self([obs.gap_front, obs.gap_rear, obs.dv_front, obs.dv_rear, px, pv, pt])
    }

    pub fn build(sim: &Simulation) -> Self {
        Self::from_observation(&sim.observation())
    }

    /// Fixed affine rescaling fed to the networks.
    pub fn features<F: super::nn::Scalar>(&self) -> [F; N_STATE] {
        let s = &self.0;
        let f = [
            (s[0] - 30.0) / 20.0,
            (s[1] - 30.0) / 20.0,
            s[2] / 3.0,
            s[3] / 3.0,
            2.0 * s[4],
            2.0 * s[5],
            2.0 * s[6],
        ];
        f.map(super::nn::cast)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub w_r1: f64,
    pub w_r2: f64,
    pub w_r3: f64,
    pub rho: [f64; 4],
    pub v_e: f64,
    pub speed_limit: f64,
    /// Trailing window for the speed-error norms, in ticks.
    pub window: usize,
    pub eps_n: f64,
    pub ratio_cap: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            w_r1: 1.0,
            w_r2: 0.5,
            w_r3: 0.5,
            rho: [1.5, 1.0, 5.0, 5.0],
            v_e: 26.2,
            speed_limit: SPEED_LIMIT,
            window: 50,
            eps_n: 1e-3,
            ratio_cap: RATIO_CAP,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_r1, self.w_r2, self.w_r3, self.rho[0], self.rho[1], self.rho[2], self.rho[3]];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidInput("reward weights and penalties must be >= 0".into()));
        }
        if self.window < 1 {
            return Err(Error::InvalidInput("reward window must be >= 1 tick".into()));
        }
        if !(self.eps_n > 0.0) || !(self.ratio_cap > 0.0) {
            return Err(Error::InvalidInput("reward floor and ratio cap must be > 0".into()));
        }
        Ok(())
    }

    /// The most negative reward any transition can receive.
    /// Reward with full dissimilarity and both ratios at the cap, safety
    /// terms off.
    pub fn worst_non_collision(&self) -> f64 {
        -(self.w_r1 + self.w_r2 * self.rho[0] * self.ratio_cap + self.w_r3 * self.rho[1] * self.ratio_cap)
    }

    pub fn lower_bound(&self) -> f64 {
        -(self.w_r1
            + self.w_r2 * self.rho[0] * self.ratio_cap
            + self.w_r3 * self.rho[1] * self.ratio_cap
            + self.rho[2]
            + self.rho[3])
    }
}

/// The quantities the reward reads off the control unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardInputs {
    pub u: f64,
    pub norm_lead: f64,
    pub norm_av: f64,
    pub norm_follower: f64,
    /// Smaller of the AV's front and rear gaps.
    pub gap: f64,
    pub v: f64,
}

impl RewardInputs {
    /// Everything at equilibrium: no dissimilarity, floor-valued norms.
    pub fn equilibrium(rp: &RewardParams, gap: f64) -> Self {
        Self {
            u: 0.0,
            norm_lead: rp.eps_n,
            norm_av: rp.eps_n,
            norm_follower: rp.eps_n,
            gap,
            v: rp.v_e,
        }
    }
}

/// `√(Σ dt·e²) + εn` over a window of speed errors.
pub fn window_norm<'a>(errors: impl IntoIterator<Item = &'a f64>, dt: f64, eps_n: f64) -> f64 {
    errors.into_iter().map(|e| dt * e * e).sum::<f64>().sqrt() + eps_n
}

/// Immediate reward, before the reward scale.
pub fn reward(inp: &RewardInputs, rp: &RewardParams) -> f64 {
    let front = (inp.norm_av / inp.norm_lead).min(rp.ratio_cap);
    let rear = (inp.norm_follower / inp.norm_av).min(rp.ratio_cap);
    let collision = if inp.gap <= 0.0 { rp.rho[2] } else { 0.0 };
    let speeding = if inp.v >= rp.speed_limit { rp.rho[3] } else { 0.0 };
    -(rp.w_r1 * inp.u + rp.w_r2 * rp.rho[0] * front + rp.w_r3 * rp.rho[1] * rear + collision + speeding)
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub platoon: PlatoonConfig,
    /// Candidate leader profiles; one is drawn per episode. Empty means the
    /// platoon's own leader.
    pub leaders: Vec<Arc<Trajectory>>,
    pub reward: RewardParams,
    pub reward_scale: f64,
    pub discount: f64,
    /// Charge terminal transitions for remaining in the failure state.
    pub absorbing_terminal: bool,
    pub max_ticks: Option<usize>,
    /// Use this scenario for every episode instead of sampling.
    pub fixed_scenario: Option<Scenario>,
}

impl EnvConfig {
    pub fn packaged() -> Self {
        let platoon = PlatoonConfig::packaged();
        Self {
            reward: RewardParams {
                v_e: platoon.v_e,
                ..RewardParams::default()
            },
            platoon,
            leaders: Vec::new(),
            reward_scale: 0.75,
            discount: 0.9,
            absorbing_terminal: true,
            max_ticks: None,
            fixed_scenario: None,
        }
    }

    /// The simplified deterministic environment: one fixed scenario with
    /// IDM drivers, no evidence noise, takeovers suppressed and a short
    /// braking pulse.
    pub fn smoke() -> Result<Self> {
        let pulse = LeaderPulse {
            cruise: 0.0,
            decel: 2.0,
            brake_time: 2.0,
            hold: 2.0,
            accel: 1.0,
            duration: 10.0,
            ..LeaderPulse::default()
        };
        let mut cfg = Self::packaged();
        cfg.platoon.leader = Arc::new(pulse.trajectory()?);
        cfg.platoon.takeover = TakeoverMode::Suppressed;
        cfg.platoon.ea_config = EaConfig {
            sigma: 0.0,
            ..EaConfig::default()
        };
        let idm = CfSpec::Idm(IdmParams {
            v0: 33.0,
            t_headway: 1.2,
            s0: 2.0,
            a: 1.5,
            b: 2.0,
            delta: 4.0,
        });
        let theta = EaTheta {
            e0: 0.0,
            d: 0.2,
            e_t: 40.0,
            w1: 0.5,
            w2: 0.3,
            w3: 0.2,
        };
        cfg.fixed_scenario = Some(Scenario {
            seed: 0,
            followers: vec![idm.clone()],
            shadow: idm,
            ea: EaParams::new(theta, cfg.platoon.ea_config.clone())?,
        });
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.platoon.validate()?;
        self.reward.validate()?;
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::InvalidInput(format!("discount must lie in [0, 1], got {}", self.discount)));
        }
        if !(self.reward_scale > 0.0) {
            return Err(Error::InvalidInput("reward scale must be > 0".into()));
        }
        Ok(())
    }

    /// Train/test split of the evidence particles, the human-driver
    /// particles and (when there are several) the leader profiles.
    pub fn split(&self, train_frac: f64, seed: u64) -> Result<(Self, Self)> {
        let mut rng = RngStream::new(seed, streams::SPLIT);
        let (ea_a, ea_b) = self.platoon.ea_posterior.split(train_frac, &mut rng)?;
        let (hdv_a, hdv_b) = self.platoon.hdv_posterior.split(train_frac, &mut rng)?;
        let (lead_a, lead_b) = if self.leaders.len() >= 2 {
            crate::rng::train_test_split(&self.leaders, train_frac, &mut rng)
        } else {
            (self.leaders.clone(), self.leaders.clone())
        };
        let make = |ea, hdv, leaders| {
            let mut c = self.clone();
            c.platoon.ea_posterior = Arc::new(ea);
            c.platoon.hdv_posterior = Arc::new(hdv);
            c.leaders = leaders;
            c
        };
        Ok((make(ea_a, hdv_a, lead_a), make(ea_b, hdv_b, lead_b)))
    }

    /// Platoon configuration and scenario for one episode seed.
    pub fn episode(&self, seed: u64) -> Result<(PlatoonConfig, Scenario)> {
        let mut platoon = self.platoon.clone();
        if !self.leaders.is_empty() {
            let mut rng = RngStream::new(seed, streams::SCENARIO);
            let i = rand::Rng::random_range(&mut rng, 0..self.leaders.len());
            platoon.leader = self.leaders[i].clone();
        }
        let scenario = match &self.fixed_scenario {
            Some(s) => Scenario {
                seed,
                ..s.clone()
            },
            None => Scenario::sample(&platoon, seed)?,
        };
        Ok((platoon, scenario))
    }
}

/// Placeholder AV slot for externally supplied actions.
struct External;

impl AvController for External {
    fn command(&mut self, _obs: &AvObservation) -> Result<f64> {
        Err(Error::InvalidInput("environment AV is driven through step()".into()))
    }

    fn name(&self) -> String {
        "learned-policy".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub state: RlState,
    /// Scaled reward as stored for learning, terminal charge included.
    pub reward: f64,
    /// Immediate reward before scaling and terminal charge.
    pub raw: f64,
    /// Terminal (no bootstrapping): takeover or collision.
    pub done: bool,
    /// Episode over for any reason.
    pub finished: bool,
    pub takeover: bool,
    pub collision: bool,
}

pub struct ControlUnitEnv {
    cfg: EnvConfig,
    sim: Option<Simulation>,
    errors: [VecDeque<f64>; 3],
    state: RlState,
    ticks: usize,
}

impl ControlUnitEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            sim: None,
            errors: Default::default(),
            state: RlState([0.0; N_STATE]),
            ticks: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn simulation(&self) -> Option<&Simulation> {
        self.sim.as_ref()
    }

    pub fn reset(&mut self, seed: u64) -> Result<RlState> {
        let (platoon, scenario) = self.cfg.episode(seed)?;
        let sim = init_platoon(&platoon, scenario, Box::new(External))?;
        self.state = RlState::build(&sim);
        self.sim = Some(sim);
        self.errors = Default::default();
        self.ticks = 0;
        Ok(self.state)
    }

    pub fn state(&self) -> RlState {
        self.state
    }

    /// Apply `accel` (m/s²) to the AV for one tick.
    pub fn step(&mut self, accel: f64) -> Result<StepResult> {
        let sim = self
            .sim
            .as_mut()
            .ok_or_else(|| Error::InvalidInput("step() before reset()".into()))?;
        sim.step_with(accel)?;
        self.ticks += 1;
        let rp = &self.cfg.reward;
        let v_e = rp.v_e;
        for (i, q) in self.errors.iter_mut().enumerate() {
            if q.len() == rp.window {
                q.pop_front();
            }
            q.push_back(sim.vehicles()[i].v - v_e);
        }
        let obs = sim.observation();
        let dt = DT;
        let inp = RewardInputs {
            u: obs.u,
            norm_lead: window_norm(&self.errors[0], dt, rp.eps_n),
            norm_av: window_norm(&self.errors[1], dt, rp.eps_n),
            norm_follower: window_norm(&self.errors[2], dt, rp.eps_n),
            gap: obs.gap_front.min(obs.gap_rear),
            v: obs.v,
        };
        let raw = reward(&inp, rp);
        let takeover = sim.takeover().is_some();
        let collision = inp.gap <= 0.0;
        let done = takeover || collision;
        let out_of_time = sim.is_done() || self.cfg.max_ticks.is_some_and(|m| self.ticks >= m);
        let mut r = raw;
        if done && self.cfg.absorbing_terminal && self.cfg.discount < 1.0 {
            let stuck = rp.worst_non_collision() - if collision { rp.rho[2] } else { 0.0 };
            r += self.cfg.discount / (1.0 - self.cfg.discount) * stuck;
        }
        self.state = RlState::from_observation(&obs);
        Ok(StepResult {
            state: self.state,
            reward: r * self.cfg.reward_scale,
            raw,
            done,
            finished: done || out_of_time,
            takeover,
            collision,
        })
    }

    pub fn into_simulation(self) -> Option<Simulation> {
        self.sim
    }
}
