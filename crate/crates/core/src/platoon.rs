//! Single-lane platoon simulation: leader profile, supervised AV and the
//! human-driven followers behind it.
//!
//! Vehicle 0 replays the leader profile, vehicle 1 is the AV under the
//! generalized car-following law, vehicles `2..` are hybrid HDV followers.
//! All vehicles advance synchronously from start-of-tick states.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibration::Posterior;
use crate::cf::{equilibrium_gap, sample_hybrid, CfController, CfSpec, HdvPosterior};
use crate::error::{Error, Result};
use crate::intervention::{
    dissimilarity, generalized_cf_accel, sample_ea_params, EaConfig, EaParams, EaState, Mode,
};
use crate::kinematics::{euler_step, Role, Trajectory, VehicleState, DT, SPEED_LIMIT, VEHICLE_LENGTH};
use crate::rng::{streams, RngStream};

const DEFAULT_LEADER_CSV: &str = include_str!("../data/leader_profile.csv");

#[derive(Debug, Clone, Copy, Deserialize)]
struct ProfileRow {
    t: f64,
    x: f64,
    v: f64,
    a: f64,
}

/// Read a `t,x,v,a` leader profile, resampling to the model step by linear
/// interpolation when the source step differs.
pub fn load_leader_profile(path: &Path) -> Result<Trajectory> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_leader_profile(file, path)
}

/// The shipped 70 s profile: cruise at 26.2 m/s, brake at 2.5 m/s² for 4 s,
/// hold, then recover at 1 m/s².
pub fn default_leader_profile() -> Trajectory {
    parse_leader_profile(DEFAULT_LEADER_CSV.as_bytes(), Path::new("<packaged leader_profile.csv>"))
        .expect("packaged leader profile is valid")
}

fn parse_leader_profile<R: std::io::Read>(reader: R, path: &Path) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    for col in ["t", "x", "v", "a"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::parse(path, 0, format!("missing `{col}` column")));
        }
    }
    let mut rows: Vec<ProfileRow> = Vec::new();
    for (i, rec) in rdr.deserialize::<ProfileRow>().enumerate() {
        let row = i + 1;
        let r = rec.map_err(|e| Error::parse(path, row, e.to_string()))?;
        if ![r.t, r.x, r.v, r.a].iter().all(|x| x.is_finite()) {
            return Err(Error::parse(path, row, "non-finite value"));
        }
        if r.v < 0.0 {
            return Err(Error::parse(path, row, format!("negative speed {}", r.v)));
        }
        if rows.last().is_some_and(|p| r.t <= p.t) {
            return Err(Error::parse(path, row, "time is not strictly increasing"));
        }
        rows.push(r);
    }
    if rows.len() < 2 {
        return Err(Error::parse(path, 0, "a leader profile needs at least two rows"));
    }
    let t0 = rows[0].t;
    let span = rows[rows.len() - 1].t - t0;
    let n = (span / DT + 1e-6).floor() as usize;
    let mut samples = Vec::with_capacity(n + 1);
    let mut j = 0;
    for k in 0..=n {
        let t = t0 + k as f64 * DT;
        while j + 2 < rows.len() && rows[j + 1].t <= t + 1e-9 {
            j += 1;
        }
        let (p, q) = (&rows[j], &rows[j + 1]);
        let s = ((t - p.t) / (q.t - p.t)).clamp(0.0, 1.0);
        let lerp = |a: f64, b: f64| a + s * (b - a);
        samples.push(VehicleState {
            a: lerp(p.a, q.a),
            ..VehicleState::new(0, Role::Leader, lerp(p.x, q.x), lerp(p.v, q.v).max(0.0))
        });
    }
    Trajectory::new(DT, samples)
}

pub fn save_leader_profile(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["t", "x", "v", "a"]).map_err(|e| Error::csv(path, e))?;
    for (k, s) in traj.samples.iter().enumerate() {
        w.write_record([traj.time(k), s.y, s.v, s.a].map(|x| x.to_string()))
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Piecewise-constant-acceleration leader: cruise, brake, hold, recover,
/// cruise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderPulse {
    pub v_e: f64,
    pub cruise: f64,
    pub decel: f64,
    pub brake_time: f64,
    pub hold: f64,
    pub accel: f64,
    pub duration: f64,
}

impl Default for LeaderPulse {
    fn default() -> Self {
        Self {
            v_e: 26.2,
            cruise: 15.0,
            decel: 2.5,
            brake_time: 4.0,
            hold: 5.0,
            accel: 1.0,
            duration: 70.0,
        }
    }
}

impl LeaderPulse {
    pub fn trajectory(&self) -> Result<Trajectory> {
        let recover = self.decel * self.brake_time / self.accel.max(1e-9);
        let phases = [
            (self.cruise, 0.0),
            (self.brake_time, -self.decel),
            (self.hold, 0.0),
            (recover, self.accel),
        ];
        let n = (self.duration / DT).round() as usize;
        let mut s = VehicleState::new(0, Role::Leader, 0.0, self.v_e);
        let mut out = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let t = k as f64 * DT + 1e-9;
            let mut edge = 0.0;
            let mut a = 0.0;
            for (len, acc) in phases {
                if t >= edge && t < edge + len {
                    a = acc;
                }
                edge += len;
            }
            if k == n {
                a = 0.0;
            }
            let cur = VehicleState { a, ..s };
            out.push(cur);
            s = euler_step(&cur, a, DT)?;
        }
        Trajectory::new(DT, out)
    }
}

/// What the AV controller sees at the start of a tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvObservation {
    pub t: f64,
    pub gap_front: f64,
    pub gap_rear: f64,
    pub v: f64,
    pub v_lead: f64,
    pub v_rear: f64,
    /// Leader speed minus own speed.
    pub dv_front: f64,
    /// Own speed minus follower speed.
    pub dv_rear: f64,
    /// Weighted channels `(w1·Φx, w2·Φv, w3·Φ_TTA)`.
    pub weighted_phi: [f64; 3],
    pub u: f64,
}

/// Anything that can drive the AV slot.
pub trait AvController: Send {
    fn command(&mut self, obs: &AvObservation) -> Result<f64>;

    fn record(&mut self, _realized: f64) {}

    /// Gap this controller holds at speed `v_e`, if it has one in closed form.
    fn equilibrium_gap(&self, _v_e: f64) -> Option<f64> {
        None
    }

    fn name(&self) -> String;
}

impl AvController for CfController {
    fn command(&mut self, obs: &AvObservation) -> Result<f64> {
        self.accel(obs.gap_front, obs.v, obs.dv_front, obs.v_lead)
    }

    fn record(&mut self, realized: f64) {
        CfController::record(self, realized)
    }

    fn equilibrium_gap(&self, v_e: f64) -> Option<f64> {
        equilibrium_gap(self.spec(), v_e).ok()
    }

    fn name(&self) -> String {
        self.spec().kind().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TakeoverMode {
    /// The evidence model decides.
    Model,
    /// Evidence is traced but never triggers a takeover.
    Suppressed,
    /// Takeover at the first tick whose end time reaches `t`, regardless of
    /// the evidence.
    ForcedAt(f64),
}

#[derive(Debug, Clone)]
pub struct PlatoonConfig {
    pub leader: Arc<Trajectory>,
    pub v_e: f64,
    pub n_followers: usize,
    pub hdv_posterior: Arc<HdvPosterior>,
    pub ea_posterior: Arc<Posterior>,
    pub ea_config: EaConfig,
    pub takeover: TakeoverMode,
}

impl PlatoonConfig {
    /// Packaged leader profile and posteriors, one follower.
    pub fn packaged() -> Self {
        Self {
            leader: Arc::new(default_leader_profile()),
            v_e: 26.2,
            n_followers: 1,
            hdv_posterior: Arc::new(HdvPosterior::packaged()),
            ea_posterior: Arc::new(Posterior::packaged()),
            ea_config: EaConfig::default(),
            takeover: TakeoverMode::Model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_followers < 1 {
            return Err(Error::InvalidInput("platoon needs at least one follower".into()));
        }
        if !(self.v_e > 0.0) {
            return Err(Error::InvalidInput(format!("equilibrium speed must be > 0, got {}", self.v_e)));
        }
        self.ea_config.validate()
    }
}

/// The random draws that define one run: follower laws, the driver's own
/// law and evidence parameters. Controllers compared on the same seed face
/// the same scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub followers: Vec<CfSpec>,
    pub shadow: CfSpec,
    pub ea: EaParams,
}

impl Scenario {
    pub fn sample(cfg: &PlatoonConfig, seed: u64) -> Result<Self> {
        let mut hdv = RngStream::new(seed, streams::HDV_SPECS);
        let shadow = sample_hybrid(&mut hdv, &cfg.hdv_posterior)?;
        let followers = (0..cfg.n_followers)
            .map(|_| sample_hybrid(&mut hdv, &cfg.hdv_posterior))
            .collect::<Result<_>>()?;
        let mut ea_rng = RngStream::new(seed, streams::EA_PARAMS);
        let ea = sample_ea_params(&mut ea_rng, &cfg.ea_posterior, &cfg.ea_config)?;
        Ok(Self {
            seed,
            followers,
            shadow,
            ea,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EaTraceEntry {
    pub e: f64,
    pub eta: f64,
    pub u: f64,
    pub phi_x: f64,
    pub phi_v: f64,
    pub phi_tta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    Collision,
    Speeding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyViolation {
    pub t: f64,
    pub vehicle: u32,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TakeoverEvent {
    pub time: f64,
    /// Tick whose evidence update switched the mode.
    pub tick: usize,
}

/// A finished run. `vehicles[0]` is the leader, `vehicles[1]` the AV, then
/// followers; `ea_trace[k]` is the evidence state applied during tick `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub seed: u64,
    pub vehicles: Vec<Trajectory>,
    pub shadow: Trajectory,
    pub ea_trace: Vec<EaTraceEntry>,
    pub takeover: Option<TakeoverEvent>,
    pub violations: Vec<SafetyViolation>,
    pub controller: String,
}

impl Rollout {
    pub fn av(&self) -> &Trajectory {
        &self.vehicles[1]
    }

    pub fn ticks(&self) -> usize {
        self.ea_trace.len()
    }

    pub fn collided(&self) -> bool {
        self.violations.iter().any(|v| v.kind == ViolationKind::Collision)
    }

    /// Per-vehicle CSV with header `t,id,role,x,v,a,mode,E,U`. Evidence
    /// columns are filled on AV rows only.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "id", "role", "x", "v", "a", "mode", "E", "U"])?;
        let mut emit = |traj: &Trajectory, ea: bool| -> csv::Result<()> {
            for (k, s) in traj.samples.iter().enumerate() {
                let (mode, e, u) = match (ea, self.ea_trace.get(k.min(self.ea_trace.len().saturating_sub(1)))) {
                    (true, Some(tr)) => (
                        if tr.eta == 1.0 { "1" } else { "0" }.to_string(),
                        tr.e.to_string(),
                        tr.u.to_string(),
                    ),
                    _ => (String::new(), String::new(), String::new()),
                };
                wtr.write_record([
                    format!("{:.1}", traj.time(k)),
                    s.id.to_string(),
                    s.role.as_str().to_string(),
                    s.y.to_string(),
                    s.v.to_string(),
                    s.a.to_string(),
                    mode,
                    e,
                    u,
                ])?;
            }
            Ok(())
        };
        for (i, traj) in self.vehicles.iter().enumerate() {
            emit(traj, i == 1)?;
        }
        emit(&self.shadow, false)?;
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| Error::csv(path, e))
    }
}

/// Live platoon state.
pub struct Simulation {
    leader: Arc<Trajectory>,
    tick: usize,
    seed: u64,
    vehicles: Vec<VehicleState>,
    followers: Vec<CfController>,
    av: Box<dyn AvController>,
    av_human: CfController,
    ea: EaState,
    params: EaParams,
    mode: TakeoverMode,
    noise: RngStream,
    traj: Vec<Vec<VehicleState>>,
    shadow_traj: Vec<VehicleState>,
    trace: Vec<EaTraceEntry>,
    takeover: Option<TakeoverEvent>,
    violations: Vec<SafetyViolation>,
    last_obs: AvObservation,
    pub warnings: Vec<String>,
}

/// Place every vehicle at its equilibrium gap behind its predecessor. The
/// AV uses its own controller's gap when it has one and the driver's law
/// otherwise.
pub fn init_platoon(cfg: &PlatoonConfig, scenario: Scenario, av: Box<dyn AvController>) -> Result<Simulation> {
    cfg.validate()?;
    if scenario.followers.is_empty() {
        return Err(Error::InvalidInput("scenario has no followers".into()));
    }
    let v_e = cfg.v_e;
    let lead0 = cfg.leader.samples[0];
    let mut warnings = Vec::new();
    if (lead0.v - v_e).abs() > 0.5 {
        warnings.push(format!("leader starts at {} m/s, {} m/s from v_E", lead0.v, (lead0.v - v_e).abs()));
    }
    let named = |what: String, e: Error| match e {
        Error::NoEquilibrium { lo, hi, .. } => Error::NoEquilibrium { what, lo, hi },
        e => e,
    };
    let av_gap = match av.equilibrium_gap(v_e) {
        Some(g) => g,
        None => equilibrium_gap(&scenario.shadow, v_e)
            .map_err(|e| named(format!("vehicle 1 (AV, driver law {})", scenario.shadow), e))?,
    };
    let mut vehicles = vec![VehicleState { a: 0.0, ..lead0 }];
    let av_state = VehicleState::new(1, Role::Av, lead0.y - VEHICLE_LENGTH - av_gap, v_e);
    vehicles.push(av_state);
    for (i, spec) in scenario.followers.iter().enumerate() {
        let id = i as u32 + 2;
        let g = equilibrium_gap(spec, v_e).map_err(|e| named(format!("vehicle {id} ({spec})"), e))?;
        let prev = vehicles[vehicles.len() - 1].y;
        vehicles.push(VehicleState::new(id, Role::HdvFollower, prev - VEHICLE_LENGTH - g, v_e));
    }
    let ea = EaState::new(scenario.ea.theta.e0, &av_state, scenario.shadow.clone());
    let n = vehicles.len();
    Ok(Simulation {
        leader: cfg.leader.clone(),
        tick: 0,
        seed: scenario.seed,
        followers: scenario.followers.iter().cloned().map(CfController::new).collect(),
        av,
        av_human: CfController::new(scenario.shadow.clone()),
        ea,
        params: scenario.ea,
        mode: cfg.takeover,
        noise: RngStream::new(scenario.seed, streams::EA_NOISE),
        traj: vec![Vec::with_capacity(cfg.leader.len()); n],
        shadow_traj: Vec::with_capacity(cfg.leader.len()),
        trace: Vec::with_capacity(cfg.leader.len()),
        takeover: None,
        violations: Vec::new(),
        last_obs: AvObservation {
            t: 0.0,
            gap_front: av_gap,
            gap_rear: 0.0,
            v: v_e,
            v_lead: lead0.v,
            v_rear: v_e,
            dv_front: 0.0,
            dv_rear: 0.0,
            weighted_phi: [0.0; 3],
            u: 0.0,
        },
        vehicles,
        warnings,
    })
}

impl Simulation {
    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.leader.dt
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn ea(&self) -> &EaState {
        &self.ea
    }

    pub fn params(&self) -> &EaParams {
        &self.params
    }

    pub fn takeover(&self) -> Option<TakeoverEvent> {
        self.takeover
    }

    pub fn violations(&self) -> &[SafetyViolation] {
        &self.violations
    }

    pub fn is_done(&self) -> bool {
        self.tick + 1 >= self.leader.len()
    }

    /// Speed history of vehicle `i` up to (excluding) the current tick.
    pub fn history(&self, i: usize) -> &[VehicleState] {
        &self.traj[i]
    }

    /// Observation for the current tick, including this tick's
    /// dissimilarity (not yet fed to the evidence model).
    pub fn observation(&self) -> AvObservation {
        let lead = &self.vehicles[0];
        let av = &self.vehicles[1];
        let rear = &self.vehicles[2];
        let d = dissimilarity(av, &self.ea.shadow, lead, self.time(), &self.params);
        let w = self.params.theta.weights();
        AvObservation {
            t: self.time(),
            gap_front: lead.y - av.y - VEHICLE_LENGTH,
            gap_rear: av.y - rear.y - VEHICLE_LENGTH,
            v: av.v,
            v_lead: lead.v,
            v_rear: rear.v,
            dv_front: lead.v - av.v,
            dv_rear: av.v - rear.v,
            weighted_phi: [w[0] * d.phi_x, w[1] * d.phi_v, w[2] * d.phi_tta],
            u: d.u,
        }
    }

    /// Observation at the start of the most recent tick.
    pub fn last_observation(&self) -> AvObservation {
        self.last_obs
    }

    /// Advance one tick using the AV controller.
    pub fn step(&mut self) -> Result<()> {
        self.advance(None)
    }

    /// Advance one tick with an externally chosen AV acceleration (used
    /// while automated; ignored after takeover).
    pub fn step_with(&mut self, av_accel: f64) -> Result<()> {
        self.advance(Some(av_accel))
    }

    fn advance(&mut self, external: Option<f64>) -> Result<()> {
        if self.is_done() {
            return Err(Error::InvalidInput("leader profile exhausted".into()));
        }
        let k = self.tick;
        let dt = self.leader.dt;
        let t = self.time();
        let obs = self.observation();
        self.last_obs = obs;

        // Evidence update first.
        let d = dissimilarity(&self.vehicles[1], &self.ea.shadow, &self.vehicles[0], t, &self.params);
        let was_manual = self.ea.mode == Mode::Manual;
        match self.mode {
            TakeoverMode::Model => self.ea.ea_step(d.u, &self.params, &mut self.noise)?,
            TakeoverMode::Suppressed => self.ea.advance_suppressed(d.u, &self.params, &mut self.noise)?,
            TakeoverMode::ForcedAt(t_force) => {
                if self.ea.mode == Mode::Automated && (k + 1) as f64 * dt >= t_force - 1e-9 {
                    self.ea.u = d.u;
                    self.ea.force_takeover();
                } else {
                    self.ea.ea_step(d.u, &self.params, &mut self.noise)?;
                    if self.ea.mode == Mode::Manual && !was_manual {
                        // Only the forced time may switch the mode.
                        self.ea.mode = Mode::Automated;
                        self.ea.takeover_time = None;
                    }
                }
            }
        }
        if !was_manual && self.ea.mode == Mode::Manual {
            self.takeover = Some(TakeoverEvent {
                time: self.ea.takeover_time.unwrap_or((k + 1) as f64 * dt),
                tick: k,
            });
        }
        self.trace.push(EaTraceEntry {
            e: self.ea.e,
            eta: self.ea.eta(),
            u: d.u,
            phi_x: d.phi_x,
            phi_v: d.phi_v,
            phi_tta: d.phi_tta,
        });

        // Candidate accelerations from start-of-tick states.
        let n = self.vehicles.len();
        let mut accel = vec![0.0; n];
        accel[0] = self.leader.samples[k].a;
        let eta = self.ea.eta();
        let (gap_av, _) = self.clamped_gap(1, t);
        accel[1] = if eta == 1.0 {
            let a_av = match external {
                Some(a) => crate::cf::clamp_accel(a),
                None => self.av.command(&AvObservation { gap_front: gap_av, ..obs })?,
            };
            generalized_cf_accel(eta, 0.0, a_av)
        } else {
            let (lead, av) = (self.vehicles[0], self.vehicles[1]);
            let a_hdv = self.av_human.accel(gap_av, av.v, lead.v - av.v, lead.v)?;
            generalized_cf_accel(eta, a_hdv, 0.0)
        };
        for i in 2..n {
            let (gap, _) = self.clamped_gap(i, t);
            let (lead, me) = (self.vehicles[i - 1], self.vehicles[i]);
            accel[i] = self.followers[i - 2].accel(gap, me.v, lead.v - me.v, lead.v)?;
        }
        self.shadow_traj.push(self.ea.shadow);
        self.ea.step_shadow(&self.vehicles[0], dt)?;

        // Record start-of-tick states with the acceleration applied over the tick.
        for i in 0..n {
            self.traj[i].push(VehicleState { a: accel[i], ..self.vehicles[i] });
        }
        let mut next = Vec::with_capacity(n);
        next.push(VehicleState {
            id: 0,
            role: Role::Leader,
            ..self.leader.samples[k + 1]
        });
        for i in 1..n {
            let s = euler_step(&self.vehicles[i], accel[i], dt)?;
            if i == 1 {
                if eta == 1.0 {
                    self.av.record(s.a);
                } else {
                    self.av_human.record(s.a);
                }
            } else {
                self.followers[i - 2].record(s.a);
            }
            if s.a != accel[i] {
                self.traj[i].last_mut().expect("pushed above").a = s.a;
            }
            next.push(s);
        }
        self.vehicles = next;
        self.tick += 1;
        let av = self.vehicles[1];
        if av.v >= SPEED_LIMIT {
            self.violations.push(SafetyViolation {
                t: self.time(),
                vehicle: 1,
                kind: ViolationKind::Speeding,
            });
        }
        for i in 1..n {
            if self.vehicles[i - 1].y - self.vehicles[i].y - VEHICLE_LENGTH <= 0.0 {
                self.violations.push(SafetyViolation {
                    t: self.time(),
                    vehicle: i as u32,
                    kind: ViolationKind::Collision,
                });
            }
        }
        Ok(())
    }

    fn clamped_gap(&self, i: usize, _t: f64) -> (f64, bool) {
        let gap = self.vehicles[i - 1].y - self.vehicles[i].y - VEHICLE_LENGTH;
        if gap <= 0.0 {
            (0.1, true)
        } else {
            (gap, false)
        }
    }

    /// Record the final states and hand back the finished rollout.
    pub fn into_rollout(mut self) -> Result<Rollout> {
        let dt = self.leader.dt;
        for (i, s) in self.vehicles.iter().enumerate() {
            self.traj[i].push(VehicleState { a: 0.0, ..*s });
        }
        self.shadow_traj.push(self.ea.shadow);
        let controller = self.av.name();
        let vehicles = self
            .traj
            .into_iter()
            .map(|s| Trajectory::new(dt, s))
            .collect::<Result<_>>()?;
        Ok(Rollout {
            seed: self.seed,
            vehicles,
            shadow: Trajectory::new(dt, self.shadow_traj)?,
            ea_trace: self.trace,
            takeover: self.takeover,
            violations: self.violations,
            controller,
        })
    }
}

/// Initialize and run `horizon_s` seconds.
pub fn run(cfg: &PlatoonConfig, scenario: Scenario, av: Box<dyn AvController>, horizon_s: f64) -> Result<Rollout> {
    let ticks = (horizon_s / cfg.leader.dt).round() as usize;
    if ticks + 1 > cfg.leader.len() {
        return Err(Error::InvalidInput(format!(
            "horizon {horizon_s} s exceeds the {} s leader profile",
            cfg.leader.duration()
        )));
    }
    let mut sim = init_platoon(cfg, scenario, av)?;
    for _ in 0..ticks {
        sim.step()?;
    }
    sim.into_rollout()
}
