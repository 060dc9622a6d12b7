//! Training loop, learned-policy controller and matched-seed evaluation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::{ControlUnitEnv, EnvConfig, RlState};
use super::policy::PolicyFunction;
use super::replay::{ReplayBuffer, Transition};
use super::sac::{Sac, SacHyper};
use crate::cf::{AvPosterior, CfController, CfSpec};
use crate::error::{Error, Result};
use crate::metrics::{l2_speed_error, takeover_cdf, TakeoverStats};
use crate::platoon::{run, AvController, AvObservation, ViolationKind};
use crate::rng::{derive_seed, streams, RngStream};

pub const CURVE_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub hyper: SacHyper,
    pub seed: u64,
    /// Write a checkpoint every this many episodes (0: only the final one).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub ret: f64,
    pub moving_average: f64,
    pub steps: usize,
    pub takeover: bool,
    pub collision: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyFunction<f32>,
    pub curve: Vec<CurvePoint>,
    pub checkpoints: Vec<PathBuf>,
}

/// Trailing mean over up to `w` values.
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= w {
            sum -= xs[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["episode", "return", "moving_average"]).map_err(|e| Error::csv(path, e))?;
    for p in curve {
        w.write_record([p.episode.to_string(), p.ret.to_string(), p.moving_average.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn checkpoint_path(dir: &Path, episode: usize) -> PathBuf {
    dir.join(format!("policy_ep{episode:06}.bin"))
}

/// Run `cfg.episodes` episodes of SAC on `env_cfg`. Single-threaded and
/// fully determined by `cfg.seed`.
pub fn train(env_cfg: EnvConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let hyper = cfg.hyper.clone();
    hyper.validate()?;
    let env_cfg = EnvConfig {
        reward_scale: hyper.reward_scale,
        discount: hyper.discount,
        ..env_cfg
    };
    let mut env = ControlUnitEnv::new(env_cfg)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut init = RngStream::new(cfg.seed, streams::INIT);
    let mut sac: Sac<f32> = Sac::new(hyper.clone(), &mut init)?;
    let mut act_rng = RngStream::new(cfg.seed, streams::POLICY);
    let mut replay_rng = RngStream::new(cfg.seed, streams::REPLAY);
    let mut replay = ReplayBuffer::new(hyper.replay_capacity);
    let mut curve: Vec<CurvePoint> = Vec::with_capacity(cfg.episodes);
    let mut returns = Vec::with_capacity(cfg.episodes);
    let mut checkpoints = Vec::new();
    let mut total = 0usize;

    for ep in 0..cfg.episodes {
        let mut s = env.reset(derive_seed(cfg.seed, ep as u64))?;
        let (mut ret, mut steps) = (0.0, 0);
        let (takeover, collision) = loop {
            let sq = if total < hyper.random_steps {
                act_rng.random_range(-1.0..=1.0)
            } else {
                sac.actor.act_squashed(&s, Some(&mut act_rng))
            };
            let res = env.step(sac.actor.to_accel(sq))?;
            replay.push(Transition {
                s,
                a: sq,
                r: res.reward,
                s2: res.state,
                done: res.done,
            });
            ret += res.reward;
            steps += 1;
            total += 1;
            s = res.state;
            if !res.state.is_finite() {
                return Err(divergence(ep, "non-finite state".into(), &checkpoints));
            }
            if total % hyper.update_interval == 0 && replay.len() >= hyper.batch_size {
                for _ in 0..hyper.updated_cycles {
                    let batch = replay.sample(hyper.batch_size, &mut replay_rng);
                    sac.update(&batch, &mut replay_rng)
                        .map_err(|e| divergence(ep, e.to_string(), &checkpoints))?;
                }
            }
            if res.finished {
                break (res.takeover, res.collision);
            }
        };
        if !ret.is_finite() {
            return Err(divergence(ep, format!("episode return {ret}"), &checkpoints));
        }
        returns.push(ret);
        let ma = moving_average(&returns, CURVE_WINDOW);
        curve.push(CurvePoint {
            episode: ep,
            ret,
            moving_average: ma[ep],
            steps,
            takeover,
            collision,
        });
        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0 {
                let path = checkpoint_path(dir, ep + 1);
                sac.actor.save(&path)?;
                checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        let path = dir.join("policy.bin");
        sac.actor.save(&path)?;
        checkpoints.push(path);
    }
    Ok(TrainOutcome {
        policy: sac.actor,
        curve,
        checkpoints,
    })
}

fn divergence(episode: usize, detail: String, checkpoints: &[PathBuf]) -> Error {
    Error::Divergence {
        episode,
        detail,
        checkpoint: checkpoints.last().cloned(),
    }
}

/// A frozen policy driving the AV with its squashed mean.
#[derive(Debug, Clone)]
pub struct PolicyController {
    policy: Arc<PolicyFunction<f32>>,
}

impl PolicyController {
    pub fn new(policy: Arc<PolicyFunction<f32>>) -> Self {
        Self { policy }
    }
}

impl AvController for PolicyController {
    fn command(&mut self, obs: &AvObservation) -> Result<f64> {
        let s = RlState::from_observation(obs);
        Ok(self.policy.to_accel(self.policy.act_squashed::<RngStream>(&s, None)))
    }

    fn name(&self) -> String {
        "learned-policy".into()
    }
}

/// What drives the AV in an evaluation.
#[derive(Debug, Clone)]
pub enum ControllerChoice {
    Policy(Arc<PolicyFunction<f32>>),
    Spec(CfSpec),
    /// One HL gain set drawn per seed.
    Hl(Arc<AvPosterior>),
}

impl ControllerChoice {
    pub fn label(&self) -> String {
        match self {
            Self::Policy(_) => "policy".into(),
            Self::Spec(s) => s.kind().to_string(),
            Self::Hl(_) => "HL".into(),
        }
    }

    pub fn build(&self, seed: u64) -> Box<dyn AvController> {
        match self {
            Self::Policy(p) => Box::new(PolicyController::new(p.clone())),
            Self::Spec(s) => Box::new(CfController::new(s.clone())),
            Self::Hl(post) => {
                let mut rng = RngStream::new(seed, streams::AV_SPECS);
                Box::new(CfController::new(post.sample(&mut rng)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub seed: u64,
    pub takeover: Option<f64>,
    /// Full-horizon squared L2 speed error per vehicle, leader first.
    pub l2: Vec<f64>,
    pub collisions: usize,
    pub speeding: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub controller: String,
    pub runs: Vec<EvalRun>,
    pub takeover: TakeoverStats,
    pub mean_l2: Vec<f64>,
    /// Mean evidence per tick across runs.
    pub expected_evidence: Vec<f64>,
    pub collisions: usize,
    pub speeding: usize,
}

impl EvalReport {
    /// 1 where the run ended in a takeover, else 0.
    pub fn takeover_indicators(&self) -> Vec<f64> {
        self.runs.iter().map(|r| if r.takeover.is_some() { 1.0 } else { 0.0 }).collect()
    }
}

/// Run every seed once with `choice` in the AV slot. Seeds define the
/// scenario, so reports for different controllers on the same seeds are
/// paired. Runs execute in parallel; results are in seed order.
pub fn evaluate(choice: &ControllerChoice, env: &EnvConfig, seeds: &[u64], horizon_s: Option<f64>) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::Empty("evaluation seed list"));
    }
    let v_e = env.platoon.v_e;
    let results: Vec<(EvalRun, Vec<f64>, f64)> = seeds
        .par_iter()
        .map(|&seed| {
            let (platoon, scenario) = env.episode(seed)?;
            let horizon = horizon_s.unwrap_or(platoon.leader.duration());
            let rollout = run(&platoon, scenario, choice.build(seed), horizon)?;
            let l2 = rollout.vehicles.iter().map(|t| l2_speed_error(t, v_e).full).collect();
            let count = |k: ViolationKind| rollout.violations.iter().filter(|v| v.kind == k).count();
            let evidence = rollout.ea_trace.iter().map(|e| e.e).collect();
            Ok((
                EvalRun {
                    seed,
                    takeover: rollout.takeover.map(|t| t.time),
                    l2,
                    collisions: count(ViolationKind::Collision),
                    speeding: count(ViolationKind::Speeding),
                },
                evidence,
                horizon,
            ))
        })
        .collect::<Result<_>>()?;
    let horizon = results[0].2;
    let n = results.len() as f64;
    let width = results.iter().map(|r| r.0.l2.len()).max().unwrap_or(0);
    let mut mean_l2 = vec![0.0; width];
    let ticks = results.iter().map(|r| r.1.len()).max().unwrap_or(0);
    let mut expected_evidence = vec![0.0; ticks];
    for (run, ev, _) in &results {
        for (m, x) in mean_l2.iter_mut().zip(&run.l2) {
            *m += x / n;
        }
        for (m, x) in expected_evidence.iter_mut().zip(ev) {
            *m += x / n;
        }
    }
    let runs: Vec<EvalRun> = results.into_iter().map(|r| r.0).collect();
    let times: Vec<Option<f64>> = runs.iter().map(|r| r.takeover).collect();
    Ok(EvalReport {
        controller: choice.label(),
        takeover: takeover_cdf(&times, horizon),
        mean_l2,
        expected_evidence,
        collisions: runs.iter().map(|r| r.collisions).sum(),
        speeding: runs.iter().map(|r| r.speeding).sum(),
        runs,
    })
}

/// `n` evaluation seeds derived from `base`.
pub fn eval_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(base, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::IdmPidParams;

    #[test]
    fn moving_average_window() {
        let ma = moving_average(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(ma, vec![1.0, 1.5, 2.5, 3.5]);
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            episodes: 3,
            hyper: SacHyper {
                hidden: 8,
                batch_size: 16,
                random_steps: 50,
                ..SacHyper::desk()
            },
            seed: 5,
            checkpoint_every: 2,
            checkpoint_dir: None,
        }
    }

    #[test]
    fn curve_has_one_point_per_episode_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.checkpoint_dir = Some(dir.path().to_path_buf());
        let a = train(EnvConfig::smoke().unwrap(), &cfg).unwrap();
        assert_eq!(a.curve.len(), 3);
        assert_eq!(a.checkpoints.len(), 2);
        let b = train(EnvConfig::smoke().unwrap(), &cfg).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.curve, b.curve);

        let loaded = PolicyFunction::load(a.checkpoints.last().unwrap()).unwrap();
        let s = RlState([30.0, 30.0, -1.0, 0.0, 0.1, 0.0, 0.0]);
        let mut rng = RngStream::new(0, 0);
        assert_eq!(loaded.act(&s, &mut rng, true), a.policy.act(&s, &mut rng, true));
    }

    #[test]
    fn evaluation_is_seed_deterministic_and_paired() {
        let env = EnvConfig::packaged();
        let seeds = eval_seeds(9, 6);
        let pid = ControllerChoice::Spec(CfSpec::IdmPid(IdmPidParams::conservative()));
        let a = evaluate(&pid, &env, &seeds, Some(30.0)).unwrap();
        let b = evaluate(&pid, &env, &seeds, Some(30.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 6);
        assert_eq!(a.mean_l2.len(), 3);
        assert_eq!(a.expected_evidence.len(), 300);
    }

    #[test]
    fn infinite_threshold_means_no_takeovers() {
        let mut env = EnvConfig::packaged();
        let particles: Vec<_> = env
            .platoon
            .ea_posterior
            .particles()
            .iter()
            .map(|p| {
                let mut p = p.clone();
                p.theta.e_t = f64::INFINITY;
                p
            })
            .collect();
        env.platoon.ea_posterior = Arc::new(crate::calibration::Posterior::new(particles, 0, f64::INFINITY).unwrap());
        let seeds = eval_seeds(1, 8);
        let mut rng = RngStream::new(0, 0);
        let policy = Arc::new(PolicyFunction::new(&[8], (-20.0, 2.5), &mut rng));
        for choice in [
            ControllerChoice::Spec(CfSpec::IdmPid(IdmPidParams::conservative())),
            ControllerChoice::Hl(Arc::new(AvPosterior::packaged())),
            ControllerChoice::Policy(policy),
        ] {
            let r = evaluate(&choice, &env, &seeds, Some(40.0)).unwrap();
            assert!(r.takeover.times.is_empty(), "{}", r.controller);
            assert_eq!(r.takeover.rate, 0.0);
        }
    }
}
