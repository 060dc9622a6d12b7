use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use takeover_lab::calibration::{
    abc_asmc, load_bundle, posterior_summary, save_bundle, synthetic_instances, synthetic_scenarios,
    write_generation_log, AbcConfig, Posterior,
};
use takeover_lab::cf::{AvPosterior, CfSpec, HdvPosterior, IdmPidParams};
use takeover_lab::intervention::{EaConfig, EaTheta};
use takeover_lab::metrics::{
    aggregate_expectation, paired_bootstrap, takeover_cdf, write_jsonl, DisturbanceProfile, TakeoverStats,
};
use takeover_lab::platoon::{default_leader_profile, load_leader_profile, run, PlatoonConfig, Scenario, TakeoverMode};
use takeover_lab::rl::{self, ControllerChoice, EnvConfig, PolicyFunction, RewardParams, SacHyper, TrainConfig};
use takeover_lab::rng::{derive_seed, streams, RngStream};

use crate::settings::Settings;
use crate::{CalibrateArgs, CliError, EvaluateArgs, ReportArgs, SimulateArgs, SynthArgs, TrainArgs};

type Res<T = ()> = Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

fn seed(s: &Settings) -> Res<u64> {
    if !s.has("seed") {
        return Err(CliError::input("a seed is required (--seed or `seed` in the config)"));
    }
    s.u64("seed")
}

fn prepare_out(dir: &Path) -> Res {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Res {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_manifest(dir: &Path, workflow: &str, s: &Settings, seed: u64, artifacts: &[String]) -> Res {
    let m = json!({
        "workflow": workflow,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": s.snapshot(&["threads"]),
        "artifacts": artifacts,
    });
    let text = serde_json::to_string_pretty(&m).expect("json") + "\n";
    write_text(&dir.join("manifest.json"), &text)
}

fn ea_config(s: &Settings) -> Res<EaConfig> {
    let cfg = EaConfig {
        sigma: s.f64("ea.sigma")?,
        alpha: s.f64("ea.alpha")?,
        d_total: s.f64("ea.d_total")?,
        ttt_a: s.f64("ea.ttt_a")?,
        ..EaConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn shares(s: &Settings) -> Res<[f64; 4]> {
    let v = s.f64_list("hdv.shares")?;
    v.try_into()
        .map_err(|v: Vec<f64>| CliError::input(format!("`hdv.shares`: expected 4 values, got {}", v.len())))
}

fn leader(s: &Settings) -> Res<Arc<takeover_lab::kinematics::Trajectory>> {
    Ok(Arc::new(match s.path("paths.leader")? {
        Some(p) => load_leader_profile(&p)?,
        None => default_leader_profile(),
    }))
}

fn takeover_mode(s: &Settings) -> Res<TakeoverMode> {
    match s.str("platoon.takeover")?.as_str() {
        "model" => Ok(TakeoverMode::Model),
        "suppressed" => Ok(TakeoverMode::Suppressed),
        "forced" => Ok(TakeoverMode::ForcedAt(s.f64("platoon.forced_time")?)),
        other => Err(CliError::input(format!(
            "`platoon.takeover`: expected model, suppressed or forced, got `{other}`"
        ))),
    }
}

fn platoon(s: &Settings, followers: usize) -> Res<PlatoonConfig> {
    let hdv = match s.path("paths.hdv_posterior")? {
        Some(p) => HdvPosterior::load(&p, shares(s)?)?,
        None => HdvPosterior::packaged().with_shares(shares(s)?)?,
    };
    let ea_post = match s.path("paths.ea_posterior")? {
        Some(p) => Posterior::load(&p)?,
        None => Posterior::packaged(),
    };
    let cfg = PlatoonConfig {
        leader: leader(s)?,
        v_e: s.f64("platoon.v_e")?,
        n_followers: followers,
        hdv_posterior: Arc::new(hdv),
        ea_posterior: Arc::new(ea_post),
        ea_config: ea_config(s)?,
        takeover: takeover_mode(s)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn hl_posterior(s: &Settings) -> Res<Arc<AvPosterior>> {
    Ok(Arc::new(match s.path("paths.hl_posterior")? {
        Some(p) => AvPosterior::load(&p)?,
        None => AvPosterior::packaged(),
    }))
}

fn controller(s: &Settings, name: &str) -> Res<ControllerChoice> {
    Ok(match name {
        "idm-pid" => ControllerChoice::Spec(CfSpec::IdmPid(IdmPidParams::conservative())),
        "idm-pid-aggressive" => ControllerChoice::Spec(CfSpec::IdmPid(IdmPidParams::aggressive())),
        "hl" => ControllerChoice::Hl(hl_posterior(s)?),
        "policy" => {
            let path = s
                .path("paths.policy")?
                .ok_or_else(|| CliError::input("controller `policy` needs a checkpoint (--policy or paths.policy)"))?;
            ControllerChoice::Policy(Arc::new(PolicyFunction::load(&path)?))
        }
        other => {
            return Err(CliError::input(format!(
                "unknown controller `{other}` (expected policy, idm-pid, idm-pid-aggressive or hl)"
            )))
        }
    })
}

/// One rollout's summary line, shared by simulate and evaluate outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunRecord {
    controller: String,
    run: usize,
    seed: u64,
    takeover: Option<f64>,
    /// Full-horizon squared L2 speed error per vehicle, leader first.
    l2: Vec<f64>,
    collisions: usize,
    speeding: usize,
}

fn write_cdf(path: &Path, stats: &TakeoverStats) -> Res {
    let mut out = String::from("t,cdf\n");
    for (t, f) in stats.steps() {
        let _ = writeln!(out, "{t},{f}");
    }
    write_text(path, &out)
}

pub fn simulate(mut s: Settings, a: SimulateArgs) -> Res {
    s.flag("simulate.runs", a.runs);
    s.flag("platoon.followers", a.followers);
    s.flag("platoon.horizon", a.horizon);
    s.flag("paths.leader", a.leader);
    s.flag("platoon.controller", a.controller);
    s.flag("platoon.takeover", a.takeover);
    s.flag("platoon.forced_time", a.forced_time);
    s.flag("paths.policy", a.policy);
    if a.no_rollouts {
        s.flag("simulate.write_rollouts", Some(false));
    }
    let seed = seed(&s)?;
    let runs = s.usize("simulate.runs")?;
    if runs == 0 {
        return Err(CliError::input("`simulate.runs` must be >= 1"));
    }
    let horizon = s.f64("platoon.horizon")?;
    let cfg = platoon(&s, s.usize("platoon.followers")?)?;
    let name = s.str("platoon.controller")?;
    let choice = controller(&s, &name)?;
    let write_rollouts = s.bool("simulate.write_rollouts")?;
    prepare_out(&a.out)?;
    let rollout_dir = a.out.join("rollouts");
    if write_rollouts {
        prepare_out(&rollout_dir)?;
    }
    let seeds = rl::eval_seeds(seed, runs);
    let results: Vec<(RunRecord, DisturbanceProfile)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &sd)| -> Res<_> {
            let scenario = Scenario::sample(&cfg, sd)?;
            let rollout = run(&cfg, scenario, choice.build(sd), horizon)?;
            if write_rollouts {
                rollout.save_csv(&rollout_dir.join(format!("run_{i:05}.csv")))?;
            }
            let profile = DisturbanceProfile::of(&rollout, cfg.v_e);
            let count = |k| rollout.violations.iter().filter(|v| v.kind == k).count();
            let rec = RunRecord {
                controller: name.clone(),
                run: i,
                seed: sd,
                takeover: rollout.takeover.map(|t| t.time),
                l2: profile.norms.clone(),
                collisions: count(takeover_lab::platoon::ViolationKind::Collision),
                speeding: count(takeover_lab::platoon::ViolationKind::Speeding),
            };
            Ok((rec, profile))
        })
        .collect::<Res<_>>()?;
    let (records, profiles): (Vec<RunRecord>, Vec<DisturbanceProfile>) = results.into_iter().unzip();
    write_jsonl(&a.out.join("metrics.jsonl"), &records)?;
    let times: Vec<Option<f64>> = records.iter().map(|r| r.takeover).collect();
    let stats = takeover_cdf(&times, horizon);
    write_cdf(&a.out.join("takeover_cdf.csv"), &stats)?;
    let mut artifacts = vec!["metrics.jsonl".to_string(), "takeover_cdf.csv".into()];
    if profiles.len() >= 2 {
        let agg = aggregate_expectation(&profiles)?;
        let mut out = String::from("position,n,mean,sd,ci_low,ci_high\n");
        for i in 0..agg.mean.len() {
            let _ = writeln!(out, "{i},{},{},{},{},{}", agg.n, agg.mean[i], agg.sd[i], agg.ci_low[i], agg.ci_high[i]);
        }
        write_text(&a.out.join("aggregate.csv"), &out)?;
        let mut run_csv = String::from("t");
        for i in 0..agg.mean.len() {
            let _ = write!(run_csv, ",pos{i}");
        }
        run_csv.push('\n');
        let dt = cfg.leader.dt;
        for k in 0..agg.mean_running[0].len() {
            let _ = write!(run_csv, "{}", k as f64 * dt);
            for r in &agg.mean_running {
                let _ = write!(run_csv, ",{}", r[k]);
            }
            run_csv.push('\n');
        }
        write_text(&a.out.join("running_l2.csv"), &run_csv)?;
        artifacts.extend(["aggregate.csv".to_string(), "running_l2.csv".into()]);
    }
    if write_rollouts {
        artifacts.push("rollouts/".into());
    }
    write_manifest(&a.out, "simulate", &s, seed, &artifacts)?;
    println!(
        "simulate: {runs} runs, takeover rate {:.4}, outputs in {}",
        stats.rate,
        a.out.display()
    );
    Ok(())
}

pub fn calibrate(mut s: Settings, a: CalibrateArgs) -> Res {
    s.flag("paths.bundle", a.bundle);
    s.flag("calibrate.particles", a.particles);
    s.flag("calibrate.generations", a.generations);
    s.flag("calibrate.replicates", a.replicates);
    let seed = seed(&s)?;
    let bundle = s
        .path("paths.bundle")?
        .ok_or_else(|| CliError::input("calibrate needs an observed bundle (--bundle or paths.bundle)"))?;
    let observed = load_bundle(&bundle)?;
    let cfg = AbcConfig {
        n_particles: s.usize("calibrate.particles")?,
        generations: s.usize("calibrate.generations")?,
        replicates: s.usize("calibrate.replicates")?,
        quantile: s.f64("calibrate.quantile")?,
        min_acceptance: s.f64("calibrate.min_acceptance")?,
        ea: ea_config(&s)?,
    };
    prepare_out(&a.out)?;
    let mut rng = RngStream::new(seed, streams::CALIBRATION);
    let result = match abc_asmc(&observed, &cfg, &mut rng) {
        Ok(r) => r,
        Err(e) => {
            let code = CliError::from(e);
            return Err(if code.code == 2 { code } else { CliError { code: 3, ..code } });
        }
    };
    result.posterior.save(&a.out.join("posterior.csv"))?;
    write_generation_log(&a.out.join("generations.csv"), &result.log)?;
    let summary = posterior_summary(&result.posterior);
    write_text(
        &a.out.join("summary.json"),
        &(serde_json::to_string_pretty(&summary).expect("json") + "\n"),
    )?;
    write_manifest(&a.out, "calibrate", &s, seed, &["posterior.csv".into(), "generations.csv".into(), "summary.json".into()])?;
    println!(
        "calibrate: {} particles after {} generations, outputs in {}",
        result.posterior.len(),
        result.log.len(),
        a.out.display()
    );
    Ok(())
}

fn reward_params(s: &Settings, v_e: f64) -> Res<RewardParams> {
    let rp = RewardParams {
        w_r1: s.f64("reward.w_r1")?,
        w_r2: s.f64("reward.w_r2")?,
        w_r3: s.f64("reward.w_r3")?,
        rho: [
            s.f64("reward.rho1")?,
            s.f64("reward.rho2")?,
            s.f64("reward.rho3")?,
            s.f64("reward.rho4")?,
        ],
        v_e,
        window: s.usize("reward.window")?,
        eps_n: s.f64("reward.eps_n")?,
        ratio_cap: s.f64("reward.ratio_cap")?,
        ..RewardParams::default()
    };
    rp.validate()?;
    Ok(rp)
}

fn sac_hyper(s: &Settings) -> Res<SacHyper> {
    let mut h = match s.str("sac.preset")?.as_str() {
        "desk" => SacHyper::desk(),
        "paper" => SacHyper::default(),
        other => return Err(CliError::input(format!("`sac.preset`: expected desk or paper, got `{other}`"))),
    };
    macro_rules! over {
        ($($field:ident: $get:ident),* $(,)?) => {
            $(if let Some(v) = s.$get(concat!("sac.", stringify!($field)))? { h.$field = v; })*
        };
    }
    over!(
        actor_lr: opt_f64,
        critic_lr: opt_f64,
        temperature_lr: opt_f64,
        discount: opt_f64,
        hidden: opt_usize,
        hidden_layers: opt_usize,
        reward_scale: opt_f64,
        updated_cycles: opt_usize,
        update_interval: opt_usize,
        batch_size: opt_usize,
        log_std_min: opt_f64,
        log_std_max: opt_f64,
        replay_capacity: opt_usize,
        tau: opt_f64,
        entropy_target: opt_f64,
        init_temperature: opt_f64,
        random_steps: opt_usize,
    );
    h.validate()?;
    Ok(h)
}

/// Full environment before the train/test split.
fn env_config(s: &Settings, followers: usize) -> Res<EnvConfig> {
    let mut platoon = platoon(s, followers)?;
    platoon.takeover = TakeoverMode::Model;
    Ok(EnvConfig {
        reward: reward_params(s, platoon.v_e)?,
        platoon,
        absorbing_terminal: s.bool("train.absorbing_terminal")?,
        ..EnvConfig::packaged()
    })
}

fn split_env(s: &Settings, env: &EnvConfig) -> Res<(EnvConfig, EnvConfig)> {
    Ok(env.split(s.f64("train.train_frac")?, s.u64("train.split_seed")?)?)
}

pub fn train(mut s: Settings, a: TrainArgs) -> Res {
    s.flag("train.episodes", a.episodes);
    s.flag("train.checkpoint_every", a.checkpoint_every);
    s.flag("paths.leader", a.leader);
    if a.smoke {
        s.flag("train.smoke", Some(true));
    }
    let seed = seed(&s)?;
    let hyper = sac_hyper(&s)?;
    let env = if s.bool("train.smoke")? {
        EnvConfig::smoke()?
    } else {
        split_env(&s, &env_config(&s, s.usize("train.followers")?)?)?.0
    };
    prepare_out(&a.out)?;
    let cfg = TrainConfig {
        episodes: s.usize("train.episodes")?,
        hyper,
        seed,
        checkpoint_every: s.usize("train.checkpoint_every")?,
        checkpoint_dir: Some(a.out.join("checkpoints")),
    };
    let outcome = rl::train(env, &cfg)?;
    rl::write_curve(&a.out.join("curve.csv"), &outcome.curve)?;
    outcome.policy.save(&a.out.join("policy.bin"))?;
    write_manifest(&a.out, "train", &s, seed, &["curve.csv".into(), "policy.bin".into(), "checkpoints/".into()])?;
    let last = outcome.curve.last().map_or(f64::NAN, |p| p.moving_average);
    println!(
        "train: {} episodes, final moving-average return {last:.3}, policy in {}",
        outcome.curve.len(),
        a.out.join("policy.bin").display()
    );
    Ok(())
}

pub fn evaluate(mut s: Settings, a: EvaluateArgs) -> Res {
    s.flag("evaluate.runs", a.runs);
    s.flag("paths.policy", a.policy);
    s.flag("evaluate.followers", a.followers.map(|v| v as i64));
    s.flag("evaluate.horizon", a.horizon);
    if let Some(c) = a.controllers {
        s.flag("evaluate.controllers", Some(toml::Value::Array(c.into_iter().map(toml::Value::String).collect())));
    }
    let seed = seed(&s)?;
    let names = s.str_list("evaluate.controllers")?;
    if names.is_empty() {
        return Err(CliError::input("`evaluate.controllers` must name at least one controller"));
    }
    let choices: Vec<ControllerChoice> = names.iter().map(|n| controller(&s, n)).collect::<Res<_>>()?;
    let runs = s.usize("evaluate.runs")?;
    if runs == 0 {
        return Err(CliError::input("`evaluate.runs` must be >= 1"));
    }
    let test_env = split_env(&s, &env_config(&s, s.usize("evaluate.followers")?)?)?.1;
    let horizon = s.opt_f64("evaluate.horizon")?;
    let seeds = rl::eval_seeds(seed, runs);
    prepare_out(&a.out)?;
    let reports: Vec<rl::EvalReport> = choices
        .iter()
        .map(|c| rl::evaluate(c, &test_env, &seeds, horizon))
        .collect::<Result<_, _>>()?;

    let mut records = Vec::new();
    let mut artifacts = vec!["metrics.jsonl".to_string(), "rates.csv".into(), "l2.csv".into(), "evidence.csv".into()];
    for (name, r) in names.iter().zip(&reports) {
        for (i, run) in r.runs.iter().enumerate() {
            records.push(RunRecord {
                controller: name.clone(),
                run: i,
                seed: run.seed,
                takeover: run.takeover,
                l2: run.l2.clone(),
                collisions: run.collisions,
                speeding: run.speeding,
            });
        }
        let file = format!("cdf_{name}.csv");
        write_cdf(&a.out.join(&file), &r.takeover)?;
        artifacts.push(file);
    }
    write_jsonl(&a.out.join("metrics.jsonl"), &records)?;

    let base = &reports[0];
    let mut boot_rng = RngStream::new(seed, streams::SPLIT ^ 0xB007);
    let resamples = s.usize("evaluate.bootstrap")?;
    let mut rates = format!("controller,runs,takeovers,rate,delta_vs_{},delta_ci_low,delta_ci_high,collisions,speeding\n", names[0]);
    for (name, r) in names.iter().zip(&reports) {
        let (x, y) = (r.takeover_indicators(), base.takeover_indicators());
        let ci = paired_bootstrap(&x, &y, |x, y| mean(x) - mean(y), resamples, &mut boot_rng)?;
        let _ = writeln!(
            rates,
            "{name},{},{},{},{},{},{},{},{}",
            r.runs.len(),
            r.takeover.times.len(),
            r.takeover.rate,
            ci.estimate,
            ci.low,
            ci.high,
            r.collisions,
            r.speeding
        );
    }
    write_text(&a.out.join("rates.csv"), &rates)?;
    let mut l2 = String::from("controller,position,mean_l2\n");
    for (name, r) in names.iter().zip(&reports) {
        for (i, m) in r.mean_l2.iter().enumerate() {
            let _ = writeln!(l2, "{name},{i},{m}");
        }
    }
    write_text(&a.out.join("l2.csv"), &l2)?;
    let mut ev = String::from("t");
    for n in &names {
        let _ = write!(ev, ",{n}");
    }
    ev.push('\n');
    let ticks = reports.iter().map(|r| r.expected_evidence.len()).max().unwrap_or(0);
    let dt = test_env.platoon.leader.dt;
    for k in 0..ticks {
        let _ = write!(ev, "{}", (k + 1) as f64 * dt);
        for r in &reports {
            let _ = write!(ev, ",{}", r.expected_evidence.get(k).copied().unwrap_or(f64::NAN));
        }
        ev.push('\n');
    }
    write_text(&a.out.join("evidence.csv"), &ev)?;
    write_manifest(&a.out, "evaluate", &s, seed, &artifacts)?;
    print!("{rates}");
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn report(_s: Settings, a: ReportArgs) -> Res {
    let path = a.input.join("metrics.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut groups: BTreeMap<String, Vec<RunRecord>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord =
            serde_json::from_str(line).map_err(|e| CliError::input(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        groups.entry(rec.controller.clone()).or_default().push(rec);
    }
    if groups.is_empty() {
        return Err(CliError::input(format!("{}: no records", path.display())));
    }
    let mut out = String::from("controller  runs  takeovers  rate     mean_t    collisions  speeding  mean_l2_by_position\n");
    for (name, recs) in &groups {
        let times: Vec<f64> = recs.iter().filter_map(|r| r.takeover).collect();
        let mean_t = if times.is_empty() { f64::NAN } else { mean(&times) };
        let width = recs.iter().map(|r| r.l2.len()).max().unwrap_or(0);
        let l2: Vec<String> = (0..width)
            .map(|i| {
                let xs: Vec<f64> = recs.iter().filter_map(|r| r.l2.get(i).copied()).collect();
                format!("{:.3}", mean(&xs))
            })
            .collect();
        let _ = writeln!(
            out,
            "{name:<11} {:>5} {:>10}  {:<8.4} {:<9.2} {:>10} {:>9}  {}",
            recs.len(),
            times.len(),
            times.len() as f64 / recs.len() as f64,
            mean_t,
            recs.iter().map(|r| r.collisions).sum::<usize>(),
            recs.iter().map(|r| r.speeding).sum::<usize>(),
            l2.join(" ")
        );
    }
    write_text(&a.input.join("report.txt"), &out)?;
    print!("{out}");
    Ok(())
}

pub fn synth_bundle(mut s: Settings, a: SynthArgs) -> Res {
    s.flag("synth.instances", a.instances);
    let seed = seed(&s)?;
    let w = s.f64_list("synth.weights")?;
    if w.len() != 3 {
        return Err(CliError::input(format!("`synth.weights`: expected 3 values, got {}", w.len())));
    }
    let theta = EaTheta {
        e0: s.f64("synth.e0")?,
        d: s.f64("synth.d")?,
        e_t: s.f64("synth.e_t")?,
        w1: w[0],
        w2: w[1],
        w3: w[2],
    };
    theta.validate()?;
    let ea = ea_config(&s)?;
    let hdv = HdvPosterior::packaged().with_shares(shares(&s)?)?;
    let mut rng = RngStream::new(seed, streams::SCENARIO);
    let scenarios = synthetic_scenarios(s.usize("synth.instances")?, 60.0, &hdv, &*hl_posterior(&s)?, &mut rng)?;
    let mut noise = RngStream::new(derive_seed(seed, 1), streams::EA_NOISE);
    let instances = synthetic_instances(&theta, &scenarios, &ea, &mut noise)?;
    prepare_out(&a.out)?;
    save_bundle(&a.out, &instances)?;
    let censored = instances.iter().filter(|i| i.takeover.is_none()).count();
    println!(
        "synth-bundle: {} instances ({censored} censored) in {}",
        instances.len(),
        a.out.display()
    );
    Ok(())
}
