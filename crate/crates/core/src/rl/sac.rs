//! Soft actor-critic: twin critics with target copies, reparameterized actor
//! and a learned temperature.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::env::N_STATE;
use super::nn::{cast, Adam, Grads, Mlp, Scalar, ScalarAdam};
use super::policy::{ActorSample, PolicyFunction};
use super::replay::Batch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacHyper {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub temperature_lr: f64,
    pub discount: f64,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub reward_scale: f64,
    pub updated_cycles: usize,
    pub update_interval: usize,
    pub batch_size: usize,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub replay_capacity: usize,
    pub tau: f64,
    pub entropy_target: f64,
    pub init_temperature: f64,
    /// Uniform-random actions for this many initial environment steps.
    pub random_steps: usize,
}

impl Default for SacHyper {
    fn default() -> Self {
        Self {
            actor_lr: 1e-5,
            critic_lr: 1e-5,
            temperature_lr: 3e-4,
            discount: 0.9,
            hidden: 256,
            hidden_layers: 2,
            reward_scale: 0.75,
            updated_cycles: 25,
            update_interval: 10,
            batch_size: 8196,
            log_std_min: -20.0,
            log_std_max: 2.5,
            replay_capacity: 1_000_000,
            tau: 5e-3,
            entropy_target: -1.0,
            init_temperature: 1.0,
            random_steps: 0,
        }
    }
}

impl SacHyper {
    /// Small networks and batches for runs that finish in minutes.
    pub fn desk() -> Self {
        Self {
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            temperature_lr: 1e-3,
            hidden: 64,
            updated_cycles: 2,
            update_interval: 10,
            batch_size: 128,
            replay_capacity: 200_000,
            tau: 1e-2,
            init_temperature: 0.1,
            random_steps: 2_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(0.0..=1.0).contains(&self.discount) {
            return bad(format!("discount must lie in [0, 1], got {}", self.discount));
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad(format!("log-std bounds out of order: [{}, {}]", self.log_std_min, self.log_std_max));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("temperature_lr", self.temperature_lr),
            ("reward_scale", self.reward_scale),
            ("init_temperature", self.init_temperature),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [
            ("hidden", self.hidden),
            ("hidden_layers", self.hidden_layers),
            ("update_interval", self.update_interval),
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        Ok(())
    }

    fn hidden_sizes(&self) -> Vec<usize> {
        vec![self.hidden; self.hidden_layers]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub critic: [f64; 2],
    pub actor: f64,
    pub temperature: f64,
    /// Batch estimate of the policy entropy.
    pub entropy: f64,
}

fn with_action<F: Scalar>(s: ArrayView2<F>, a: &Array1<f64>) -> Array2<F> {
    let col = a.mapv(cast::<F>).insert_axis(Axis(1));
    concatenate(Axis(1), &[s, col.view()]).expect("matching rows")
}

fn to_f64<F: Scalar>(x: &Array2<F>) -> Array1<f64> {
    x.column(0).mapv(|v| v.to_f64().unwrap_or(f64::NAN))
}

/// `½·mean((Q(s, a) - y)²)`.
pub fn critic_loss<F: Scalar>(q: &Mlp<F>, sa: ArrayView2<F>, y: &Array1<f64>) -> f64 {
    let pred = to_f64(&q.predict(sa));
    0.5 * (&pred - y).mapv(|d| d * d).mean().unwrap_or(0.0)
}

/// `mean(υ·log π(ã|s) - min_j Q_j(s, ã))` at fixed noise `xi`.
pub fn actor_objective<F: Scalar>(
    actor: &PolicyFunction<F>,
    critics: &[Mlp<F>; 2],
    s: ArrayView2<F>,
    xi: &Array1<f64>,
    temperature: f64,
) -> f64 {
    let sample = actor.sample_with(s, xi.clone());
    let sa = with_action(s, &sample.squashed);
    let q1 = to_f64(&critics[0].predict(sa.view()));
    let q2 = to_f64(&critics[1].predict(sa.view()));
    let n = xi.len() as f64;
    (0..xi.len())
        .map(|i| temperature * sample.log_prob[i] - q1[i].min(q2[i]))
        .sum::<f64>()
        / n
}

/// Analytic gradient of [`actor_objective`] with respect to the actor
/// parameters, along with the sample it was taken at.
pub fn actor_gradient<F: Scalar>(
    actor: &PolicyFunction<F>,
    critics: &[Mlp<F>; 2],
    s: ArrayView2<F>,
    xi: &Array1<f64>,
    temperature: f64,
) -> (Grads<F>, ActorSample<F>, f64) {
    let sample = actor.sample_with(s, xi.clone());
    let n = xi.len();
    let sa = with_action(s, &sample.squashed);
    let (o1, c1) = critics[0].forward(sa.view());
    let (o2, c2) = critics[1].forward(sa.view());
    let (q1, q2) = (to_f64(&o1), to_f64(&o2));
    let first: Vec<bool> = (0..n).map(|i| q1[i] <= q2[i]).collect();
    let mask = |pick_first: bool| {
        Array2::from_shape_fn((n, 1), |(i, _)| if first[i] == pick_first { F::one() } else { F::zero() })
    };
    let (_, dx1) = critics[0].backward(&c1, mask(true));
    let (_, dx2) = critics[1].backward(&c2, mask(false));
    let nf = n as f64;
    let mut objective = 0.0;
    let mut g_out = Array2::<F>::zeros((n, 2));
    for i in 0..n {
        let a = sample.squashed[i];
        let qmin = if first[i] { q1[i] } else { q2[i] };
        objective += temperature * sample.log_prob[i] - qmin;
        let dq = (dx1[[i, N_STATE]] + dx2[[i, N_STATE]]).to_f64().unwrap_or(f64::NAN);
        let d_u = (2.0 * temperature * a - dq * (1.0 - a * a)) / nf;
        g_out[[i, 0]] = cast(d_u);
        if !sample.clamped[i] {
            let sigma = sample.log_std[i].exp();
            g_out[[i, 1]] = cast(-temperature / nf + d_u * sigma * sample.xi[i]);
        }
    }
    let (grads, _) = actor.net.backward(&sample.cache, g_out);
    (grads, sample, objective / nf)
}

pub struct Sac<F: Scalar> {
    pub actor: PolicyFunction<F>,
    pub critics: [Mlp<F>; 2],
    pub targets: [Mlp<F>; 2],
    pub log_temperature: f64,
    pub hyper: SacHyper,
    opt_actor: Adam<F>,
    opt_critics: [Adam<F>; 2],
    opt_temperature: ScalarAdam,
}

impl<F: Scalar> Sac<F> {
    pub fn new<R: RngCore + ?Sized>(hyper: SacHyper, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let hidden = hyper.hidden_sizes();
        let actor = PolicyFunction::new(&hidden, (hyper.log_std_min, hyper.log_std_max), rng);
        let mut sizes = vec![N_STATE + 1];
        sizes.extend_from_slice(&hidden);
        sizes.push(1);
        let critics = [Mlp::new(&sizes, 1.0, rng), Mlp::new(&sizes, 1.0, rng)];
        Ok(Self {
            opt_actor: Adam::new(&actor.net, hyper.actor_lr),
            opt_critics: [Adam::new(&critics[0], hyper.critic_lr), Adam::new(&critics[1], hyper.critic_lr)],
            opt_temperature: ScalarAdam::new(hyper.temperature_lr),
            targets: critics.clone(),
            log_temperature: hyper.init_temperature.ln(),
            actor,
            critics,
            hyper,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    /// Entropy-regularized one-step targets from the target critics.
    pub fn targets_for<R: RngCore + ?Sized>(&self, batch: &Batch<F>, rng: &mut R) -> Array1<f64> {
        let next = self.actor.sample(batch.s2.view(), rng);
        let sa2 = with_action(batch.s2.view(), &next.squashed);
        let t1 = to_f64(&self.targets[0].predict(sa2.view()));
        let t2 = to_f64(&self.targets[1].predict(sa2.view()));
        let alpha = self.temperature();
        let zeta = self.hyper.discount;
        Array1::from_shape_fn(batch.len(), |i| {
            let soft = t1[i].min(t2[i]) - alpha * next.log_prob[i];
            batch.r[i] + zeta * (1.0 - batch.done[i]) * soft
        })
    }

    /// One gradient step on both critics, the actor and the temperature,
    /// then Polyak-average the targets.
    pub fn update<R: RngCore + ?Sized>(&mut self, batch: &Batch<F>, rng: &mut R) -> Result<LossReport> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Empty("replay batch"));
        }
        let y = self.targets_for(batch, rng);
        let mut critic = [0.0; 2];
        for j in 0..2 {
            let (out, cache) = self.critics[j].forward(batch.sa.view());
            let diff = &to_f64(&out) - &y;
            critic[j] = 0.5 * diff.mapv(|d| d * d).mean().unwrap_or(0.0);
            let g_out = diff.mapv(|d| cast::<F>(d / n as f64)).insert_axis(Axis(1));
            let (grads, _) = self.critics[j].backward(&cache, g_out);
            if !critic[j].is_finite() || !grads.is_finite() {
                return Err(diverged(&format!("critic {} loss {}", j + 1, critic[j]), batch));
            }
            self.opt_critics[j].step(&mut self.critics[j], &grads);
        }

        let xi: Array1<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let alpha = self.temperature();
        let (grads, sample, actor) = actor_gradient(&self.actor, &self.critics, batch.s.view(), &xi, alpha);
        if !actor.is_finite() || !grads.is_finite() {
            return Err(diverged(&format!("actor loss {actor}"), batch));
        }
        self.opt_actor.step(&mut self.actor.net, &grads);

        let mean_logp = sample.log_prob.mean().unwrap_or(0.0);
        let g_temp = -(mean_logp + self.hyper.entropy_target);
        self.opt_temperature.step(&mut self.log_temperature, g_temp);

        let tau = cast(self.hyper.tau);
        for j in 0..2 {
            self.targets[j].soft_update(&self.critics[j], tau);
        }
        Ok(LossReport {
            critic,
            actor,
            temperature: self.temperature(),
            entropy: -mean_logp,
        })
    }
}

fn diverged<F: Scalar>(what: &str, batch: &Batch<F>) -> Error {
    let stats = |x: &Array1<f64>| {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!("mean {:.4e} min {:.4e} max {:.4e}", x.mean().unwrap_or(f64::NAN), lo, hi)
    };
    let s: Array1<f64> = batch.s.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    Error::NonFinite(format!(
        "SAC update: {what}; batch of {}: reward [{}], action [{}], state [{}], done fraction {:.3}",
        batch.len(),
        stats(&batch.r),
        stats(&batch.a),
        stats(&s),
        batch.done.mean().unwrap_or(f64::NAN)
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::env::RlState;
    use crate::rl::replay::Transition;
    use crate::rng::RngStream;

    fn toy() -> (PolicyFunction<f64>, [Mlp<f64>; 2], Array2<f64>, Array1<f64>) {
        let mut rng = RngStream::new(11, 0);
        let mut actor: PolicyFunction<f64> = PolicyFunction::new(&[4], (-20.0, 2.5), &mut rng);
        // Larger output weights than the default init so every term matters.
        let last = actor.net.layers.len() - 1;
        actor.net.layers[last].w.mapv_inplace(|w| w * 50.0);
        let critics = [Mlp::new(&[N_STATE + 1, 4, 1], 1.0, &mut rng), Mlp::new(&[N_STATE + 1, 4, 1], 1.0, &mut rng)];
        let s = Array2::from_shape_fn((6, N_STATE), |(i, k)| ((i * 7 + k) as f64 * 0.37).sin());
        let xi = Array1::from_shape_fn(6, |i| (i as f64 * 1.3).cos());
        (actor, critics, s, xi)
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let (actor, critics, s, xi) = toy();
        let alpha = 0.3;
        let (grads, _, obj) = actor_gradient(&actor, &critics, s.view(), &xi, alpha);
        assert!((obj - actor_objective(&actor, &critics, s.view(), &xi, alpha)).abs() < 1e-12);
        let g = grads.flat();
        let p0 = actor.net.flat();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..p0.len() {
            let mut a = actor.clone();
            let mut p = p0.clone();
            p[k] += h;
            a.net.set_flat(&p);
            let fp = actor_objective(&a, &critics, s.view(), &xi, alpha);
            p[k] -= 2.0 * h;
            a.net.set_flat(&p);
            let fm = actor_objective(&a, &critics, s.view(), &xi, alpha);
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn critic_loss_vanishes_at_fixed_point() {
        let (_, critics, s, _) = toy();
        let a = Array1::from_shape_fn(s.nrows(), |i| (i as f64 * 0.2) - 0.5);
        let sa = with_action(s.view(), &a);
        let y = to_f64(&critics[0].predict(sa.view()));
        assert_eq!(critic_loss(&critics[0], sa.view(), &y), 0.0);
    }

    fn batch() -> Batch<f64> {
        let items: Vec<Transition> = (0..32)
            .map(|i| {
                let x = i as f64 * 0.1;
                Transition {
                    s: RlState([30.0 + x, 28.0, x.sin(), 0.0, 0.1, 0.0, 0.0]),
                    a: (x * 0.3).sin(),
                    r: -1.0 - x,
                    s2: RlState([30.5 + x, 28.0, x.cos(), 0.0, 0.1, 0.0, 0.0]),
                    done: i % 7 == 0,
                }
            })
            .collect();
        Batch::from_transitions(&items)
    }

    fn small_hyper() -> SacHyper {
        SacHyper {
            hidden: 8,
            batch_size: 32,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            temperature_lr: 1e-2,
            ..SacHyper::default()
        }
    }

    #[test]
    fn temperature_falls_when_entropy_exceeds_target() {
        let mut rng = RngStream::new(1, 0);
        let mut sac: Sac<f64> = Sac::new(small_hyper(), &mut rng).unwrap();
        // Wide initial policy: entropy well above -1.
        let before = sac.log_temperature;
        let report = sac.update(&batch(), &mut rng).unwrap();
        assert!(report.entropy > sac.hyper.entropy_target);
        assert!(sac.log_temperature < before);

        let mut sac: Sac<f64> = Sac::new(
            SacHyper {
                entropy_target: 5.0,
                ..small_hyper()
            },
            &mut rng,
        )
        .unwrap();
        let before = sac.log_temperature;
        sac.update(&batch(), &mut rng).unwrap();
        assert!(sac.log_temperature > before);
    }

    #[test]
    fn targets_use_the_smaller_critic() {
        let mut rng = RngStream::new(1, 0);
        let mut sac: Sac<f64> = Sac::new(small_hyper(), &mut rng).unwrap();
        let b = batch();
        // Shift the second target critic up; the min must ignore it.
        let last = sac.targets[1].layers.len() - 1;
        let base = sac.targets_for(&b, &mut RngStream::new(3, 0));
        sac.targets[1].layers[last].b[0] += 100.0;
        let y1 = sac.targets_for(&b, &mut RngStream::new(3, 0));
        for i in 0..b.len() {
            assert!(y1[i] >= base[i] - 1e-12);
        }
        sac.targets[1].layers[last].b[0] -= 200.0;
        let y2 = sac.targets_for(&b, &mut RngStream::new(3, 0));
        for i in 0..b.len() {
            assert!(y2[i] <= base[i] + 1e-12);
            if b.done[i] == 1.0 {
                assert_eq!(y2[i], b.r[i]);
            }
        }
    }

    #[test]
    fn non_finite_batch_reports_diagnostics() {
        let mut rng = RngStream::new(1, 0);
        let mut sac: Sac<f64> = Sac::new(small_hyper(), &mut rng).unwrap();
        let mut b = batch();
        b.r[3] = f64::NAN;
        match sac.update(&b, &mut rng) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("reward"), "{msg}"),
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }
}
