//! Likelihood-free calibration of the evidence model with ABC and an
//! adaptive sequential Monte Carlo sampler.
//!
//! Observed takeover times are compared with times simulated from candidate
//! parameters. The shadow driver and the three dissimilarity channels of an
//! instance do not depend on the parameters, so they are computed once per
//! instance and every particle only replays the evidence recursion.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cf::{CfController, CfSpec};
use crate::error::{Error, Result};
use crate::intervention::{channels, EaConfig, EaState, EaTheta};
use crate::kinematics::{euler_step, Role, Trajectory, VehicleState, DT};
use crate::rng::{derive_seed, gaussian_draw, streams, RngStream};

const DEFAULT_EA_CSV: &str = include_str!("../data/ea_posterior.csv");

/// Prior support: `E0 ~ U(0,10)`, `d ~ U(0,2)`, `E_T ~ U(10,100)`, weights
/// uniform on the simplex.
pub const PRIOR_E0: (f64, f64) = (0.0, 10.0);
pub const PRIOR_D: (f64, f64) = (0.0, 2.0);
pub const PRIOR_ET: (f64, f64) = (10.0, 100.0);

pub const PARAM_NAMES: [&str; 6] = ["E0", "d", "E_T", "w1", "w2", "w3"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub theta: EaTheta,
    pub weight: f64,
    pub distance: f64,
}

fn theta_values(t: &EaTheta) -> [f64; 6] {
    [t.e0, t.d, t.e_t, t.w1, t.w2, t.w3]
}

/// Weighted particle set; weights are normalized on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    particles: Vec<Particle>,
    generation: usize,
    tolerance: f64,
}

impl Posterior {
    pub fn new(mut particles: Vec<Particle>, generation: usize, tolerance: f64) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Empty("posterior"));
        }
        if particles.iter().any(|p| !(p.weight >= 0.0) || !p.weight.is_finite()) {
            return Err(Error::InvalidInput("particle weights must be finite and >= 0".into()));
        }
        let total: f64 = particles.iter().map(|p| p.weight).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("particle weights sum to zero".into()));
        }
        for p in &mut particles {
            p.weight /= total;
        }
        Ok(Self {
            particles,
            generation,
            tolerance,
        })
    }

    /// The shipped default cloud.
    pub fn packaged() -> Self {
        read_posterior(DEFAULT_EA_CSV.as_bytes(), Path::new("<packaged ea_posterior.csv>"))
            .expect("packaged EA posterior is valid")
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// `1 / Σ w²`.
    pub fn ess(&self) -> f64 {
        ess(self.particles.iter().map(|p| p.weight))
    }

    /// Weighted quantile of any scalar function of the parameters.
    pub fn quantile(&self, q: f64, f: impl Fn(&EaTheta) -> f64) -> f64 {
        let mut pairs: Vec<(f64, f64)> = self.particles.iter().map(|p| (f(&p.theta), p.weight)).collect();
        weighted_quantile(&mut pairs, q)
    }

    pub fn median(&self, f: impl Fn(&EaTheta) -> f64) -> f64 {
        self.quantile(0.5, f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        read_posterior(file, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        wtr.write_record(PARAM_NAMES.iter().chain(["weight"].iter()))
            .map_err(|e| Error::csv(path, e))?;
        for p in &self.particles {
            let row: Vec<String> = theta_values(&p.theta)
                .iter()
                .chain([p.weight].iter())
                .map(|v| v.to_string())
                .collect();
            wtr.write_record(&row).map_err(|e| Error::csv(path, e))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }

    /// Shuffled train/test partition of the particles (each side renormalized).
    pub fn split<R: RngCore + ?Sized>(&self, train_frac: f64, rng: &mut R) -> Result<(Self, Self)> {
        let (a, b) = crate::rng::train_test_split(&self.particles, train_frac, rng);
        Ok((Self::new(a, self.generation, self.tolerance)?, Self::new(b, self.generation, self.tolerance)?))
    }
}

fn read_posterior<R: std::io::Read>(reader: R, path: &Path) -> Result<Posterior> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let mut cols = [0usize; 7];
    for (slot, name) in cols.iter_mut().zip(PARAM_NAMES.iter().chain(["weight"].iter())) {
        *slot = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::parse(path, 0, format!("missing `{name}` column")))?;
    }
    let mut particles = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::csv(path, e))?;
        let mut v = [0.0; 7];
        for (k, &c) in cols.iter().enumerate() {
            let cell = record.get(c).unwrap_or("");
            v[k] = cell.parse().map_err(|_| {
                Error::parse(path, row, format!("column `{}`: `{cell}` is not a number", headers.get(c).unwrap_or("?")))
            })?;
        }
        let theta = EaTheta {
            e0: v[0],
            d: v[1],
            e_t: v[2],
            w1: v[3],
            w2: v[4],
            w3: v[5],
        };
        theta.validate().map_err(|e| Error::parse(path, row, e.to_string()))?;
        particles.push(Particle {
            theta,
            weight: v[6],
            distance: 0.0,
        });
    }
    Posterior::new(particles, 0, 0.0).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub(crate) fn ess(weights: impl Iterator<Item = f64> + Clone) -> f64 {
    let s: f64 = weights.clone().sum();
    let s2: f64 = weights.map(|w| (w / s).powi(2)).sum();
    1.0 / s2
}

fn weighted_quantile(pairs: &mut [(f64, f64)], q: f64) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let target = q.clamp(0.0, 1.0) * total;
    let mut acc = 0.0;
    for &(x, w) in pairs.iter() {
        acc += w;
        if acc >= target {
            return x;
        }
    }
    pairs.last().map(|p| p.0).unwrap_or(f64::NAN)
}

/// Draw from the prior. Ties `E0 >= E_T` (only possible at 10) are redrawn.
pub fn sample_prior<R: RngCore + ?Sized>(rng: &mut R) -> EaTheta {
    let d = rng.random_range(PRIOR_D.0..PRIOR_D.1);
    let e_t = rng.random_range(PRIOR_ET.0..PRIOR_ET.1);
    let mut e0 = rng.random_range(PRIOR_E0.0..PRIOR_E0.1);
    while e0 >= e_t {
        e0 = rng.random_range(PRIOR_E0.0..PRIOR_E0.1);
    }
    let (w1, w2) = loop {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        if a + b <= 1.0 {
            break (a, b);
        }
    };
    EaTheta {
        e0,
        d,
        e_t,
        w1,
        w2,
        w3: 1.0 - w1 - w2,
    }
}

fn in_prior(t: &EaTheta) -> bool {
    let inside = |x: f64, (lo, hi): (f64, f64)| x >= lo && x <= hi;
    inside(t.e0, PRIOR_E0)
        && inside(t.d, PRIOR_D)
        && inside(t.e_t, PRIOR_ET)
        && t.w1 >= 0.0
        && t.w2 >= 0.0
        && t.w1 + t.w2 <= 1.0 + 1e-12
        && t.e_t > t.e0
}

/// One recorded drive: leader and AV kinematics at the model step, the
/// takeover time if the driver intervened, and the driver's own law.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedInstance {
    pub id: String,
    pub leader: Trajectory,
    pub av: Trajectory,
    pub takeover: Option<f64>,
    pub d_total: f64,
    pub ttt_a: f64,
    /// Manual-drive car-following fit used for the shadow vehicle.
    pub shadow_spec: CfSpec,
}

impl ObservedInstance {
    pub fn new(
        id: impl Into<String>,
        leader: Trajectory,
        av: Trajectory,
        takeover: Option<f64>,
        d_total: f64,
        ttt_a: f64,
        shadow_spec: CfSpec,
    ) -> Result<Self> {
        let id = id.into();
        if leader.len() != av.len() || (leader.dt - av.dt).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("instance {id}: leader and AV trajectories are not aligned")));
        }
        if let Some(t) = takeover {
            if !(t >= 0.0 && t <= av.duration() + 1e-9) {
                return Err(Error::InvalidInput(format!(
                    "instance {id}: takeover at {t} s lies outside the {} s trajectory",
                    av.duration()
                )));
            }
        }
        shadow_spec.validate()?;
        Ok(Self {
            id,
            leader,
            av,
            takeover,
            d_total,
            ttt_a,
            shadow_spec,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.av.duration()
    }

    /// Per-tick `(Φx, Φv, Φ_TTA)` against a shadow integrated behind the
    /// recorded leader.
    pub fn channel_series(&self, cfg: &EaConfig) -> Result<ChannelSeries> {
        let cfg = EaConfig {
            d_total: self.d_total,
            ttt_a: self.ttt_a,
            ..*cfg
        };
        let n = self.av.len();
        let mut state = EaState::new(0.0, &self.av.samples[0], self.shadow_spec.clone());
        let mut phis = Vec::with_capacity(n.saturating_sub(1));
        for k in 0..n.saturating_sub(1) {
            let (av, leader) = (&self.av.samples[k], &self.leader.samples[k]);
            phis.push(channels(av, &state.shadow, leader, k as f64 * self.av.dt, &cfg));
            state.step_shadow(leader, self.av.dt)?;
        }
        Ok(ChannelSeries {
            phis,
            dt: self.av.dt,
            horizon: self.horizon(),
        })
    }
}

/// Precomputed dissimilarity channels of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSeries {
    pub phis: Vec<[f64; 3]>,
    pub dt: f64,
    pub horizon: f64,
}

impl ChannelSeries {
    /// A series with the same channel values at every tick.
    pub fn constant(phi: [f64; 3], ticks: usize, dt: f64) -> Self {
        Self {
            phis: vec![phi; ticks],
            dt,
            horizon: ticks as f64 * dt,
        }
    }

    /// First passage of the evidence recursion, `None` if censored.
    pub fn first_passage<R: RngCore + ?Sized>(
        &self,
        theta: &EaTheta,
        sigma: f64,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        let w = theta.weights();
        let mut e = theta.e0;
        for (k, phi) in self.phis.iter().enumerate() {
            let u = (w[0] * phi[0] + w[1] * phi[1] + w[2] * phi[2]).clamp(0.0, 1.0);
            let eps = gaussian_draw(rng, 0.0, sigma)?;
            e = (e + theta.d * u + alpha * eps).max(0.0);
            if e > theta.e_t {
                return Ok(Some((k + 1) as f64 * self.dt));
            }
        }
        Ok(None)
    }
}

/// `k` replicate takeover times of `theta` on one instance.
pub fn simulate_takeover<R: RngCore + ?Sized>(
    theta: &EaTheta,
    series: &ChannelSeries,
    cfg: &EaConfig,
    rng: &mut R,
    k: usize,
) -> Result<Vec<Option<f64>>> {
    if k == 0 {
        return Err(Error::InvalidInput("replicate count must be >= 1".into()));
    }
    (0..k)
        .map(|_| series.first_passage(theta, cfg.sigma, cfg.alpha, rng))
        .collect()
}

/// `|t_sim - t_obs|`; a censored/observed mismatch scores the horizon.
pub fn distance(simulated: Option<f64>, observed: Option<f64>, horizon: f64) -> f64 {
    match (simulated, observed) {
        (None, None) => 0.0,
        (Some(a), Some(b)) => (a - b).abs(),
        _ => horizon,
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbcConfig {
    pub n_particles: usize,
    pub generations: usize,
    /// Replicate simulations per particle and instance.
    pub replicates: usize,
    /// Quantile of accepted distances that sets the next tolerance.
    pub quantile: f64,
    /// Stop once a generation's acceptance rate drops below this.
    pub min_acceptance: f64,
    pub ea: EaConfig,
}

impl Default for AbcConfig {
    fn default() -> Self {
        Self {
            n_particles: 1000,
            generations: 8,
            replicates: 5,
            quantile: 0.5,
            min_acceptance: 0.01,
            ea: EaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub tolerance: f64,
    pub proposals: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub ess: f64,
    pub resampled: bool,
}

#[derive(Debug, Clone)]
pub struct AbcResult {
    pub posterior: Posterior,
    pub log: Vec<GenerationLog>,
}

/// Mean over instances of the median replicate distance.
fn particle_distance(
    theta: &EaTheta,
    data: &[(ChannelSeries, Option<f64>)],
    cfg: &AbcConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    let mut total = 0.0;
    let mut reps = vec![0.0; cfg.replicates];
    for (series, observed) in data {
        for r in reps.iter_mut() {
            let t = series.first_passage(theta, cfg.ea.sigma, cfg.ea.alpha, rng)?;
            *r = distance(t, *observed, series.horizon);
        }
        total += median(&mut reps);
    }
    Ok(total / data.len() as f64)
}

/// Reflect `x` into `[lo, hi]`.
fn reflect(mut x: f64, lo: f64, hi: f64) -> f64 {
    let w = hi - lo;
    for _ in 0..64 {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            return x;
        }
    }
    lo + (x - lo).rem_euclid(w)
}

fn normal_pdf(x: f64, sd: f64) -> f64 {
    (-0.5 * (x / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Density of a Gaussian centred at `mu` folded into `[lo, hi]` (images
/// across both walls).
fn reflected_pdf(x: f64, mu: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if sd == 0.0 {
        return if x == mu { 1.0 } else { 0.0 };
    }
    let w = hi - lo;
    let mut p = 0.0;
    for k in -2i32..=2 {
        let shift = 2.0 * k as f64 * w;
        p += normal_pdf(x - (mu + shift), sd);
        p += normal_pdf(x - (2.0 * lo - mu + shift), sd);
    }
    p
}

/// Diagonal Gaussian kernel over `(E0, d, E_T, w1, w2)`, reflected at the
/// prior support. The weight triangle is folded across `w1 + w2 = 1`.
#[derive(Debug, Clone, Copy)]
struct Kernel {
    sd: [f64; 5],
}

impl Kernel {
    const BOUNDS: [(f64, f64); 5] = [PRIOR_E0, PRIOR_D, PRIOR_ET, (0.0, 1.0), (0.0, 1.0)];

    fn from_population(pop: &[Particle]) -> Self {
        let mut sd = [0.0; 5];
        for (j, s) in sd.iter_mut().enumerate() {
            let (mut m, mut m2) = (0.0, 0.0);
            for p in pop {
                let x = theta_values(&p.theta)[j];
                m += p.weight * x;
                m2 += p.weight * x * x;
            }
            *s = 2.0 * (m2 - m * m).max(0.0).sqrt();
        }
        Self { sd }
    }

    fn perturb<R: RngCore + ?Sized>(&self, t: &EaTheta, rng: &mut R) -> Result<EaTheta> {
        let src = theta_values(t);
        let mut x = [0.0; 5];
        for j in 0..5 {
            let (lo, hi) = Self::BOUNDS[j];
            x[j] = reflect(gaussian_draw(rng, src[j], self.sd[j])?, lo, hi);
        }
        let (mut w1, mut w2) = (x[3], x[4]);
        if w1 + w2 > 1.0 {
            (w1, w2) = (1.0 - w2, 1.0 - w1);
        }
        Ok(EaTheta {
            e0: x[0],
            d: x[1],
            e_t: x[2],
            w1,
            w2,
            w3: (1.0 - w1 - w2).max(0.0),
        })
    }

    fn density(&self, x: &EaTheta, mu: &EaTheta) -> f64 {
        let (xv, mv) = (theta_values(x), theta_values(mu));
        let mut p = 1.0;
        for j in 0..3 {
            let (lo, hi) = Self::BOUNDS[j];
            p *= reflected_pdf(xv[j], mv[j], self.sd[j], lo, hi);
        }
        let k1 = |v: f64| reflected_pdf(v, mv[3], self.sd[3], 0.0, 1.0);
        let k2 = |v: f64| reflected_pdf(v, mv[4], self.sd[4], 0.0, 1.0);
        p * (k1(xv[3]) * k2(xv[4]) + k1(1.0 - xv[4]) * k2(1.0 - xv[3]))
    }
}

fn pick<R: RngCore + ?Sized>(pop: &[Particle], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in pop.iter().enumerate() {
        acc += p.weight;
        if u < acc {
            return i;
        }
    }
    pop.len() - 1
}

/// ABC with an adaptive SMC sampler.
///
/// Generation 0 draws `n` prior particles with infinite tolerance. Each
/// later generation uses the `quantile` of the previous generation's
/// distances as its tolerance and proposes perturbed particles in batches
/// of `n` until `n` are accepted. It stops at the generation budget or
/// when the acceptance rate falls below `min_acceptance`; in that case the
/// last complete generation is returned.
pub fn abc_asmc(observed: &[ObservedInstance], cfg: &AbcConfig, rng: &mut RngStream) -> Result<AbcResult> {
    if observed.is_empty() {
        return Err(Error::Empty("observed instances"));
    }
    if cfg.n_particles < 2 || cfg.replicates == 0 || cfg.generations == 0 {
        return Err(Error::InvalidInput(
            "calibration needs n_particles >= 2, replicates >= 1 and generations >= 1".into(),
        ));
    }
    cfg.ea.validate()?;
    let data: Vec<(ChannelSeries, Option<f64>)> = observed
        .iter()
        .map(|inst| Ok((inst.channel_series(&cfg.ea)?, inst.takeover)))
        .collect::<Result<_>>()?;
    abc_asmc_on(&data, cfg, rng)
}

/// [`abc_asmc`] on precomputed channel series paired with observed times.
pub fn abc_asmc_on(
    data: &[(ChannelSeries, Option<f64>)],
    cfg: &AbcConfig,
    rng: &mut RngStream,
) -> Result<AbcResult> {
    if data.is_empty() {
        return Err(Error::Empty("observed instances"));
    }
    let n = cfg.n_particles;
    let base = rng.next_u64();
    let stream_for = |generation: usize, index: usize| {
        RngStream::new(
            derive_seed(base, ((generation as u64) << 40) | index as u64),
            streams::CALIBRATION,
        )
    };

    let gen0: Vec<Particle> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = stream_for(0, i);
            let theta = sample_prior(&mut r);
            let distance = particle_distance(&theta, data, cfg, &mut r)?;
            Ok(Particle {
                theta,
                weight: 1.0 / n as f64,
                distance,
            })
        })
        .collect::<Result<_>>()?;
    let mut log = vec![GenerationLog {
        generation: 0,
        tolerance: f64::INFINITY,
        proposals: n,
        accepted: n,
        acceptance_rate: 1.0,
        ess: ess(gen0.iter().map(|p| p.weight)),
        resampled: false,
    }];
    let mut pop = Posterior::new(gen0, 0, f64::INFINITY)?;

    let max_batches = (1.0 / cfg.min_acceptance).ceil().max(1.0) as usize;
    for generation in 1..cfg.generations {
        let mut dists: Vec<f64> = pop.particles.iter().map(|p| p.distance).collect();
        let tolerance = quantile_unweighted(&mut dists, cfg.quantile).min(pop.tolerance);
        let kernel = Kernel::from_population(&pop.particles);
        let parents = &pop.particles;

        let (mut accepted, proposals) =
            propose(parents, &kernel, tolerance, data, cfg, max_batches, |i| stream_for(generation, i))
                .map_err(|e| match e {
                    Error::ZeroAcceptance { tolerance, .. } => Error::ZeroAcceptance { generation, tolerance },
                    e => e,
                })?;
        let rate = accepted.len() as f64 / proposals as f64;
        if accepted.len() < n {
            log.push(GenerationLog {
                generation,
                tolerance,
                proposals,
                accepted: accepted.len(),
                acceptance_rate: rate,
                ess: f64::NAN,
                resampled: false,
            });
            break;
        }

        // Importance weights: uniform prior over the mixture proposal.
        let weights: Vec<f64> = accepted
            .par_iter()
            .map(|p| {
                let mix: f64 = parents.iter().map(|q| q.weight * kernel.density(&p.theta, &q.theta)).sum();
                if mix > 0.0 {
                    1.0 / mix
                } else {
                    0.0
                }
            })
            .collect();
        for (p, w) in accepted.iter_mut().zip(&weights) {
            p.weight = *w;
        }
        let mut next = Posterior::new(accepted, generation, tolerance)?;
        let gen_ess = next.ess();
        let resampled = gen_ess < n as f64 / 2.0;
        if resampled {
            next = resample(&next, rng)?;
        }
        log.push(GenerationLog {
            generation,
            tolerance,
            proposals,
            accepted: n,
            acceptance_rate: rate,
            ess: gen_ess,
            resampled,
        });
        pop = next;
        if rate < cfg.min_acceptance {
            break;
        }
    }
    Ok(AbcResult { posterior: pop, log })
}

/// Perturbed proposals in batches of `n` until `n` are within `tolerance`
/// or the batch budget runs out. Returns the accepted particles (in proposal
/// order) and the number of proposals consumed.
fn propose(
    parents: &[Particle],
    kernel: &Kernel,
    tolerance: f64,
    data: &[(ChannelSeries, Option<f64>)],
    cfg: &AbcConfig,
    max_batches: usize,
    stream_for: impl Fn(usize) -> RngStream + Sync,
) -> Result<(Vec<Particle>, usize)> {
    let n = cfg.n_particles;
    let mut accepted: Vec<Particle> = Vec::with_capacity(n);
    let mut proposals = 0usize;
    for batch in 0..max_batches {
        let start = batch * n;
        let found: Vec<Option<Particle>> = (start..start + n)
            .into_par_iter()
            .map(|i| {
                let mut r = stream_for(i);
                let parent = &parents[pick(parents, &mut r)];
                let theta = kernel.perturb(&parent.theta, &mut r)?;
                if !in_prior(&theta) {
                    return Ok(None);
                }
                let distance = particle_distance(&theta, data, cfg, &mut r)?;
                Ok((distance <= tolerance).then_some(Particle {
                    theta,
                    weight: 0.0,
                    distance,
                }))
            })
            .collect::<Result<_>>()?;
        for (offset, f) in found.into_iter().enumerate() {
            if accepted.len() < n {
                if let Some(p) = f {
                    accepted.push(p);
                }
                proposals = start + offset + 1;
            }
        }
        if accepted.len() >= n {
            break;
        }
    }
    if accepted.is_empty() {
        return Err(Error::ZeroAcceptance { generation: 0, tolerance });
    }
    Ok((accepted, proposals))
}

fn quantile_unweighted(xs: &mut [f64], q: f64) -> f64 {
    let mut pairs: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 1.0)).collect();
    weighted_quantile(&mut pairs, q)
}

/// Systematic resampling to equal weights.
fn resample(post: &Posterior, rng: &mut RngStream) -> Result<Posterior> {
    let n = post.len();
    let u0: f64 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    let mut i = 0;
    for k in 0..n {
        let target = u0 + k as f64 / n as f64;
        while i + 1 < n && acc + post.particles[i].weight < target {
            acc += post.particles[i].weight;
            i += 1;
        }
        out.push(Particle {
            weight: 1.0,
            ..post.particles[i]
        });
    }
    Posterior::new(out, post.generation, post.tolerance)
}

pub fn write_generation_log(path: &Path, log: &[GenerationLog]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for g in log {
        wtr.serialize(g).map_err(|e| Error::csv(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub name: String,
    pub edges: Vec<f64>,
    /// Histogram density; integrates to 1 over `edges`.
    pub density: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub marginals: Vec<Marginal>,
    /// Weighted Pearson correlations in [`PARAM_NAMES`] order.
    pub correlation: Vec<Vec<f64>>,
    /// Set when some parameter has zero variance; its correlations read 0.
    pub degenerate: bool,
}

const SUMMARY_BINS: usize = 20;

pub fn posterior_summary(post: &Posterior) -> PosteriorSummary {
    let ps = post.particles();
    let values: Vec<[f64; 6]> = ps.iter().map(|p| theta_values(&p.theta)).collect();
    let w: Vec<f64> = ps.iter().map(|p| p.weight).collect();
    let bounds = [PRIOR_E0, PRIOR_D, PRIOR_ET, (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)];
    let mut means = [0.0; 6];
    let mut sds = [0.0; 6];
    let mut marginals = Vec::with_capacity(6);
    for j in 0..6 {
        let m: f64 = values.iter().zip(&w).map(|(v, w)| w * v[j]).sum();
        let var: f64 = values.iter().zip(&w).map(|(v, w)| w * (v[j] - m).powi(2)).sum();
        means[j] = m;
        sds[j] = var.max(0.0).sqrt();
        let (lo, hi) = bounds[j];
        let width = (hi - lo) / SUMMARY_BINS as f64;
        let edges: Vec<f64> = (0..=SUMMARY_BINS).map(|b| lo + b as f64 * width).collect();
        let mut density = vec![0.0; SUMMARY_BINS];
        for (v, wi) in values.iter().zip(&w) {
            let b = (((v[j] - lo) / width).floor() as isize).clamp(0, SUMMARY_BINS as isize - 1) as usize;
            density[b] += wi / width;
        }
        marginals.push(Marginal {
            name: PARAM_NAMES[j].to_string(),
            edges,
            density,
            mean: m,
            sd: sds[j],
            median: post.median(|t| theta_values(t)[j]),
        });
    }
    let mut degenerate = false;
    let mut correlation = vec![vec![0.0; 6]; 6];
    for a in 0..6 {
        for b in 0..6 {
            if sds[a] <= 1e-12 || sds[b] <= 1e-12 {
                degenerate = true;
                continue;
            }
            let cov: f64 = values
                .iter()
                .zip(&w)
                .map(|(v, wi)| wi * (v[a] - means[a]) * (v[b] - means[b]))
                .sum();
            correlation[a][b] = (cov / (sds[a] * sds[b])).clamp(-1.0, 1.0);
        }
    }
    PosteriorSummary {
        marginals,
        correlation,
        degenerate,
    }
}

/// Manifest row of an observed-instance bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    takeover: String,
    d_t: f64,
    ttt_a: f64,
    file: String,
    shadow: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct InstanceRow {
    t: f64,
    leader_x: f64,
    leader_v: f64,
    leader_a: f64,
    av_x: f64,
    av_v: f64,
    av_a: f64,
}

pub const BUNDLE_MANIFEST: &str = "manifest.csv";

/// Read a bundle directory: `manifest.csv` plus one trajectory file per
/// instance.
pub fn load_bundle(dir: &Path) -> Result<Vec<ObservedInstance>> {
    let manifest = dir.join(BUNDLE_MANIFEST);
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&manifest)
        .map_err(|e| Error::csv(&manifest, e))?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::parse(&manifest, row_no, e.to_string()))?;
        let takeover = match row.takeover.as_str() {
            "censored" | "" => None,
            s => Some(s.parse::<f64>().map_err(|_| {
                Error::parse(&manifest, row_no, format!("takeover `{s}` is neither a number nor `censored`"))
            })?),
        };
        let shadow: CfSpec = row
            .shadow
            .parse()
            .map_err(|e: Error| Error::parse(&manifest, row_no, e.to_string()))?;
        let path = dir.join(&row.file);
        let (leader, av) = load_instance_trajectories(&path)?;
        let inst = ObservedInstance::new(row.id, leader, av, takeover, row.d_t, row.ttt_a, shadow)
            .map_err(|e| Error::parse(&manifest, row_no, e.to_string()))?;
        out.push(inst);
    }
    if out.is_empty() {
        return Err(Error::parse(&manifest, 0, "bundle lists no instances"));
    }
    Ok(out)
}

fn load_instance_trajectories(path: &Path) -> Result<(Trajectory, Trajectory)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut leader = Vec::new();
    let mut av = Vec::new();
    let mut times = Vec::new();
    for (i, row) in rdr.deserialize::<InstanceRow>().enumerate() {
        let r = row.map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if r.leader_v < 0.0 || r.av_v < 0.0 {
            return Err(Error::parse(path, i + 1, "negative speed"));
        }
        if times.last().is_some_and(|&t: &f64| r.t <= t) {
            return Err(Error::parse(path, i + 1, "time is not strictly increasing"));
        }
        times.push(r.t);
        leader.push(VehicleState {
            a: r.leader_a,
            ..VehicleState::new(0, Role::Leader, r.leader_x, r.leader_v)
        });
        av.push(VehicleState {
            a: r.av_a,
            ..VehicleState::new(1, Role::Av, r.av_x, r.av_v)
        });
    }
    if times.len() < 2 {
        return Err(Error::parse(path, 0, "need at least two samples"));
    }
    let dt = times[1] - times[0];
    for (k, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 {
            return Err(Error::parse(path, k + 2, "samples are not uniformly spaced"));
        }
    }
    if (dt - DT).abs() > 1e-9 {
        return Err(Error::parse(path, 0, format!("instance step {dt} s differs from the model step {DT} s")));
    }
    Ok((Trajectory::new(dt, leader)?, Trajectory::new(dt, av)?))
}

/// Write a bundle in the layout read by [`load_bundle`].
pub fn save_bundle(dir: &Path, instances: &[ObservedInstance]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join(BUNDLE_MANIFEST);
    let mut m = csv::Writer::from_path(&manifest).map_err(|e| Error::csv(&manifest, e))?;
    for inst in instances {
        let file = format!("{}.csv", inst.id);
        let path: PathBuf = dir.join(&file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        for (k, (l, a)) in inst.leader.samples.iter().zip(&inst.av.samples).enumerate() {
            w.serialize(InstanceRow {
                t: inst.av.time(k),
                leader_x: l.y,
                leader_v: l.v,
                leader_a: l.a,
                av_x: a.y,
                av_v: a.v,
                av_a: a.a,
            })
            .map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        m.serialize(ManifestRow {
            id: inst.id.clone(),
            takeover: inst.takeover.map(|t| format!("{t:.1}")).unwrap_or_else(|| "censored".into()),
            d_t: inst.d_total,
            ttt_a: inst.ttt_a,
            file,
            shadow: inst.shadow_spec.to_string(),
        })
        .map_err(|e| Error::csv(&manifest, e))?;
    }
    m.flush().map_err(|e| Error::io(&manifest, e))
}

/// Drive `av_spec` behind `leader` (no takeover) and return the AV track.
pub fn follow_leader(leader: &Trajectory, av_spec: &CfSpec, initial_gap: f64) -> Result<Trajectory> {
    let mut ctl = CfController::new(av_spec.clone());
    let first = &leader.samples[0];
    let mut av = VehicleState::new(1, Role::Av, first.y - initial_gap - crate::kinematics::VEHICLE_LENGTH, first.v);
    let mut out = Vec::with_capacity(leader.len());
    for k in 0..leader.len() {
        if k + 1 == leader.len() {
            out.push(av);
            break;
        }
        let l = &leader.samples[k];
        let gap = (l.y - av.y - crate::kinematics::VEHICLE_LENGTH).max(0.1);
        let a = ctl.accel(gap, av.v, l.v - av.v, l.v)?;
        let next = euler_step(&av, a, leader.dt)?;
        ctl.record(next.a);
        out.push(VehicleState { a: next.a, ..av });
        av = next;
    }
    Trajectory::new(leader.dt, out)
}

/// Observed instances generated from a known parameter vector: each
/// instance pairs a leader pulse, an AV law and a shadow law, and its
/// takeover time is one draw of the evidence model.
pub fn synthetic_instances(
    theta: &EaTheta,
    scenarios: &[(Trajectory, CfSpec, CfSpec)],
    ea: &EaConfig,
    rng: &mut RngStream,
) -> Result<Vec<ObservedInstance>> {
    scenarios
        .iter()
        .enumerate()
        .map(|(i, (leader, av_spec, shadow))| {
            let gap = crate::cf::equilibrium_gap(av_spec, leader.samples[0].v)?;
            let av = follow_leader(leader, av_spec, gap)?;
            let mut inst = ObservedInstance::new(format!("syn{i:03}"), leader.clone(), av, None, ea.d_total, ea.ttt_a, shadow.clone())?;
            let series = inst.channel_series(ea)?;
            inst.takeover = series.first_passage(theta, ea.sigma, ea.alpha, rng)?;
            Ok(inst)
        })
        .collect()
}

/// `n` varied braking pulses, each paired with an AV law (alternating
/// conservative IDM-PID, aggressive IDM-PID and an HL draw from `av`) and a
/// driver law drawn from `hdv`.
pub fn synthetic_scenarios(
    n: usize,
    duration: f64,
    hdv: &crate::cf::HdvPosterior,
    av: &crate::cf::AvPosterior,
    rng: &mut RngStream,
) -> Result<Vec<(Trajectory, CfSpec, CfSpec)>> {
    use crate::cf::{sample_hybrid, IdmPidParams};
    (0..n)
        .map(|i| {
            let pulse = crate::platoon::LeaderPulse {
                cruise: rng.random_range(5.0..15.0),
                decel: rng.random_range(1.0..3.5),
                brake_time: rng.random_range(2.0..5.0),
                hold: rng.random_range(2.0..6.0),
                accel: rng.random_range(0.5..1.5),
                duration,
                ..Default::default()
            };
            let av_spec = match i % 3 {
                0 => CfSpec::IdmPid(IdmPidParams::conservative()),
                1 => CfSpec::IdmPid(IdmPidParams::aggressive()),
                _ => av.sample(rng),
            };
            let shadow = sample_hybrid(rng, hdv)?;
            Ok((pulse.trajectory()?, av_spec, shadow))
        })
        .collect()
}
