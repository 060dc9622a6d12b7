//! Disturbance and takeover analytics.

use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Trajectory;
use crate::platoon::Rollout;

/// Ratio cap shared with the reward.
pub const RATIO_CAP: f64 = 100.0;

/// Squared L2 norm of the speed error, `Σ dt·(v - v_E)²`, with its running
/// prefix sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedErrorNorm {
    pub full: f64,
    pub running: Vec<f64>,
}

pub fn l2_speed_error(traj: &Trajectory, v_e: f64) -> SpeedErrorNorm {
    let mut acc = 0.0;
    let running: Vec<f64> = traj
        .speeds()
        .map(|v| {
            acc += traj.dt * (v - v_e).powi(2);
            acc
        })
        .collect();
    SpeedErrorNorm { full: acc, running }
}

/// `√follower / max(√leader, floor)`, clamped to `[0, 100]`.
pub fn amplification_ratio(follower: f64, leader: f64, floor: f64) -> f64 {
    (follower.max(0.0).sqrt() / leader.max(0.0).sqrt().max(floor)).clamp(0.0, RATIO_CAP)
}

/// Per-vehicle norms of one rollout, leader first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceProfile {
    pub norms: Vec<f64>,
    pub running: Vec<Vec<f64>>,
}

impl DisturbanceProfile {
    pub fn of(rollout: &Rollout, v_e: f64) -> Self {
        let per: Vec<SpeedErrorNorm> = rollout.vehicles.iter().map(|t| l2_speed_error(t, v_e)).collect();
        Self {
            norms: per.iter().map(|n| n.full).collect(),
            running: per.into_iter().map(|n| n.running).collect(),
        }
    }

    /// Consecutive ratios `vehicle i / vehicle i-1` for `i >= 1`.
    pub fn consecutive_ratios(&self, floor: f64) -> Vec<f64> {
        self.norms.windows(2).map(|w| amplification_ratio(w[1], w[0], floor)).collect()
    }
}

/// Mean, spread and 95% normal interval of the full-horizon norm per
/// platoon position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Mean running norm per position.
    pub mean_running: Vec<Vec<f64>>,
}

pub fn aggregate_expectation(profiles: &[DisturbanceProfile]) -> Result<Aggregate> {
    if profiles.len() < 2 {
        return Err(Error::InvalidInput("aggregation needs at least two rollouts".into()));
    }
    let m = profiles[0].norms.len();
    let len = profiles[0].running.first().map_or(0, Vec::len);
    if profiles
        .iter()
        .any(|p| p.norms.len() != m || p.running.iter().any(|r| r.len() != len))
    {
        return Err(Error::InvalidInput("rollouts differ in platoon size or horizon".into()));
    }
    let n = profiles.len() as f64;
    let mut out = Aggregate {
        n: profiles.len(),
        mean: vec![0.0; m],
        sd: vec![0.0; m],
        ci_low: vec![0.0; m],
        ci_high: vec![0.0; m],
        mean_running: vec![vec![0.0; len]; m],
    };
    for i in 0..m {
        let mean = profiles.iter().map(|p| p.norms[i]).sum::<f64>() / n;
        let var = profiles.iter().map(|p| (p.norms[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let half = 1.959_963_984_540_054 * (var / n).sqrt();
        out.mean[i] = mean;
        out.sd[i] = var.sqrt();
        out.ci_low[i] = mean - half;
        out.ci_high[i] = mean + half;
        for p in profiles {
            for (acc, x) in out.mean_running[i].iter_mut().zip(&p.running[i]) {
                *acc += x / n;
            }
        }
    }
    Ok(out)
}

/// Empirical sub-distribution of takeover times; censored runs never
/// reach the CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakeoverStats {
    pub total: usize,
    /// Sorted uncensored takeover times.
    pub times: Vec<f64>,
    pub horizon: f64,
    pub rate: f64,
}

impl TakeoverStats {
    pub fn cdf(&self, t: f64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.times.partition_point(|&x| x <= t) as f64 / self.total as f64
    }

    /// `(t, F(t))` at each distinct takeover time.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &t) in self.times.iter().enumerate() {
            let f = (i + 1) as f64 / self.total as f64;
            match out.last_mut() {
                Some(last) if last.0 == t => last.1 = f,
                _ => out.push((t, f)),
            }
        }
        out
    }
}

pub fn takeover_cdf(times: &[Option<f64>], horizon: f64) -> TakeoverStats {
    let mut observed: Vec<f64> = times.iter().flatten().copied().filter(|&t| t <= horizon).collect();
    observed.sort_by(f64::total_cmp);
    let total = times.len();
    TakeoverStats {
        rate: if total == 0 { 0.0 } else { observed.len() as f64 / total as f64 },
        total,
        times: observed,
        horizon,
    }
}

/// Percentile bootstrap interval of a paired statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
    pub resamples: usize,
}

impl BootstrapCi {
    pub fn excludes_zero(&self) -> bool {
        self.low > 0.0 || self.high < 0.0
    }
}

/// Resample matched pairs `(a_i, b_i)` with replacement and report the
/// 2.5/97.5 percentiles of `stat`.
pub fn paired_bootstrap<R: RngCore + ?Sized>(
    a: &[f64],
    b: &[f64],
    stat: impl Fn(&[f64], &[f64]) -> f64,
    resamples: usize,
    rng: &mut R,
) -> Result<BootstrapCi> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput("paired samples must be non-empty and of equal length".into()));
    }
    let n = a.len();
    let mut xs = vec![0.0; n];
    let mut ys = vec![0.0; n];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for k in 0..n {
                let i = rng.random_range(0..n);
                xs[k] = a[i];
                ys[k] = b[i];
            }
            stat(&xs, &ys)
        })
        .filter(|s| s.is_finite())
        .collect();
    stats.sort_by(f64::total_cmp);
    let at = |q: f64| stats[((q * (stats.len() - 1) as f64).round() as usize).min(stats.len() - 1)];
    if stats.is_empty() {
        return Err(Error::NonFinite("every bootstrap statistic".into()));
    }
    Ok(BootstrapCi {
        estimate: stat(a, b),
        low: at(0.025),
        high: at(0.975),
        resamples,
    })
}

/// Relative reduction `1 - mean(a)/mean(b)`.
pub fn relative_reduction(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    1.0 - ma / mb
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, &r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Role, VehicleState, DT};
    use crate::rng::RngStream;

    fn traj(speeds: impl IntoIterator<Item = f64>) -> Trajectory {
        Trajectory::new(
            DT,
            speeds.into_iter().map(|v| VehicleState::new(0, Role::Av, 0.0, v)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn norm_of_constant_equilibrium_is_zero() {
        assert_eq!(l2_speed_error(&traj(vec![26.2; 100]), 26.2).full, 0.0);
    }

    #[test]
    fn unit_deviation_for_ten_seconds() {
        let n = l2_speed_error(&traj(vec![27.2; 100]), 26.2);
        assert!((n.full - 10.0).abs() < 1e-9);
        assert_eq!(*n.running.last().unwrap(), n.full);
    }

    #[test]
    fn doubling_deviation_quadruples_norm() {
        let base: Vec<f64> = (0..200).map(|k| 26.2 + (k as f64 * 0.05).sin()).collect();
        let twice: Vec<f64> = base.iter().map(|v| 26.2 + 2.0 * (v - 26.2)).collect();
        let (a, b) = (l2_speed_error(&traj(base), 26.2), l2_speed_error(&traj(twice), 26.2));
        assert!((b.full - 4.0 * a.full).abs() < 1e-9);
    }

    #[test]
    fn ratio_of_identical_norms_is_one() {
        assert!((amplification_ratio(3.7, 3.7, 1e-3) - 1.0).abs() < 1e-12);
        assert_eq!(amplification_ratio(1e6, 0.0, 1e-3), RATIO_CAP);
    }

    #[test]
    fn cdf_conventions() {
        let none = takeover_cdf(&[None, None], 60.0);
        assert_eq!(none.rate, 0.0);
        assert_eq!(none.cdf(60.0), 0.0);
        let s = takeover_cdf(&[Some(10.0), Some(20.0), Some(30.0)], 60.0);
        assert!((s.cdf(10.0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.cdf(25.0) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.cdf(30.0), 1.0);
        assert_eq!(s.steps().len(), 3);
    }

    #[test]
    fn experiment_rate_replay() {
        let times: Vec<Option<f64>> = (0..48).map(|i| (i < 34).then_some(30.0)).collect();
        let s = takeover_cdf(&times, 180.0);
        assert!((s.rate - 0.7083).abs() < 1e-4);
        assert!(s.cdf(180.0) < 1.0);
    }

    #[test]
    fn mixed_sizes_cannot_be_aggregated() {
        let a = DisturbanceProfile {
            norms: vec![1.0, 2.0],
            running: vec![vec![1.0], vec![2.0]],
        };
        let b = DisturbanceProfile {
            norms: vec![1.0],
            running: vec![vec![1.0]],
        };
        assert!(aggregate_expectation(&[a.clone(), b]).is_err());
        assert!(aggregate_expectation(&[a]).is_err());
    }

    #[test]
    fn identical_rollouts_have_zero_width() {
        let p = DisturbanceProfile {
            norms: vec![1.0, 2.0],
            running: vec![vec![1.0], vec![2.0]],
        };
        let agg = aggregate_expectation(&[p.clone(), p.clone(), p]).unwrap();
        assert_eq!(agg.ci_low, agg.ci_high);
        assert_eq!(agg.mean, vec![1.0, 2.0]);
    }

    #[test]
    fn interval_width_shrinks_like_root_n() {
        let mut rng = RngStream::new(4, 0);
        let mk = |rng: &mut RngStream| DisturbanceProfile {
            norms: vec![rng.random::<f64>() * 10.0],
            running: vec![vec![0.0]],
        };
        let pool: Vec<_> = (0..6400).map(|_| mk(&mut rng)).collect();
        let w = |n: usize| {
            let a = aggregate_expectation(&pool[..n]).unwrap();
            a.ci_high[0] - a.ci_low[0]
        };
        let ratio = w(400) / w(1600);
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
        let ratio = w(1600) / w(6400);
        assert!((ratio - 2.0).abs() < 0.15, "{ratio}");
    }

    #[test]
    fn bootstrap_detects_a_clear_reduction() {
        let a: Vec<f64> = (0..200).map(|i| if i % 10 < 3 { 1.0 } else { 0.0 }).collect();
        let b: Vec<f64> = (0..200).map(|i| if i % 10 < 7 { 1.0 } else { 0.0 }).collect();
        let mut rng = RngStream::new(1, 0);
        let ci = paired_bootstrap(&a, &b, relative_reduction, 2000, &mut rng).unwrap();
        assert!((ci.estimate - (1.0 - 0.3 / 0.7)).abs() < 1e-12);
        assert!(ci.excludes_zero());
        let same = paired_bootstrap(&b, &b, relative_reduction, 500, &mut rng).unwrap();
        assert_eq!(same.estimate, 0.0);
        assert!(!same.excludes_zero());
    }
}
