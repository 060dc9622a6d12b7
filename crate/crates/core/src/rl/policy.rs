//! Tanh-squashed Gaussian policy and its checkpoint format.

use std::f64::consts::{LN_2, PI};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::env::{RlState, N_STATE};
use super::nn::{cast, Cache, Mlp, Scalar};
use crate::cf::{ACCEL_MAX as A_MAX, ACCEL_MIN as A_MIN};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TKLPOLCY";
const VERSION: u32 = 1;
/// Hidden activation tag stored in checkpoints.
pub const ACTIVATION_TANH: u32 = 1;

/// `softplus(x) = ln(1 + eˣ)`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh²(u))` without cancellation.
pub fn log_tanh_jacobian(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Log-density of `tanh(μ + σξ)` at the sample with standard-normal draw `ξ`.
pub fn squashed_log_prob(xi: f64, log_std: f64, u: f64) -> f64 {
    -0.5 * xi * xi - log_std - 0.5 * (2.0 * PI).ln() - log_tanh_jacobian(u)
}

/// State → (mean, log-std) network over a single acceleration action.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyFunction<F = f32> {
    pub net: Mlp<F>,
    pub log_std_bounds: (f64, f64),
    pub accel_bounds: (f64, f64),
}

/// One batch of reparameterized samples with everything the backward pass
/// needs.
#[derive(Debug, Clone)]
pub struct ActorSample<F> {
    pub cache: Cache<F>,
    pub mean: Array1<f64>,
    pub log_std: Array1<f64>,
    /// Raw log-std fell outside the bounds (no gradient flows to it).
    pub clamped: Vec<bool>,
    pub xi: Array1<f64>,
    pub u: Array1<f64>,
    pub squashed: Array1<f64>,
    pub log_prob: Array1<f64>,
}

impl<F: Scalar> PolicyFunction<F> {
    pub fn new<R: RngCore + ?Sized>(hidden: &[usize], log_std_bounds: (f64, f64), rng: &mut R) -> Self {
        let mut sizes = vec![N_STATE];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        Self {
            net: Mlp::new(&sizes, 1e-2, rng),
            log_std_bounds,
            accel_bounds: (A_MIN, A_MAX),
        }
    }

    /// Map a squashed action in `[-1, 1]` to m/s².
    pub fn to_accel(&self, squashed: f64) -> f64 {
        let (lo, hi) = self.accel_bounds;
        (lo + 0.5 * (squashed + 1.0) * (hi - lo)).clamp(lo, hi)
    }

    pub fn from_accel(&self, a: f64) -> f64 {
        let (lo, hi) = self.accel_bounds;
        (2.0 * (a - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
    }

    /// Mean and clamped log-std for each row of `x`.
    pub fn heads(&self, x: ArrayView2<F>) -> (Array1<f64>, Array1<f64>) {
        let out = self.net.predict(x);
        let (lo, hi) = self.log_std_bounds;
        let mean = out.column(0).mapv(|v| v.to_f64().unwrap_or(f64::NAN));
        let ls = out.column(1).mapv(|v| v.to_f64().unwrap_or(f64::NAN).clamp(lo, hi));
        (mean, ls)
    }

    /// Reparameterized samples `ã = tanh(μ + σξ)` for given draws.
    pub fn sample_with(&self, x: ArrayView2<F>, xi: Array1<f64>) -> ActorSample<F> {
        let (out, cache) = self.net.forward(x);
        let (lo, hi) = self.log_std_bounds;
        let n = out.nrows();
        let mean = out.column(0).mapv(|v| v.to_f64().unwrap_or(f64::NAN));
        let raw = out.column(1).mapv(|v| v.to_f64().unwrap_or(f64::NAN));
        let clamped: Vec<bool> = raw.iter().map(|&r| r < lo || r > hi).collect();
        let log_std = raw.mapv(|r| r.clamp(lo, hi));
        let u = Array1::from_shape_fn(n, |i| mean[i] + log_std[i].exp() * xi[i]);
        let squashed = u.mapv(f64::tanh);
        let log_prob = Array1::from_shape_fn(n, |i| squashed_log_prob(xi[i], log_std[i], u[i]));
        ActorSample {
            cache,
            mean,
            log_std,
            clamped,
            xi,
            u,
            squashed,
            log_prob,
        }
    }

    pub fn sample<R: RngCore + ?Sized>(&self, x: ArrayView2<F>, rng: &mut R) -> ActorSample<F> {
        let xi = Array1::from_shape_fn(x.nrows(), |_| StandardNormal.sample(rng));
        self.sample_with(x, xi)
    }

    /// Squashed action in `[-1, 1]`: the squashed mean, or a draw when `rng`
    /// is given.
    pub fn act_squashed<R: RngCore + ?Sized>(&self, s: &RlState, rng: Option<&mut R>) -> f64 {
        let x = Array2::from_shape_vec((1, N_STATE), s.features::<F>().to_vec()).expect("shape");
        let (mean, ls) = self.heads(x.view());
        match rng {
            None => mean[0].tanh(),
            Some(rng) => {
                let xi: f64 = StandardNormal.sample(rng);
                (mean[0] + ls[0].exp() * xi).tanh()
            }
        }
    }

    /// Acceleration command in m/s².
    pub fn act<R: RngCore + ?Sized>(&self, s: &RlState, rng: &mut R, deterministic: bool) -> f64 {
        let sq = if deterministic {
            self.act_squashed::<R>(s, None)
        } else {
            self.act_squashed(s, Some(rng))
        };
        self.to_accel(sq)
    }

    pub fn cast<G: Scalar>(&self) -> PolicyFunction<G> {
        let net: Mlp<G> = Mlp {
            layers: self
                .net
                .layers
                .iter()
                .map(|l| super::nn::Dense {
                    w: l.w.mapv(|v| cast(v.to_f64().unwrap_or(f64::NAN))),
                    b: l.b.mapv(|v| cast(v.to_f64().unwrap_or(f64::NAN))),
                })
                .collect(),
        };
        PolicyFunction {
            net,
            log_std_bounds: self.log_std_bounds,
            accel_bounds: self.accel_bounds,
        }
    }
}

impl PolicyFunction<f32> {
    /// Header then parameters as little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.net.sizes();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&ACTIVATION_TANH.to_le_bytes());
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in &sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        for b in [self.log_std_bounds.0, self.log_std_bounds.1, self.accel_bounds.0, self.accel_bounds.1] {
            out.extend_from_slice(&(b as f32).to_le_bytes());
        }
        out.extend_from_slice(&(self.net.n_params() as u64).to_le_bytes());
        for p in self.net.flat() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a policy checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("version {version}, expected {VERSION}")));
        }
        let act = r.u32()?;
        if act != ACTIVATION_TANH {
            return Err(Error::Checkpoint(format!("activation tag {act}, expected {ACTIVATION_TANH} (tanh)")));
        }
        let n_sizes = r.u32()? as usize;
        if !(2..=16).contains(&n_sizes) {
            return Err(Error::Checkpoint(format!("implausible layer count {n_sizes}")));
        }
        let sizes: Vec<usize> = (0..n_sizes).map(|_| r.u32().map(|s| s as usize)).collect::<Result<_>>()?;
        if sizes[0] != N_STATE || sizes[n_sizes - 1] != 2 || sizes.iter().any(|&s| s == 0 || s > 1 << 16) {
            return Err(Error::Checkpoint(format!("layer sizes {sizes:?} do not map {N_STATE} inputs to 2 outputs")));
        }
        let b: Vec<f64> = (0..4).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
        let count = r.u64()? as usize;
        let mut net: Mlp<f32> = Mlp {
            layers: sizes
                .windows(2)
                .map(|io| super::nn::Dense {
                    w: Array2::zeros((io[0], io[1])),
                    b: Array1::zeros(io[1]),
                })
                .collect(),
        };
        if count != net.n_params() {
            return Err(Error::Checkpoint(format!(
                "header declares {count} parameters, layer sizes imply {}",
                net.n_params()
            )));
        }
        let params: Vec<f32> = (0..count).map(|_| r.f32()).collect::<Result<_>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        net.set_flat(&params);
        Ok(Self {
            net,
            log_std_bounds: (b[0], b[1]),
            accel_bounds: (b[2], b[3]),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.bytes.len())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
