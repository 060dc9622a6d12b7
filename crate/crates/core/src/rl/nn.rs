//! Small dense networks with hand-written backpropagation and Adam.
//!
//! Hidden layers use `tanh`; the output layer is linear. Networks are
//! generic over the float type so gradients can be checked in `f64` while
//! training runs in `f32`.

use std::fmt::Debug;
use std::ops::AddAssign;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::{Rng, RngCore};

pub trait Scalar:
    Float + LinalgScalar + ScalarOperand + FromPrimitive + AddAssign + Debug + Default + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + LinalgScalar + ScalarOperand + FromPrimitive + AddAssign + Debug + Default + Send + Sync + 'static
{
}

pub(crate) fn cast<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("representable")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    /// `in × out`.
    pub w: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache<F> {
    /// Input to each layer; `inputs[l + 1]` is the tanh output of layer `l`.
    inputs: Vec<Array2<F>>,
}

#[derive(Debug, Clone)]
pub struct Grads<F> {
    pub layers: Vec<(Array2<F>, Array1<F>)>,
}

impl<F: Scalar> Grads<F> {
    pub fn zeros_like(net: &Mlp<F>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.raw_dim())))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &Grads<F>) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn flat(&self) -> Vec<F> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|x| x.is_finite()) && b.iter().all(|x| x.is_finite()))
    }
}

impl<F: Scalar> Mlp<F> {
    /// Glorot-uniform weights, zero biases; the output layer is scaled by
    /// `out_scale`.
    pub fn new<R: RngCore + ?Sized>(sizes: &[usize], out_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, io)| {
                let (n_in, n_out) = (io[0], io[1]);
                let mut limit = (6.0 / (n_in + n_out) as f64).sqrt();
                if l == last {
                    limit *= out_scale;
                }
                let w = Array2::from_shape_fn((n_in, n_out), |_| cast(rng.random_range(-limit..=limit)));
                Dense {
                    w,
                    b: Array1::zeros(n_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].w.nrows()];
        s.extend(self.layers.iter().map(|l| l.w.ncols()));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> (Array2<F>, Cache<F>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w);
            z += &layer.b;
            inputs.push(h);
            if l + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.tanh());
            }
            h = z;
        }
        (h, Cache { inputs })
    }

    pub fn predict(&self, x: ArrayView2<F>) -> Array2<F> {
        self.forward(x).0
    }

    /// Gradients of `Σ grad_out ⊙ output` with respect to the parameters and
    /// the input.
    pub fn backward(&self, cache: &Cache<F>, grad_out: Array2<F>) -> (Grads<F>, Array2<F>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out;
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads.push((gw, gb));
            let mut d_in = delta.dot(&self.layers[l].w.t());
            if l > 0 {
                // input[l] = tanh(z[l-1]); d tanh = 1 - tanh².
                Zip::from(&mut d_in).and(input).for_each(|d, &h| *d = *d * (F::one() - h * h));
            }
            delta = d_in;
        }
        grads.reverse();
        (Grads { layers: grads }, delta)
    }

    /// `self ← (1 - tau)·self + tau·src`.
    pub fn soft_update(&mut self, src: &Mlp<F>, tau: F) {
        let keep = F::one() - tau;
        for (d, s) in self.layers.iter_mut().zip(&src.layers) {
            Zip::from(&mut d.w).and(&s.w).for_each(|a, &b| *a = keep * *a + tau * b);
            Zip::from(&mut d.b).and(&s.b).for_each(|a, &b| *a = keep * *a + tau * b);
        }
    }

    pub fn flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }

    /// Overwrite parameters from [`Mlp::flat`] order.
    pub fn set_flat(&mut self, values: &[F]) {
        assert_eq!(values.len(), self.n_params());
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for x in l.w.iter_mut() {
                *x = it.next().expect("length checked");
            }
            for x in l.b.iter_mut() {
                *x = it.next().expect("length checked");
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|x| x.is_finite()) && l.b.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: F,
    b1: F,
    b2: F,
    eps: F,
    t: i32,
    m: Grads<F>,
    v: Grads<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(net: &Mlp<F>, lr: f64) -> Self {
        Self {
            lr: cast(lr),
            b1: cast(0.9),
            b2: cast(0.999),
            eps: cast(1e-8),
            t: 0,
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
        }
    }

    /// One descent step along `g`.
    pub fn step(&mut self, net: &mut Mlp<F>, g: &Grads<F>) {
        self.t += 1;
        let (b1, b2, eps) = (self.b1, self.b2, self.eps);
        let c1 = F::one() - b1.powi(self.t);
        let c2 = F::one() - b2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut F, m: &mut F, v: &mut F, g: F| {
            *m = b1 * *m + (F::one() - b1) * g;
            *v = b2 * *v + (F::one() - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p = *p - lr * mh / (vh.sqrt() + eps);
        };
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &g.layers[l];
            let (mw, mb) = &mut self.m.layers[l];
            let (vw, vb) = &mut self.v.layers[l];
            Zip::from(&mut layer.w).and(mw).and(vw).and(gw).for_each(|p, m, v, &g| update(p, m, v, g));
            Zip::from(&mut layer.b).and(mb).and(vb).and(gb).for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

/// Adam on a single scalar parameter.
#[derive(Debug, Clone, Copy)]
pub struct ScalarAdam {
    pub lr: f64,
    t: i32,
    m: f64,
    v: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        Self { lr, t: 0, m: 0.0, v: 0.0 }
    }

    pub fn step(&mut self, p: &mut f64, g: f64) {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let mh = self.m / (1.0 - 0.9f64.powi(self.t));
        let vh = self.v / (1.0 - 0.999f64.powi(self.t));
        *p -= self.lr * mh / (vh.sqrt() + 1e-8);
    }
}
