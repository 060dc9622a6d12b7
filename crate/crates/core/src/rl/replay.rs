use ndarray::{Array1, Array2};
use rand::{Rng, RngCore};

use super::env::{RlState, N_STATE};
use super::nn::{cast, Scalar};

/// `(s, a, r, s', done)` with `a` the squashed action in `[-1, 1]` and `r`
/// the scaled reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: RlState,
    pub a: f64,
    pub r: f64,
    pub s2: RlState,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub s: Array2<F>,
    /// Critic input: features with the action appended.
    pub sa: Array2<F>,
    pub a: Array1<f64>,
    pub r: Array1<f64>,
    pub s2: Array2<F>,
    pub done: Array1<f64>,
}

impl<F: Scalar> Batch<F> {
    pub fn from_transitions(items: &[Transition]) -> Self {
        let n = items.len();
        let mut s = Array2::zeros((n, N_STATE));
        let mut sa = Array2::zeros((n, N_STATE + 1));
        let mut s2 = Array2::zeros((n, N_STATE));
        for (i, t) in items.iter().enumerate() {
            let f = t.s.features::<F>();
            let f2 = t.s2.features::<F>();
            for k in 0..N_STATE {
                s[[i, k]] = f[k];
                sa[[i, k]] = f[k];
                s2[[i, k]] = f2[k];
            }
            sa[[i, N_STATE]] = cast(t.a);
        }
        Self {
            s,
            sa,
            a: items.iter().map(|t| t.a).collect(),
            r: items.iter().map(|t| t.r).collect(),
            s2,
            done: items.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Fixed-capacity ring buffer.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be > 0");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 20)),
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Uniform draw with replacement.
    pub fn sample<F: Scalar, R: RngCore + ?Sized>(&self, n: usize, rng: &mut R) -> Batch<F> {
        let picks: Vec<Transition> = (0..n).map(|_| self.items[rng.random_range(0..self.items.len())]).collect();
        Batch::from_transitions(&picks)
    }
}
