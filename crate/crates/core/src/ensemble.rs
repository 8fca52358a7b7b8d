//! Multi-head tabular Q ensemble.
//!
//! Heads share one `(state, action)` index space and differ only in their
//! random initialization. The ensemble mean is the value estimate and the
//! sample standard deviation across heads is the epistemic uncertainty.

use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_HEADS: usize = 5;
pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const DEFAULT_DISCOUNT: f64 = 0.95;
pub const DEFAULT_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEstimate {
    pub mu: f64,
    pub sigma_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QEnsemble {
    n_heads: usize,
    n_states: usize,
    n_actions: usize,
    learning_rate: f64,
    discount_factor: f64,
    /// `heads[h * n_states * n_actions + s * n_actions + a]`
    table: Vec<f64>,
}

impl QEnsemble {
    /// Heads drawn uniformly from `[-init_scale, init_scale]`, each from its
    /// own stream derived from `seed`.
    pub fn init(
        n_heads: usize,
        n_states: usize,
        n_actions: usize,
        init_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if n_heads < 2 {
            return Err(Error::TooFewHeads(n_heads));
        }
        if !(init_scale >= 0.0 && init_scale.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "init_scale",
                reason: format!("must be finite and >= 0, got {init_scale}"),
            });
        }
        let per_head = n_states * n_actions;
        let mut table = Vec::with_capacity(n_heads * per_head);
        for h in 0..n_heads {
            let mut r = rng::stream(seed, "q-ensemble", &format!("head-{h}"));
            table.extend((0..per_head).map(|_| {
                if init_scale == 0.0 {
                    0.0
                } else {
                    r.random_range(-init_scale..=init_scale)
                }
            }));
        }
        Ok(QEnsemble {
            n_heads,
            n_states,
            n_actions,
            learning_rate: DEFAULT_LEARNING_RATE,
            discount_factor: DEFAULT_DISCOUNT,
            table,
        })
    }

    /// Builds an ensemble from explicit head tables, each `n_states * n_actions` long.
    pub fn from_heads(heads: Vec<Vec<f64>>, n_states: usize, n_actions: usize) -> Result<Self> {
        if heads.len() < 2 {
            return Err(Error::TooFewHeads(heads.len()));
        }
        let per_head = n_states * n_actions;
        if let Some(bad) = heads.iter().find(|h| h.len() != per_head) {
            return Err(Error::InvalidParameter {
                name: "heads",
                reason: format!("head has {} entries, expected {per_head}", bad.len()),
            });
        }
        Ok(QEnsemble {
            n_heads: heads.len(),
            n_states,
            n_actions,
            learning_rate: DEFAULT_LEARNING_RATE,
            discount_factor: DEFAULT_DISCOUNT,
            table: heads.concat(),
        })
    }

    pub fn with_rates(mut self, learning_rate: f64, discount_factor: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                reason: format!("must lie in (0, 1], got {learning_rate}"),
            });
        }
        if !(0.0..1.0).contains(&discount_factor) {
            return Err(Error::InvalidParameter {
                name: "discount_factor",
                reason: format!("must lie in [0, 1), got {discount_factor}"),
            });
        }
        self.learning_rate = learning_rate;
        self.discount_factor = discount_factor;
        Ok(self)
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn discount_factor(&self) -> f64 {
        self.discount_factor
    }

    #[inline]
    fn offset(&self, head: usize, s: usize, a: usize) -> usize {
        debug_assert!(head < self.n_heads && s < self.n_states && a < self.n_actions);
        (head * self.n_states + s) * self.n_actions + a
    }

    pub fn get(&self, head: usize, s: usize, a: usize) -> f64 {
        self.table[self.offset(head, s, a)]
    }

    pub fn set(&mut self, head: usize, s: usize, a: usize, value: f64) {
        let i = self.offset(head, s, a);
        self.table[i] = value;
    }

    /// Values of every head at `(s, a)`.
    pub fn head_values(&self, s: usize, a: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_heads).map(move |h| self.get(h, s, a))
    }

    pub fn mean(&self, s: usize, a: usize) -> f64 {
        self.estimate(s, a).mu
    }

    /// Sample standard deviation across heads (`N - 1` denominator).
    pub fn sigma_m(&self, s: usize, a: usize) -> f64 {
        self.estimate(s, a).sigma_m
    }

    pub fn estimate(&self, s: usize, a: usize) -> ValueEstimate {
        // Deviations are taken from head 0 so that exactly agreeing heads
        // give exactly mu = q and sigma_m = 0.
        let pivot = self.get(0, s, a);
        let n = self.n_heads as f64;
        let shift = self.head_values(s, a).map(|q| q - pivot).sum::<f64>() / n;
        let ss: f64 = self
            .head_values(s, a)
            .map(|q| {
                let d = q - pivot - shift;
                d * d
            })
            .sum();
        ValueEstimate {
            mu: pivot + shift,
            sigma_m: (ss / (n - 1.0)).sqrt(),
        }
    }

    fn head_max(&self, head: usize, s: usize) -> f64 {
        let base = self.offset(head, s, 0);
        self.table[base..base + self.n_actions]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// One Q-learning step on every head, each bootstrapping from its own
    /// greedy value at `s_next`.
    pub fn update(&mut self, s: usize, a: usize, reward: f64, s_next: usize, terminal: bool) {
        for h in 0..self.n_heads {
            let bootstrap = if terminal {
                0.0
            } else {
                self.discount_factor * self.head_max(h, s_next)
            };
            let i = self.offset(h, s, a);
            let q = self.table[i];
            self.table[i] = q + self.learning_rate * (reward + bootstrap - q);
        }
    }

    /// CSV dump: `state,action,head_0..head_{N-1},mu,sigma_m`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["state".to_string(), "action".to_string()];
        header.extend((0..self.n_heads).map(|h| format!("head_{h}")));
        header.extend(["mu".to_string(), "sigma_m".to_string()]);
        w.write_record(&header)?;
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let est = self.estimate(s, a);
                let mut row = vec![s.to_string(), a.to_string()];
                row.extend(self.head_values(s, a).map(|q| format!("{q:.6}")));
                row.push(format!("{:.6}", est.mu));
                row.push(format!("{:.6}", est.sigma_m));
                w.write_record(&row)?;
            }
        }
        w.flush()
    }
}
