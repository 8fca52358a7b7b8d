//! Synthetic annotator ensemble and the human-uncertainty signal.
//!
//! Annotators see the observed reward of a transition and whether it landed
//! on a trap. They never see the true reward.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnnotatorKind {
    Conservative,
    MildlyTempted,
    Stochastic,
}

impl AnnotatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AnnotatorKind::Conservative => "conservative",
            AnnotatorKind::MildlyTempted => "mildly-tempted",
            AnnotatorKind::Stochastic => "stochastic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotatorProfile {
    pub kind: AnnotatorKind,
    /// Added to the annotation when the transition lands on a trap.
    pub trap_bias: f64,
    pub noise_std: f64,
    /// Replaces `noise_std` on trap transitions.
    pub trap_noise_std: f64,
}

/// Trap noise of the stochastic annotator. Tuned so that the expected
/// sample std of the three default annotations at a trap is about 1.247.
pub const STOCHASTIC_TRAP_NOISE_STD: f64 = 0.93;

pub fn default_profiles() -> Vec<AnnotatorProfile> {
    vec![
        AnnotatorProfile {
            kind: AnnotatorKind::Conservative,
            trap_bias: 0.0,
            noise_std: 0.05,
            trap_noise_std: 0.05,
        },
        AnnotatorProfile {
            kind: AnnotatorKind::MildlyTempted,
            trap_bias: 2.0,
            noise_std: 0.05,
            trap_noise_std: 0.05,
        },
        AnnotatorProfile {
            kind: AnnotatorKind::Stochastic,
            trap_bias: 0.0,
            noise_std: 0.1,
            trap_noise_std: STOCHASTIC_TRAP_NOISE_STD,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub level: f64,
    /// Std of the extra Gaussian added to every annotation.
    pub std_scale: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            level: 0.0,
            std_scale: 0.0,
        }
    }

    /// Noise whose std is `level` times the goal reward.
    pub fn from_level(level: f64, goal_reward: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&level) {
            return Err(Error::InvalidParameter {
                name: "noise",
                reason: format!("level must lie in [0, 1], got {level}"),
            });
        }
        Ok(NoiseSpec {
            level,
            std_scale: level * goal_reward.abs(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackSample {
    pub annotations: Vec<f64>,
    pub mean_h: f64,
    pub sigma_h: f64,
}

impl FeedbackSample {
    pub fn from_annotations(annotations: Vec<f64>) -> Result<Self> {
        if annotations.len() < 2 {
            return Err(Error::TooFewAnnotators(annotations.len()));
        }
        let (mean_h, sigma_h) = mean_and_sample_std(&annotations);
        Ok(FeedbackSample {
            annotations,
            mean_h,
            sigma_h,
        })
    }
}

/// Mean and `N - 1` sample std, pivoted on the first value so that equal
/// inputs give exactly zero spread.
pub(crate) fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let pivot = xs[0];
    let shift = xs.iter().map(|x| x - pivot).sum::<f64>() / n;
    let ss: f64 = xs
        .iter()
        .map(|x| {
            let d = x - pivot - shift;
            d * d
        })
        .sum();
    (pivot + shift, (ss / (n - 1.0)).sqrt())
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        std * rng.sample::<f64, _>(StandardNormal)
    }
}

pub fn annotate<R: Rng + ?Sized>(
    profiles: &[AnnotatorProfile],
    observed_reward: f64,
    trap_hit: bool,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<FeedbackSample> {
    if profiles.len() < 2 {
        return Err(Error::TooFewAnnotators(profiles.len()));
    }
    let annotations = profiles
        .iter()
        .map(|p| {
            let (bias, std) = if trap_hit {
                (p.trap_bias, p.trap_noise_std)
            } else {
                (0.0, p.noise_std)
            };
            let own = gaussian(rng, std);
            let extra = gaussian(rng, noise.std_scale);
            observed_reward + bias + own + extra
        })
        .collect();
    FeedbackSample::from_annotations(annotations)
}

/// Exponential moving average of `sigma_h` per `(state, action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaHStore {
    n_actions: usize,
    tau: f64,
    prior: f64,
    values: Vec<f64>,
    visits: Vec<u32>,
}

pub const DEFAULT_SIGMA_H_TAU: f64 = 0.1;

impl SigmaHStore {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        SigmaHStore::with_tau(n_states, n_actions, DEFAULT_SIGMA_H_TAU)
    }

    pub fn with_tau(n_states: usize, n_actions: usize, tau: f64) -> Self {
        SigmaHStore {
            n_actions,
            tau,
            prior: 0.0,
            values: vec![0.0; n_states * n_actions],
            visits: vec![0; n_states * n_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn visits(&self, s: usize, a: usize) -> u32 {
        self.visits[s * self.n_actions + a]
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn running_sigma_h(&mut self, s: usize, a: usize, sample: &FeedbackSample) -> f64 {
        let i = s * self.n_actions + a;
        let v = (1.0 - self.tau) * self.values[i] + self.tau * sample.sigma_h;
        self.values[i] = v;
        self.visits[i] += 1;
        v
    }
}
