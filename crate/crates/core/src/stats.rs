//! Episode metrics, multi-seed aggregation and significance testing.

use crate::ensemble::QEnsemble;
use crate::error::{Error, Result};
use crate::filter::{self, FilterParams};
use crate::supervision::SigmaHStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: u32,
    pub true_return: f64,
    /// Sum of annotator means over the episode.
    pub observed_return: f64,
    pub trap_visits: u32,
    pub abstentions: u32,
    pub goal_reached: bool,
    pub mean_sigma_m: f64,
    pub mean_sigma_h: f64,
    pub epsilon: f64,
}

/// Number of trailing episodes summarized by [`WindowStats`].
pub const FINAL_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Averages over the last [`FINAL_WINDOW`] episodes of a run. All zeros
/// for a run without episodes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowStats {
    pub n: usize,
    pub true_return: MeanStd,
    pub observed_return: MeanStd,
    pub trap_visits: MeanStd,
    pub goal_rate: f64,
    pub abstentions: f64,
    pub mean_sigma_m: f64,
    pub mean_sigma_h: f64,
}

impl WindowStats {
    pub fn from_episodes(episodes: &[EpisodeMetrics]) -> Self {
        let start = episodes.len().saturating_sub(FINAL_WINDOW);
        let w = &episodes[start..];
        if w.is_empty() {
            return WindowStats::default();
        }
        let col = |f: fn(&EpisodeMetrics) -> f64| -> Vec<f64> { w.iter().map(f).collect() };
        let spread = |xs: &[f64]| MeanStd {
            mean: mean(xs),
            std: if xs.len() < 2 { 0.0 } else { sample_std(xs) },
        };
        WindowStats {
            n: w.len(),
            true_return: spread(&col(|e| e.true_return)),
            observed_return: spread(&col(|e| e.observed_return)),
            trap_visits: spread(&col(|e| e.trap_visits as f64)),
            goal_rate: mean(&col(|e| e.goal_reached as u8 as f64)),
            abstentions: mean(&col(|e| e.abstentions as f64)),
            mean_sigma_m: mean(&col(|e| e.mean_sigma_m)),
            mean_sigma_h: mean(&col(|e| e.mean_sigma_h)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub variant: String,
    pub episodes: Vec<EpisodeMetrics>,
    pub final_window: WindowStats,
    /// `|observed - true|` of the final-window mean returns.
    pub alignment_gap: f64,
}

impl RunSummary {
    pub fn new(seed: u64, variant: impl Into<String>, episodes: Vec<EpisodeMetrics>) -> Self {
        let final_window = WindowStats::from_episodes(&episodes);
        RunSummary {
            seed,
            variant: variant.into(),
            alignment_gap: (final_window.observed_return.mean - final_window.true_return.mean).abs(),
            final_window,
            episodes,
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// `N - 1` standard deviation. Callers ensure at least two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

pub fn mean_std(xs: &[f64]) -> Result<MeanStd> {
    if xs.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: xs.len(),
        });
    }
    Ok(MeanStd {
        mean: mean(xs),
        std: sample_std(xs),
    })
}

/// Like [`mean_std`] but a lone value gets a NaN std instead of an error.
pub fn describe(xs: &[f64]) -> Result<MeanStd> {
    match xs.len() {
        0 => Err(Error::TooFewSamples { need: 1, got: 0 }),
        1 => Ok(MeanStd {
            mean: xs[0],
            std: f64::NAN,
        }),
        _ => mean_std(xs),
    }
}

/// Cross-seed mean and std of each run's final-window means.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantAggregate {
    pub variant: String,
    pub n_runs: usize,
    pub true_return: MeanStd,
    pub observed_return: MeanStd,
    pub trap_visits: MeanStd,
    pub alignment_gap: MeanStd,
    pub goal_rate: MeanStd,
    pub abstentions: MeanStd,
    pub mean_sigma_m: MeanStd,
    pub mean_sigma_h: MeanStd,
}

impl VariantAggregate {
    /// Seed-level sample of the trap-visit metric, for t-tests.
    pub fn trap_sample(&self) -> Sample {
        Sample {
            mean: self.trap_visits.mean,
            std: self.trap_visits.std,
            n: self.n_runs,
        }
    }
}

/// A single run aggregates with NaN spreads.
pub fn aggregate(runs: &[RunSummary]) -> Result<VariantAggregate> {
    if runs.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    let over = |f: fn(&RunSummary) -> f64| -> Result<MeanStd> {
        describe(&runs.iter().map(f).collect::<Vec<_>>())
    };
    Ok(VariantAggregate {
        variant: runs[0].variant.clone(),
        n_runs: runs.len(),
        true_return: over(|r| r.final_window.true_return.mean)?,
        observed_return: over(|r| r.final_window.observed_return.mean)?,
        trap_visits: over(|r| r.final_window.trap_visits.mean)?,
        alignment_gap: over(|r| r.alignment_gap)?,
        goal_rate: over(|r| r.final_window.goal_rate)?,
        abstentions: over(|r| r.final_window.abstentions)?,
        mean_sigma_m: over(|r| r.final_window.mean_sigma_m)?,
        mean_sigma_h: over(|r| r.final_window.mean_sigma_h)?,
    })
}

// ---------------------------------------------------------------------------
// t-tests
// ---------------------------------------------------------------------------

/// Summary statistics of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Sample {
    pub fn from_values(xs: &[f64]) -> Result<Sample> {
        let ms = mean_std(xs)?;
        Ok(Sample {
            mean: ms.mean,
            std: ms.std,
            n: xs.len(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
    pub significant_at_05: bool,
}

fn check_sample(s: &Sample) -> Result<()> {
    if s.n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: s.n });
    }
    if s.std.is_nan() || s.std < 0.0 {
        return Err(Error::NegativeUncertainty {
            name: "std",
            value: s.std,
        });
    }
    Ok(())
}

fn finish(diff: f64, se: f64, df: f64) -> TTestResult {
    let (t, p) = if se == 0.0 {
        if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = diff / se;
        (t, student_t_two_sided(t, df))
    };
    TTestResult {
        t,
        df,
        p,
        significant_at_05: p < 0.05,
    }
}

/// Unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &Sample, b: &Sample) -> Result<TTestResult> {
    check_sample(a)?;
    check_sample(b)?;
    let va = a.std * a.std / a.n as f64;
    let vb = b.std * b.std / b.n as f64;
    let se2 = va + vb;
    let df = if se2 == 0.0 {
        (a.n + b.n - 2) as f64
    } else {
        se2 * se2 / (va * va / (a.n - 1) as f64 + vb * vb / (b.n - 1) as f64)
    };
    Ok(finish(a.mean - b.mean, se2.sqrt(), df))
}

/// Equal-variance t-test with `n_a + n_b - 2` degrees of freedom.
pub fn pooled_t_test(a: &Sample, b: &Sample) -> Result<TTestResult> {
    check_sample(a)?;
    check_sample(b)?;
    let df = (a.n + b.n - 2) as f64;
    let sp2 = ((a.n - 1) as f64 * a.std * a.std + (b.n - 1) as f64 * b.std * b.std) / df;
    let se = (sp2 * (1.0 / a.n as f64 + 1.0 / b.n as f64)).sqrt();
    Ok(finish(a.mean - b.mean, se, df))
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
///
/// Uses `I_x(df/2, 1/2)` with `x = df / (df + t^2)`; absolute error is
/// below 1e-10 over the tested range.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() || df.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    #[allow(clippy::excessive_precision)]
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

/// `I_x(a, b)` via the continued fraction, evaluated with modified Lentz.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    // The fraction converges fast only on one side of the mean.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

pub fn reduction_percent(baseline: f64, treated: f64) -> Result<f64> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(Error::NonPositiveBaseline(baseline));
    }
    Ok(100.0 * (baseline - treated) / baseline)
}

// ---------------------------------------------------------------------------
// Sign-preservation radius
// ---------------------------------------------------------------------------

/// Per-action inputs to the filter: `(mu, sigma_m, sigma_h)`.
pub type ActionInputs = (f64, f64, f64);

/// Smallest increase of the runner-up's `mu` that lets it tie the best
/// filtered score, all uncertainties held fixed. Zero on a tie.
pub fn radius_for_actions(params: &FilterParams, actions: &[ActionInputs]) -> Result<f64> {
    if actions.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: actions.len(),
        });
    }
    let mut scored = actions
        .iter()
        .map(|&(mu, sm, sh)| filter::score(params, mu, sm, sh).map(|s| (s.j, s.risk)))
        .collect::<Result<Vec<_>>>()?;
    // Stable sort keeps the lower index first among equal scores.
    scored.sort_by(|x, y| y.0.total_cmp(&x.0));
    let (best, _) = scored[0];
    let (second, risk) = scored[1];
    if best == second {
        return Ok(0.0);
    }
    Ok((best - second) / params.variant.mu_slope(risk))
}

pub fn sign_preservation_radius(
    ensemble: &QEnsemble,
    sigma_h: &SigmaHStore,
    params: &FilterParams,
    s: usize,
) -> Result<f64> {
    let actions: Vec<ActionInputs> = (0..ensemble.n_actions())
        .map(|a| {
            let e = ensemble.estimate(s, a);
            (e.mu, e.sigma_m, sigma_h.get(s, a))
        })
        .collect();
    radius_for_actions(params, &actions)
}
