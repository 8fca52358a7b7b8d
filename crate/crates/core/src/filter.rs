//! The reliability filter: confidence-adjusted action scores.
//!
//! The reciprocal score is `J = mu / (1 + lambda * (alpha * sigma_m + beta * sigma_h))`.
//! Two alternative shapes, linear subtraction and exponential decay, are
//! kept for comparison. `risk = lambda * (alpha * sigma_m + beta * sigma_h)`
//! doubles as the abstention signal.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterVariant {
    Reciprocal,
    LinearSubtraction,
    ExponentialDecay,
}

impl FilterVariant {
    pub const ALL: [FilterVariant; 3] = [
        FilterVariant::Reciprocal,
        FilterVariant::LinearSubtraction,
        FilterVariant::ExponentialDecay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterVariant::Reciprocal => "reciprocal",
            FilterVariant::LinearSubtraction => "linear",
            FilterVariant::ExponentialDecay => "exponential",
        }
    }

    /// Score for a given mean and (already weighted and scaled) risk.
    pub fn apply(self, mu: f64, risk: f64) -> f64 {
        match self {
            FilterVariant::Reciprocal => mu / (1.0 + risk),
            FilterVariant::LinearSubtraction => mu - risk,
            FilterVariant::ExponentialDecay => mu * (-risk).exp(),
        }
    }

    /// `dJ/dmu` at the given risk. Positive for every variant.
    pub fn mu_slope(self, risk: f64) -> f64 {
        match self {
            FilterVariant::Reciprocal => 1.0 / (1.0 + risk),
            FilterVariant::LinearSubtraction => 1.0,
            FilterVariant::ExponentialDecay => (-risk).exp(),
        }
    }
}

impl fmt::Display for FilterVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reciprocal" => Ok(FilterVariant::Reciprocal),
            "linear" | "linear-subtraction" => Ok(FilterVariant::LinearSubtraction),
            "exponential" | "exponential-decay" => Ok(FilterVariant::ExponentialDecay),
            _ => Err(format!("unknown filter variant {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub variant: FilterVariant,
    pub adaptive: bool,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub abstain_threshold: f64,
}

pub const DEFAULT_LAMBDA: f64 = 5.0;
pub const DEFAULT_ABSTAIN_THRESHOLD: f64 = 0.6;
/// Above this the agent turns over-conservative.
pub const LAMBDA_WARN_ABOVE: f64 = 10.0;

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            lambda: DEFAULT_LAMBDA,
            alpha: 0.5,
            beta: 0.5,
            variant: FilterVariant::Reciprocal,
            adaptive: false,
            lambda_min: 0.0,
            lambda_max: LAMBDA_WARN_ABOVE,
            abstain_threshold: DEFAULT_ABSTAIN_THRESHOLD,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        let invalid = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return invalid("lambda", format!("must be finite and >= 0, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid("alpha", format!("must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return invalid("beta", format!("must lie in [0, 1], got {}", self.beta));
        }
        if self.adaptive
            && !(self.lambda_min <= self.lambda && self.lambda <= self.lambda_max)
        {
            return invalid(
                "lambda",
                format!(
                    "adaptive mode needs lambda_min <= lambda <= lambda_max, got {} <= {} <= {}",
                    self.lambda_min, self.lambda, self.lambda_max
                ),
            );
        }
        Ok(())
    }

    /// `alpha * sigma_m + beta * sigma_h`
    pub fn weighted_sigma(&self, sigma_m: f64, sigma_h: f64) -> f64 {
        self.alpha * sigma_m + self.beta * sigma_h
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionScore {
    pub j: f64,
    pub risk: f64,
    pub abstain: bool,
}

fn check_sigma(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NegativeUncertainty { name, value })
    }
}

pub fn score(params: &FilterParams, mu: f64, sigma_m: f64, sigma_h: f64) -> Result<ActionScore> {
    score_with_lambda(params, params.lambda, mu, sigma_m, sigma_h)
}

/// [`score`] with `lambda` overridden, e.g. by the adaptive rule.
pub fn score_with_lambda(
    params: &FilterParams,
    lambda: f64,
    mu: f64,
    sigma_m: f64,
    sigma_h: f64,
) -> Result<ActionScore> {
    check_sigma("sigma_m", sigma_m)?;
    check_sigma("sigma_h", sigma_h)?;
    let risk = lambda * params.weighted_sigma(sigma_m, sigma_h);
    Ok(ActionScore {
        j: params.variant.apply(mu, risk),
        risk,
        abstain: risk > params.abstain_threshold,
    })
}

/// Analytic `(dJ/dsigma_m, dJ/dsigma_h)` of the reciprocal score.
pub fn reciprocal_gradient(params: &FilterParams, mu: f64, sigma_m: f64, sigma_h: f64) -> (f64, f64) {
    let denom = 1.0 + params.lambda * params.weighted_sigma(sigma_m, sigma_h);
    let k = -mu * params.lambda / (denom * denom);
    (k * params.alpha, k * params.beta)
}

/// Non-negativity of the reciprocal score for `mu >= 0`.
pub fn check_nonnegativity(params: &FilterParams, mu: f64, sigma_m: f64, sigma_h: f64) -> bool {
    debug_assert_eq!(params.variant, FilterVariant::Reciprocal);
    match score(params, mu, sigma_m, sigma_h) {
        Ok(s) => s.j >= 0.0,
        Err(_) => false,
    }
}

/// Relative tolerance for the finite-difference derivative check.
pub const FD_REL_TOL: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;

/// Strict decrease of the reciprocal score when either uncertainty grows
/// (`sigma_m -> sigma_m + bump_m`, `sigma_h -> sigma_h + bump_h`, each with
/// the other held fixed), plus agreement of the analytic gradient with a
/// central finite difference.
///
/// A coordinate whose weight is zero must instead leave the score unchanged.
pub fn check_strict_decrease(
    params: &FilterParams,
    mu: f64,
    sigma_m: f64,
    sigma_h: f64,
    bump_m: f64,
    bump_h: f64,
) -> bool {
    debug_assert_eq!(params.variant, FilterVariant::Reciprocal);
    let j = |m: f64, h: f64| match score(params, mu, m, h) {
        Ok(s) => s.j,
        Err(_) => f64::NAN,
    };
    let base = j(sigma_m, sigma_h);
    let moved_m = j(sigma_m + bump_m, sigma_h);
    let moved_h = j(sigma_m, sigma_h + bump_h);
    let strict = |weight: f64, moved: f64| {
        if params.lambda > 0.0 && weight > 0.0 {
            moved < base
        } else {
            moved == base
        }
    };
    if !(strict(params.alpha, moved_m) && strict(params.beta, moved_h)) {
        return false;
    }

    let (dm, dh) = reciprocal_gradient(params, mu, sigma_m, sigma_h);
    // Central differences, or a second-order forward difference when the
    // point sits too close to the sigma >= 0 boundary.
    let h = FD_STEP;
    let diff = |f: &dyn Fn(f64) -> f64, x: f64| {
        if x >= h {
            (f(x + h) - f(x - h)) / (2.0 * h)
        } else {
            (-3.0 * f(x) + 4.0 * f(x + h) - f(x + 2.0 * h)) / (2.0 * h)
        }
    };
    let fd_m = diff(&|x| j(x, sigma_h), sigma_m);
    let fd_h = diff(&|x| j(sigma_m, x), sigma_h);
    let close = |a: f64, fd: f64| (a - fd).abs() <= FD_REL_TOL * (1.0 + a.abs());
    close(dm, fd_m) && close(dh, fd_h)
}

// ---------------------------------------------------------------------------
// Adaptive lambda
// ---------------------------------------------------------------------------

const ADAPTIVE_EPS: f64 = 1e-6;
pub const BASELINE_WINDOW: usize = 100;

/// `lambda_t = clamp(lambda * (1 + (s - b) / max(b, eps)), lambda_min, lambda_max)`
/// with `s = alpha * sigma_m + beta * sigma_h` and `b` the recent baseline.
pub fn adaptive_lambda(params: &FilterParams, sigma_m: f64, sigma_h: f64, baseline_sigma: f64) -> f64 {
    if !params.adaptive {
        return params.lambda;
    }
    let total = params.weighted_sigma(sigma_m, sigma_h);
    let raw = params.lambda * (1.0 + (total - baseline_sigma) / baseline_sigma.max(ADAPTIVE_EPS));
    raw.clamp(params.lambda_min, params.lambda_max)
}

/// Trailing mean of the weighted uncertainty over the last 100 steps.
#[derive(Debug, Clone, Default)]
pub struct SigmaBaseline {
    window: VecDeque<f64>,
    sum: f64,
}

impl SigmaBaseline {
    pub fn push(&mut self, total_sigma: f64) {
        if self.window.len() == BASELINE_WINDOW {
            if let Some(old) = self.window.pop_front() {
                self.sum -= old;
            }
        }
        self.window.push_back(total_sigma);
        self.sum += total_sigma;
    }

    /// Zero until the first push.
    pub fn mean(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            // Recompute rather than trust the running sum, which drifts.
            self.window.iter().sum::<f64>() / self.window.len() as f64
        }
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Curve export
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub variant: FilterVariant,
    pub mu: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub j: f64,
}

/// Every filter shape over the `mu x lambda x sigma` grid, with `sigma` a
/// single combined uncertainty (`alpha = 1`, `beta = 0`).
pub fn export_filter_curves(mus: &[f64], lambdas: &[f64], sigmas: &[f64]) -> Vec<CurveRow> {
    let mut rows = Vec::with_capacity(3 * mus.len() * lambdas.len() * sigmas.len());
    for variant in FilterVariant::ALL {
        for &mu in mus {
            for &lambda in lambdas {
                for &sigma in sigmas {
                    rows.push(CurveRow {
                        variant,
                        mu,
                        lambda,
                        sigma,
                        j: variant.apply(mu, lambda * sigma),
                    });
                }
            }
        }
    }
    rows
}

/// `0, step, 2 step, ..., max` without accumulated rounding.
pub fn sigma_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

pub const CURVE_HEADER: &str = "variant,mu,lambda,sigma,j";

pub fn write_curves_csv<W: Write>(rows: &[CurveRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CURVE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.variant, r.mu, r.lambda, r.sigma, r.j
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(lambda: f64, alpha: f64, beta: f64) -> FilterParams {
        FilterParams {
            lambda,
            alpha,
            beta,
            ..FilterParams::default()
        }
    }

    #[test]
    fn zero_lambda_is_identity() {
        for v in FilterVariant::ALL {
            let p = FilterParams {
                variant: v,
                ..params(0.0, 0.5, 0.5)
            };
            let s = score(&p, 7.25, 3.0, 9.0).unwrap();
            assert_eq!(s.j, 7.25);
            assert_eq!(s.risk, 0.0);
            assert!(!s.abstain);
        }
    }

    #[test]
    fn reciprocal_substitution() {
        let s = score(&params(2.0, 0.5, 0.5), 10.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(s.j, 10.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(s.risk, 2.0);
        assert!(s.abstain);
    }

    #[test]
    fn linear_collapse_inverts_sign() {
        let p = FilterParams {
            variant: FilterVariant::LinearSubtraction,
            ..params(2.0, 1.0, 0.0)
        };
        assert_relative_eq!(score(&p, 1.0, 1.0, 0.0).unwrap().j, -1.0);
    }

    #[test]
    fn exponential_shape() {
        let p = FilterParams {
            variant: FilterVariant::ExponentialDecay,
            ..params(1.0, 1.0, 0.0)
        };
        assert_relative_eq!(score(&p, 2.0, 1.0, 0.0).unwrap().j, 2.0 / std::f64::consts::E);
    }

    #[test]
    fn negative_sigma_rejected() {
        let p = params(1.0, 0.5, 0.5);
        assert!(matches!(
            score(&p, 1.0, -0.1, 0.0),
            Err(Error::NegativeUncertainty { name: "sigma_m", .. })
        ));
        assert!(matches!(
            score(&p, 1.0, 0.0, -1.0),
            Err(Error::NegativeUncertainty { name: "sigma_h", .. })
        ));
        assert!(score(&p, 1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn abstention_threshold_is_strict() {
        // risk = 1.2 * (0.5 * 1 + 0.5 * 0) = 0.6 exactly
        let p = params(1.2, 0.5, 0.5);
        let s = score(&p, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(s.risk, 0.6);
        assert!(!s.abstain);
        assert!(score(&p, 1.0, 1.01, 0.0).unwrap().abstain);
    }

    #[test]
    fn nonnegativity_examples() {
        let p = params(3.0, 0.5, 0.5);
        assert!(check_nonnegativity(&p, 0.0, 1.0, 1.0));
        assert!(check_nonnegativity(&p, 10.0, 1e9, 1e9));
        assert!(score(&p, 10.0, 1e9, 1e9).unwrap().j > 0.0);
    }

    #[test]
    fn strict_decrease_examples() {
        let p = params(1.0, 1.0, 0.0);
        assert_relative_eq!(score(&p, 10.0, 0.0, 0.0).unwrap().j, 10.0);
        assert_relative_eq!(score(&p, 10.0, 1.0, 0.0).unwrap().j, 5.0);

        let p = params(2.0, 0.5, 0.5);
        let (dm, _) = reciprocal_gradient(&p, 10.0, 1.0, 1.0);
        assert_relative_eq!(dm, -10.0 * 2.0 * 0.5 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(dm, -1.1111, epsilon = 1e-4);
        assert!(check_strict_decrease(&p, 10.0, 1.0, 1.0, 0.5, 0.5));

        // alpha = 0: flat in sigma_m, still decreasing in sigma_h
        let p = params(2.0, 0.0, 0.5);
        assert_eq!(reciprocal_gradient(&p, 10.0, 1.0, 1.0).0, 0.0);
        assert!(check_strict_decrease(&p, 10.0, 1.0, 1.0, 0.5, 0.5));
        assert_eq!(
            score(&p, 10.0, 1.0, 1.0).unwrap().j,
            score(&p, 10.0, 4.0, 1.0).unwrap().j
        );
    }

    #[test]
    fn finite_difference_at_zero_sigma() {
        assert!(check_strict_decrease(&params(1.5, 0.7, 0.2), 3.0, 0.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn adaptive_rule() {
        let p = FilterParams {
            adaptive: true,
            lambda: 2.0,
            lambda_min: 0.5,
            lambda_max: 10.0,
            ..params(2.0, 0.5, 0.5)
        };
        // total = 0.5 * 1 + 0.5 * 1 = 1
        assert_relative_eq!(adaptive_lambda(&p, 1.0, 1.0, 1.0), 2.0);
        assert_relative_eq!(adaptive_lambda(&p, 2.0, 2.0, 1.0), 4.0);
        assert_eq!(adaptive_lambda(&p, 100.0, 100.0, 1.0), 10.0);
        assert_eq!(adaptive_lambda(&p, 0.0, 0.0, 1.0), 0.5);
        let fixed = FilterParams { adaptive: false, ..p };
        assert_eq!(adaptive_lambda(&fixed, 100.0, 100.0, 1.0), 2.0);
    }

    #[test]
    fn baseline_window_keeps_last_hundred() {
        let mut b = SigmaBaseline::default();
        assert_eq!(b.mean(), 0.0);
        for i in 0..150 {
            b.push(i as f64);
        }
        assert_eq!(b.len(), 100);
        // mean of 50..150
        assert_relative_eq!(b.mean(), 99.5);
    }

    #[test]
    fn validation() {
        assert!(params(-1.0, 0.5, 0.5).validate().is_err());
        assert!(params(1.0, 1.5, 0.5).validate().is_err());
        assert!(params(1.0, 0.5, -0.5).validate().is_err());
        assert!(params(12.0, 0.5, 0.5).validate().is_ok());
        let p = FilterParams {
            adaptive: true,
            ..params(12.0, 0.5, 0.5)
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn curve_properties() {
        let sigmas = sigma_grid(5.0, 0.05);
        assert_eq!(sigmas.len(), 101);
        assert_eq!(sigmas[100], 5.0);
        let rows = export_filter_curves(&[1.0, 5.0, 10.0], &[1.0, 2.0, 5.0], &sigmas);
        assert_eq!(rows.len(), 3 * 3 * 3 * 101);
        for r in rows.iter().filter(|r| r.sigma == 0.0) {
            assert_eq!(r.j, r.mu);
        }
        // linear crosses zero at sigma = mu / lambda
        let p = FilterParams {
            variant: FilterVariant::LinearSubtraction,
            ..params(2.0, 1.0, 0.0)
        };
        assert_eq!(score(&p, 5.0, 2.5, 0.0).unwrap().j, 0.0);
        let at = |v: FilterVariant, r: &CurveRow| {
            rows.iter()
                .find(|x| x.variant == v && x.mu == r.mu && x.lambda == r.lambda && x.sigma == r.sigma)
                .unwrap()
                .j
        };
        for r in rows
            .iter()
            .filter(|r| r.variant == FilterVariant::Reciprocal && r.sigma > 0.0)
        {
            assert!(r.j > at(FilterVariant::ExponentialDecay, r));
        }
    }

    #[test]
    fn curve_csv_format() {
        let rows = export_filter_curves(&[1.0], &[2.0], &[0.0, 0.5]);
        let mut buf = Vec::new();
        write_curves_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "variant,mu,lambda,sigma,j");
        assert_eq!(lines[1], "reciprocal,1.000000,2.000000,0.000000,1.000000");
        assert_eq!(lines[2], "reciprocal,1.000000,2.000000,0.500000,0.500000");
        assert_eq!(lines[4], "linear,1.000000,2.000000,0.500000,0.000000");
        assert_eq!(lines.len(), 7);
    }
}
