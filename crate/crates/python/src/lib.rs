//! Python bindings: filter scoring, single training runs, whole experiments
//! and the seed-level statistics.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use uard::agent::{train as train_run, VariantSpec};
use uard::filter::{self, FilterParams, FilterVariant};
use uard::harness::suites;
use uard::harness::{ExperimentSpec, Origin};
use uard::stats::{self, Sample, VariantAggregate};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Config keys from Python keyword arguments. Lists become comma lists.
fn spec_from_kwargs(opts: Option<&Bound<'_, PyDict>>) -> PyResult<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    let Some(opts) = opts else { return Ok(spec) };
    for (k, v) in opts.iter() {
        let key: String = k.extract()?;
        let value = if let Ok(list) = v.cast::<PyList>() {
            let parts: PyResult<Vec<String>> = list.iter().map(|x| Ok(x.str()?.to_string())).collect();
            parts?.join(",")
        } else {
            v.str()?.to_string()
        };
        spec.set(&key, &value, Origin::Flag).map_err(value_err)?;
    }
    spec.filter.validate().map_err(value_err)?;
    Ok(spec)
}

/// Keeps the full cause chain of harness errors.
fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(format!("{e:#}"))
}

fn variant(name: &str) -> PyResult<VariantSpec> {
    VariantSpec::from_name(name).ok_or_else(|| PyValueError::new_err(format!("unknown variant {name:?}")))
}

/// Names of the six preset variants.
#[pyfunction]
fn variants() -> Vec<&'static str> {
    VariantSpec::PRESETS.iter().map(|v| v.name).collect()
}

/// `(j, risk, abstain)` for one action.
#[pyfunction]
#[pyo3(signature = (mu, sigma_m, sigma_h, lam=filter::DEFAULT_LAMBDA, alpha=0.5, beta=0.5, shape="reciprocal"))]
fn score(mu: f64, sigma_m: f64, sigma_h: f64, lam: f64, alpha: f64, beta: f64, shape: &str) -> PyResult<(f64, f64, bool)> {
    let params = FilterParams {
        lambda: lam,
        alpha,
        beta,
        variant: shape.parse::<FilterVariant>().map_err(PyValueError::new_err)?,
        ..FilterParams::default()
    };
    params.validate().map_err(value_err)?;
    let s = filter::score(&params, mu, sigma_m, sigma_h).map_err(value_err)?;
    Ok((s.j, s.risk, s.abstain))
}

/// Filter curves as `{"variant": [...], "mu": [...], "lambda": [...], "sigma": [...], "j": [...]}`.
#[pyfunction]
#[pyo3(signature = (mus=vec![1.0, 5.0, 10.0], lambdas=vec![1.0, 2.0, 5.0], sigma_max=2.0, sigma_step=0.02))]
fn filter_curves<'py>(
    py: Python<'py>,
    mus: Vec<f64>,
    lambdas: Vec<f64>,
    sigma_max: f64,
    sigma_step: f64,
) -> PyResult<Bound<'py, PyDict>> {
    if sigma_step.is_nan() || sigma_step <= 0.0 || sigma_max.is_nan() || sigma_max < 0.0 {
        return Err(PyValueError::new_err("sigma_step must be positive and sigma_max non-negative"));
    }
    let rows = filter::export_filter_curves(&mus, &lambdas, &filter::sigma_grid(sigma_max, sigma_step));
    let d = PyDict::new(py);
    d.set_item("variant", rows.iter().map(|r| r.variant.name()).collect::<Vec<_>>())?;
    d.set_item("mu", rows.iter().map(|r| r.mu).collect::<Vec<_>>())?;
    d.set_item("lambda", rows.iter().map(|r| r.lambda).collect::<Vec<_>>())?;
    d.set_item("sigma", rows.iter().map(|r| r.sigma).collect::<Vec<_>>())?;
    d.set_item("j", rows.iter().map(|r| r.j).collect::<Vec<_>>())?;
    Ok(d)
}

/// Train one variant for one seed. Keyword arguments are config keys
/// (`episodes=200`, `grid=8`, `noise=0.2`, `lambda=2`, ...).
///
/// Returns a dict of final-window statistics plus `episodes`, a dict of
/// per-episode columns.
#[pyfunction]
#[pyo3(signature = (variant_name="UARD-Full", seed=0, **opts))]
fn train<'py>(
    py: Python<'py>,
    variant_name: &str,
    seed: u64,
    opts: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = spec_from_kwargs(opts)?;
    let cfg = spec.training_config(variant(variant_name)?);
    let result = py.detach(|| train_run(&cfg, seed)).map_err(value_err)?;
    let s = &result.summary;
    let w = &s.final_window;

    let d = PyDict::new(py);
    d.set_item("variant", &s.variant)?;
    d.set_item("seed", s.seed)?;
    d.set_item("window", w.n)?;
    d.set_item("true_return", w.true_return.mean)?;
    d.set_item("observed_return", w.observed_return.mean)?;
    d.set_item("trap_visits", w.trap_visits.mean)?;
    d.set_item("goal_rate", w.goal_rate)?;
    d.set_item("abstentions", w.abstentions)?;
    d.set_item("mean_sigma_m", w.mean_sigma_m)?;
    d.set_item("mean_sigma_h", w.mean_sigma_h)?;
    d.set_item("alignment_gap", s.alignment_gap)?;
    d.set_item("perturbed_episode", result.state.perturbed_episode)?;

    let eps = &s.episodes;
    let cols = PyDict::new(py);
    cols.set_item("episode", eps.iter().map(|e| e.episode).collect::<Vec<_>>())?;
    cols.set_item("true_return", eps.iter().map(|e| e.true_return).collect::<Vec<_>>())?;
    cols.set_item("observed_return", eps.iter().map(|e| e.observed_return).collect::<Vec<_>>())?;
    cols.set_item("trap_visits", eps.iter().map(|e| e.trap_visits).collect::<Vec<_>>())?;
    cols.set_item("abstentions", eps.iter().map(|e| e.abstentions).collect::<Vec<_>>())?;
    cols.set_item("goal_reached", eps.iter().map(|e| e.goal_reached).collect::<Vec<_>>())?;
    cols.set_item("mean_sigma_m", eps.iter().map(|e| e.mean_sigma_m).collect::<Vec<_>>())?;
    cols.set_item("mean_sigma_h", eps.iter().map(|e| e.mean_sigma_h).collect::<Vec<_>>())?;
    cols.set_item("epsilon", eps.iter().map(|e| e.epsilon).collect::<Vec<_>>())?;
    d.set_item("episodes", cols)?;
    Ok(d)
}

fn aggregate_dict<'py>(py: Python<'py>, condition: &str, a: &VariantAggregate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("condition", condition)?;
    d.set_item("variant", &a.variant)?;
    d.set_item("n_runs", a.n_runs)?;
    for (name, ms) in [
        ("true_return", &a.true_return),
        ("observed_return", &a.observed_return),
        ("trap_visits", &a.trap_visits),
        ("alignment_gap", &a.alignment_gap),
        ("goal_rate", &a.goal_rate),
        ("abstentions", &a.abstentions),
        ("mean_sigma_m", &a.mean_sigma_m),
        ("mean_sigma_h", &a.mean_sigma_h),
    ] {
        d.set_item(format!("{name}_mean"), ms.mean)?;
        d.set_item(format!("{name}_std"), ms.std)?;
    }
    Ok(d)
}

/// Run an experiment and write its files under `out`.
///
/// `kind` is one of `suite`, `noise-sweep`, `lambda-sweep`, `ood-test` or
/// `filter-curves`. Returns the aggregate rows (empty for `filter-curves`).
#[pyfunction]
#[pyo3(signature = (kind, out="out", **opts))]
fn run_experiment<'py>(
    py: Python<'py>,
    kind: &str,
    out: &str,
    opts: Option<&Bound<'py, PyDict>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut spec = spec_from_kwargs(opts)?;
    spec.out = PathBuf::from(out);
    if kind == "filter-curves" {
        py.detach(|| suites::run_filter_curves(&spec)).map_err(runtime_err)?;
        return Ok(Vec::new());
    }
    let report = py
        .detach(|| match kind {
            "suite" => Some(suites::run_suite(&spec)),
            "noise-sweep" => Some(suites::run_noise_sweep(&spec)),
            "lambda-sweep" => Some(suites::run_lambda_sweep(&spec)),
            "ood-test" => Some(suites::run_ood_test(&spec)),
            _ => None,
        })
        .ok_or_else(|| PyValueError::new_err(format!("unknown experiment {kind:?}")))?
        .map_err(runtime_err)?;
    report
        .aggregates
        .iter()
        .map(|(c, a)| aggregate_dict(py, c, a))
        .collect()
}

fn sample(t: (f64, f64, usize)) -> Sample {
    Sample {
        mean: t.0,
        std: t.1,
        n: t.2,
    }
}

/// Welch's t-test on `(mean, std, n)` summaries. Returns `(t, df, p)`.
#[pyfunction]
fn welch_t_test(a: (f64, f64, usize), b: (f64, f64, usize)) -> PyResult<(f64, f64, f64)> {
    let r = stats::welch_t_test(&sample(a), &sample(b)).map_err(value_err)?;
    Ok((r.t, r.df, r.p))
}

/// Equal-variance t-test on `(mean, std, n)` summaries. Returns `(t, df, p)`.
#[pyfunction]
fn pooled_t_test(a: (f64, f64, usize), b: (f64, f64, usize)) -> PyResult<(f64, f64, f64)> {
    let r = stats::pooled_t_test(&sample(a), &sample(b)).map_err(value_err)?;
    Ok((r.t, r.df, r.p))
}

/// `100 * (baseline - treated) / baseline`.
#[pyfunction]
fn reduction_percent(baseline: f64, treated: f64) -> PyResult<f64> {
    stats::reduction_percent(baseline, treated).map_err(value_err)
}

#[pymodule]
fn uard_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(filter_curves, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(pooled_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(reduction_percent, m)?)?;
    Ok(())
}
