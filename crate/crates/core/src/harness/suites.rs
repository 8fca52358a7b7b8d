//! The reproduction suites. Each one fans runs out over a worker pool,
//! writes every run's CSV as soon as it finishes, then summarizes from disk.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;

use super::config::ExperimentSpec;
use super::io;
use super::report::{self, PerturbationRecord, SuiteReport};
use crate::agent::{train, TrainingConfig, VariantSpec};
use crate::filter::{export_filter_curves, sigma_grid, write_curves_csv};
use crate::supervision::NoiseSpec;

/// One training run and where its CSV goes, relative to the suite root.
#[derive(Debug, Clone)]
pub struct Job {
    pub rel_dir: PathBuf,
    pub cfg: TrainingConfig,
    pub seed: u64,
}

/// What a finished job leaves behind besides its CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct JobOutcome {
    pub variant: String,
    pub seed: u64,
    pub perturbed_episode: Option<u32>,
}

/// Runs `jobs` on up to `threads` workers (0 = one per core). Outcomes come
/// back in job order whatever the completion order.
pub fn run_jobs(root: &Path, jobs: &[Job], threads: usize) -> anyhow::Result<Vec<JobOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building worker pool")?;
    pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let who = || format!("variant {} seed {}", job.cfg.variant.name, job.seed);
                let result = panic::catch_unwind(AssertUnwindSafe(|| train(&job.cfg, job.seed)))
                    .map_err(|p| {
                        let msg = p
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_default();
                        anyhow!("run panicked ({}): {msg}", who())
                    })?
                    .with_context(who)?;
                io::write_run(&root.join(&job.rel_dir), &result.summary)?;
                Ok(JobOutcome {
                    variant: job.cfg.variant.name.to_string(),
                    seed: job.seed,
                    perturbed_episode: result.state.perturbed_episode,
                })
            })
            .collect()
    })
}

/// Fresh output directory for a suite. Only ever called on `<out>/<suite>`.
fn prepare(root: &Path) -> anyhow::Result<()> {
    if root.exists() {
        fs::remove_dir_all(root).with_context(|| format!("clearing {}", root.display()))?;
    }
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))
}

fn variant_jobs(spec: &ExperimentSpec, condition: &str, cfg: &TrainingConfig) -> Vec<Job> {
    let rel = if condition.is_empty() {
        PathBuf::from(cfg.variant.name)
    } else {
        Path::new(condition).join(cfg.variant.name)
    };
    spec.seeds()
        .map(|seed| Job {
            rel_dir: rel.clone(),
            cfg: cfg.clone(),
            seed,
        })
        .collect()
}

pub const SUITE: &str = "suite";
pub const NOISE_SWEEP: &str = "noise-sweep";
pub const LAMBDA_SWEEP: &str = "lambda-sweep";
pub const FILTER_CURVES: &str = "filter-curves";
pub const OOD_TEST: &str = "ood-test";

/// Variant x seed matrix on one grid.
pub fn run_suite(spec: &ExperimentSpec) -> anyhow::Result<SuiteReport> {
    let root = spec.out.join(SUITE);
    prepare(&root)?;
    let jobs: Vec<Job> = spec
        .variants
        .iter()
        .flat_map(|&v| variant_jobs(spec, "", &spec.training_config(v)))
        .collect();
    run_jobs(&root, &jobs, spec.jobs)?;
    recompute(&root)
}

pub fn noise_label(level: f64) -> String {
    format!("noise_{level:.2}")
}

/// Baseline and UARD-Full at each supervisory noise level.
pub fn run_noise_sweep(spec: &ExperimentSpec) -> anyhow::Result<SuiteReport> {
    let root = spec.out.join(NOISE_SWEEP);
    prepare(&root)?;
    let mut jobs = Vec::new();
    for &level in &spec.noise_levels {
        for v in [VariantSpec::BASELINE, VariantSpec::UARD_FULL] {
            let mut cfg = spec.training_config(v);
            cfg.noise = NoiseSpec::from_level(level, cfg.env.goal_reward)?;
            jobs.extend(variant_jobs(spec, &noise_label(level), &cfg));
        }
    }
    run_jobs(&root, &jobs, spec.jobs)?;
    recompute(&root)
}

pub fn lambda_label(lambda: f64) -> String {
    format!("lambda_{lambda}")
}

/// UARD-Full at each lambda, plus one Baseline reference.
pub fn run_lambda_sweep(spec: &ExperimentSpec) -> anyhow::Result<SuiteReport> {
    let root = spec.out.join(LAMBDA_SWEEP);
    prepare(&root)?;
    let mut jobs = variant_jobs(spec, "baseline", &spec.training_config(VariantSpec::BASELINE));
    for &lambda in &spec.lambdas {
        let mut cfg = spec.training_config(VariantSpec::UARD_FULL);
        cfg.filter.lambda = lambda;
        if cfg.filter.adaptive {
            cfg.filter.lambda_max = cfg.filter.lambda_max.max(lambda);
        }
        jobs.extend(variant_jobs(spec, &lambda_label(lambda), &cfg));
    }
    run_jobs(&root, &jobs, spec.jobs)?;
    recompute(&root)
}

pub const CURVE_FILE: &str = "curves.csv";

/// Filter shapes over `mu in {1, 5, 10}`, `lambda in {1, 2, 5}`, `sigma in [0, 5]`.
pub fn run_filter_curves(spec: &ExperimentSpec) -> anyhow::Result<PathBuf> {
    let root = spec.out.join(FILTER_CURVES);
    prepare(&root)?;
    let rows = export_filter_curves(&[1.0, 5.0, 10.0], &[1.0, 2.0, 5.0], &sigma_grid(5.0, 0.05));
    let path = root.join(CURVE_FILE);
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_curves_csv(&rows, std::io::BufWriter::new(file))?;
    Ok(path)
}

/// Baseline and UARD-Full with a one-off position shift mid-training.
pub fn run_ood_test(spec: &ExperimentSpec) -> anyhow::Result<SuiteReport> {
    let root = spec.out.join(OOD_TEST);
    prepare(&root)?;
    let mut jobs = Vec::new();
    for v in [VariantSpec::BASELINE, VariantSpec::UARD_FULL] {
        let mut cfg = spec.training_config(v);
        cfg.perturbation = spec.perturbation;
        cfg.perturbation.enabled = true;
        jobs.extend(variant_jobs(spec, "", &cfg));
    }
    let outcomes = run_jobs(&root, &jobs, spec.jobs)?;
    let records: Vec<PerturbationRecord> = outcomes
        .into_iter()
        .map(|o| PerturbationRecord {
            variant: o.variant,
            seed: o.seed,
            perturbed_episode: o.perturbed_episode,
            window: spec.ood_window,
        })
        .collect();
    report::write_perturbations(&root.join(report::PERTURBATION_FILE), &records)?;
    recompute(&root)
}

/// Recomputes `aggregate.csv` and `report.md` of an existing suite directory.
pub fn recompute(dir: &Path) -> anyhow::Result<SuiteReport> {
    let title = match dir.file_name().and_then(|n| n.to_str()) {
        Some(SUITE) => "Variant comparison",
        Some(NOISE_SWEEP) => "Supervisory noise sweep",
        Some(LAMBDA_SWEEP) => "Skepticism (lambda) sweep",
        Some(OOD_TEST) => "Out-of-distribution perturbation",
        _ => "Experiment summary",
    };
    report::summarize(dir, title)
}
