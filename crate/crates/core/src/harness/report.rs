//! Aggregate CSV and markdown summary, both derived from the seed CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};

use super::io::{self, CellRuns};
use crate::agent::VariantSpec;
use crate::stats::{
    self, mean, pooled_t_test, reduction_percent, welch_t_test, EpisodeMetrics, Sample, TTestResult,
    VariantAggregate,
};

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const REPORT_FILE: &str = "report.md";
pub const PERTURBATION_FILE: &str = "perturbation.csv";
pub const PERTURBATION_HEADER: &str = "variant,seed,perturbed_episode,window";

/// Everything the report states, in machine-readable form.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub cells: Vec<CellRuns>,
    pub aggregates: Vec<(String, VariantAggregate)>,
    pub markdown: String,
}

impl SuiteReport {
    pub fn find(&self, condition: &str, variant: &str) -> Option<&VariantAggregate> {
        self.aggregates
            .iter()
            .find(|(c, a)| c == condition && a.variant == variant)
            .map(|(_, a)| a)
    }

    pub fn cell(&self, condition: &str, variant: &str) -> Option<&CellRuns> {
        self.cells
            .iter()
            .find(|c| c.condition == condition && c.variant == variant)
    }
}

/// One row of the perturbation sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRecord {
    pub variant: String,
    pub seed: u64,
    /// `None` when the run ended before the trigger step.
    pub perturbed_episode: Option<u32>,
    pub window: u32,
}

pub fn write_perturbations(path: &Path, rows: &[PerturbationRecord]) -> anyhow::Result<()> {
    let mut text = format!("{PERTURBATION_HEADER}\n");
    for r in rows {
        let ep = r.perturbed_episode.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(text, "{},{},{},{}", r.variant, r.seed, ep, r.window);
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_perturbations(path: &Path) -> anyhow::Result<Vec<PerturbationRecord>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    if reader.headers()?.iter().collect::<Vec<_>>().join(",") != PERTURBATION_HEADER {
        bail!("{}: unexpected header", path.display());
    }
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(PerturbationRecord {
                variant: rec[0].to_string(),
                seed: rec[1].parse()?,
                perturbed_episode: if rec[2].is_empty() { None } else { Some(rec[2].parse()?) },
                window: rec[3].parse()?,
            })
        })
        .collect()
}

/// Sample variance of the true return over the `window` episodes starting
/// with the one in which the perturbation fired.
pub fn post_perturbation_variance(episodes: &[EpisodeMetrics], perturbed: u32, window: u32) -> Option<f64> {
    let start = perturbed as usize;
    let end = (start + window as usize).min(episodes.len());
    if end < start + 2 {
        return None;
    }
    let xs: Vec<f64> = episodes[start..end].iter().map(|e| e.true_return).collect();
    let sd = stats::sample_std(&xs);
    Some(sd * sd)
}

/// Per-variant mean post-perturbation variance, in preset order.
pub fn ood_variances(cells: &[CellRuns], records: &[PerturbationRecord]) -> Vec<(String, f64, usize)> {
    let mut by_variant: BTreeMap<usize, (String, Vec<f64>)> = BTreeMap::new();
    for cell in cells {
        for run in &cell.runs {
            let Some(rec) = records
                .iter()
                .find(|r| r.variant == cell.variant && r.seed == run.seed)
            else {
                continue;
            };
            let Some(p) = rec.perturbed_episode else { continue };
            if let Some(v) = post_perturbation_variance(&run.episodes, p, rec.window) {
                let rank = VariantSpec::PRESETS
                    .iter()
                    .position(|x| x.name == cell.variant)
                    .unwrap_or(usize::MAX);
                by_variant
                    .entry(rank)
                    .or_insert_with(|| (cell.variant.clone(), Vec::new()))
                    .1
                    .push(v);
            }
        }
    }
    by_variant
        .into_values()
        .map(|(name, vs)| (name, mean(&vs), vs.len()))
        .collect()
}

/// Least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn seed_trap_sample(cell: &CellRuns) -> anyhow::Result<Sample> {
    let xs: Vec<f64> = cell.runs.iter().map(|r| r.final_window.trap_visits.mean).collect();
    Ok(Sample::from_values(&xs)?)
}

pub fn trap_t_tests(treated: &CellRuns, baseline: &CellRuns) -> anyhow::Result<(TTestResult, TTestResult)> {
    let a = seed_trap_sample(treated)?;
    let b = seed_trap_sample(baseline)?;
    Ok((welch_t_test(&a, &b)?, pooled_t_test(&a, &b)?))
}

fn pm(x: stats::MeanStd) -> String {
    format!("{:.2} ± {:.2}", x.mean, x.std)
}

fn pct(r: Option<f64>) -> String {
    r.map(|x| format!("{x:.1}%")).unwrap_or_else(|| "n/a".into())
}

fn fmt_p(p: f64) -> String {
    if p == 0.0 {
        "0".into()
    } else if p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

fn reference<'a>(cells: &'a [CellRuns], condition: &str) -> Option<&'a CellRuns> {
    let base = VariantSpec::BASELINE.name;
    cells
        .iter()
        .find(|c| c.condition == condition && c.variant == base)
        .or_else(|| cells.iter().find(|c| c.condition == "baseline" && c.variant == base))
}

fn condition_title(condition: &str) -> String {
    if condition.is_empty() {
        "Results".into()
    } else {
        format!("Condition `{condition}`")
    }
}

/// Loads the seed CSVs under `root`, writes `aggregate.csv` and `report.md`.
pub fn summarize(root: &Path, title: &str) -> anyhow::Result<SuiteReport> {
    let cells = io::load_suite(root)?;
    let aggregates = cells
        .iter()
        .map(|c| Ok((c.condition.clone(), c.aggregate()?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let agg_path = root.join(AGGREGATE_FILE);
    io::write_aggregate(
        &aggregates,
        fs::File::create(&agg_path).with_context(|| format!("creating {}", agg_path.display()))?,
    )?;
    let ood = root.join(PERTURBATION_FILE);
    let perturbations = if ood.exists() {
        Some(read_perturbations(&ood)?)
    } else {
        None
    };
    let markdown = render(title, &cells, &aggregates, perturbations.as_deref())?;
    fs::write(root.join(REPORT_FILE), &markdown)
        .with_context(|| format!("writing {}", root.join(REPORT_FILE).display()))?;
    Ok(SuiteReport {
        cells,
        aggregates,
        markdown,
    })
}

fn render(
    title: &str,
    cells: &[CellRuns],
    aggregates: &[(String, VariantAggregate)],
    perturbations: Option<&[PerturbationRecord]>,
) -> anyhow::Result<String> {
    let mut md = String::new();
    let _ = writeln!(md, "# {title}\n");
    let _ = writeln!(
        md,
        "All figures are final-window means (last {} episodes of each run), then mean ± sample std across seeds. \
         Every number below is recomputed from the per-seed CSVs by `uard stats`.\n",
        stats::FINAL_WINDOW
    );

    let mut conditions: Vec<&str> = Vec::new();
    for c in cells {
        if !conditions.contains(&c.condition.as_str()) {
            conditions.push(&c.condition);
        }
    }

    for cond in &conditions {
        let _ = writeln!(md, "## {}\n", condition_title(cond));
        let _ = writeln!(
            md,
            "| Variant | Seeds | Trap visits | True return | Observed return | Alignment gap | Goal rate | Abstentions |"
        );
        let _ = writeln!(md, "|---|---|---|---|---|---|---|---|");
        let mut sources = Vec::new();
        for (i, (c, a)) in aggregates.iter().enumerate() {
            if c != cond {
                continue;
            }
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                a.variant,
                a.n_runs,
                pm(a.trap_visits),
                pm(a.true_return),
                pm(a.observed_return),
                pm(a.alignment_gap),
                pm(a.goal_rate),
                pm(a.abstentions)
            );
            sources.push(format!("`{}/seed_*.csv`", cells[i].rel_dir.display()));
        }
        let rows_note = if cond.is_empty() {
            String::new()
        } else {
            format!(" (rows with condition `{cond}`)")
        };
        let _ = writeln!(
            md,
            "\nSource: `{AGGREGATE_FILE}`{rows_note}, from {}.\n",
            sources.join(", ")
        );

        let Some(base) = reference(cells, cond) else { continue };
        let base_agg = base.aggregate()?;
        let rows: Vec<&CellRuns> = cells
            .iter()
            .filter(|c| c.condition == *cond && c.variant != base.variant)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(
            md,
            "Against {} (`{}/seed_*.csv`):\n",
            base.variant,
            base.rel_dir.display()
        );
        let _ = writeln!(
            md,
            "| Variant | Trap reduction | Gap reduction | Welch t | Welch df | Welch p | Pooled t | Pooled df | Pooled p |"
        );
        let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|");
        for cell in rows {
            let a = cell.aggregate()?;
            let trap = reduction_percent(base_agg.trap_visits.mean, a.trap_visits.mean).ok();
            let gap = reduction_percent(base_agg.alignment_gap.mean, a.alignment_gap.mean).ok();
            let tests = match trap_t_tests(cell, base) {
                Ok((w, p)) => format!(
                    "{:.2} | {:.1} | {} | {:.2} | {:.0} | {}",
                    w.t,
                    w.df,
                    fmt_p(w.p),
                    p.t,
                    p.df,
                    fmt_p(p.p)
                ),
                Err(_) => "n/a | n/a | n/a | n/a | n/a | n/a".to_string(),
            };
            let _ = writeln!(md, "| {} | {} | {} | {tests} |", cell.variant, pct(trap), pct(gap));
        }
        let _ = writeln!(
            md,
            "\nt-tests compare seed-level trap-visit means; source `{AGGREGATE_FILE}` and the seed CSVs above.\n"
        );
    }

    noise_section(&mut md, cells, aggregates);
    lambda_section(&mut md, aggregates);
    if let Some(records) = perturbations {
        ood_section(&mut md, cells, records);
    }
    Ok(md)
}

fn noise_level(condition: &str) -> Option<f64> {
    condition.strip_prefix("noise_")?.parse().ok()
}

fn noise_section(md: &mut String, cells: &[CellRuns], aggregates: &[(String, VariantAggregate)]) {
    let levels: Vec<f64> = {
        let mut v: Vec<f64> = cells.iter().filter_map(|c| noise_level(&c.condition)).collect();
        v.dedup();
        v
    };
    if levels.len() < 2 {
        return;
    }
    let series = |variant: &str| -> Vec<f64> {
        levels
            .iter()
            .filter_map(|&l| {
                aggregates
                    .iter()
                    .find(|(c, a)| noise_level(c) == Some(l) && a.variant == variant)
                    .map(|(_, a)| a.trap_visits.mean)
            })
            .collect()
    };
    let base = series(VariantSpec::BASELINE.name);
    let full = series(VariantSpec::UARD_FULL.name);
    if base.len() != levels.len() || full.len() != levels.len() {
        return;
    }
    let _ = writeln!(md, "## Noise sweep\n");
    let _ = writeln!(md, "| Noise level | Baseline trap visits | UARD-Full trap visits | Reduction |");
    let _ = writeln!(md, "|---|---|---|---|");
    for (i, l) in levels.iter().enumerate() {
        let _ = writeln!(
            md,
            "| {:.2} | {:.2} | {:.2} | {} |",
            l,
            base[i],
            full[i],
            pct(reduction_percent(base[i], full[i]).ok())
        );
    }
    let sb = slope(&levels, &base);
    let sf = slope(&levels, &full);
    let _ = writeln!(
        md,
        "\nLeast-squares slope of trap visits against noise level: Baseline {sb:.3}, UARD-Full {sf:.3}, ratio {}.",
        if sb == 0.0 { "n/a".to_string() } else { format!("{:.3}", sf / sb) }
    );
    let _ = writeln!(md, "\nSource: `{AGGREGATE_FILE}` (rows `noise_*`).\n");
}

fn lambda_of(condition: &str) -> Option<f64> {
    condition.strip_prefix("lambda_")?.parse().ok()
}

fn lambda_section(md: &mut String, aggregates: &[(String, VariantAggregate)]) {
    let Some(base) = aggregates
        .iter()
        .find(|(c, a)| c == "baseline" && a.variant == VariantSpec::BASELINE.name)
        .map(|(_, a)| a)
    else {
        return;
    };
    let rows: Vec<(f64, &VariantAggregate)> = aggregates
        .iter()
        .filter_map(|(c, a)| lambda_of(c).map(|l| (l, a)))
        .collect();
    if rows.is_empty() {
        return;
    }
    let _ = writeln!(md, "## Lambda sweep\n");
    let _ = writeln!(md, "| lambda | Variant | Trap visits | Reduction vs Baseline | Goal rate |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    for (l, a) in rows {
        let _ = writeln!(
            md,
            "| {l} | {} | {} | {} | {} |",
            a.variant,
            pm(a.trap_visits),
            pct(reduction_percent(base.trap_visits.mean, a.trap_visits.mean).ok()),
            pm(a.goal_rate)
        );
    }
    let _ = writeln!(
        md,
        "\nBaseline reference: {} trap visits. Source: `{AGGREGATE_FILE}` (rows `baseline`, `lambda_*`).\n",
        pm(base.trap_visits)
    );
}

fn ood_section(md: &mut String, cells: &[CellRuns], records: &[PerturbationRecord]) {
    let vars = ood_variances(cells, records);
    let window = records.first().map(|r| r.window).unwrap_or(0);
    let _ = writeln!(md, "## Response to the perturbation\n");
    let _ = writeln!(
        md,
        "Variance of per-episode true return over the {window} episodes starting at the perturbed one, averaged over seeds.\n"
    );
    let _ = writeln!(md, "| Variant | Runs | Mean variance |");
    let _ = writeln!(md, "|---|---|---|");
    for (v, x, n) in &vars {
        let _ = writeln!(md, "| {v} | {n} | {x:.3} |");
    }
    let find = |name: &str| vars.iter().find(|(v, _, _)| v == name).map(|(_, x, _)| *x);
    if let (Some(f), Some(b)) = (find(VariantSpec::UARD_FULL.name), find(VariantSpec::BASELINE.name)) {
        if b > 0.0 {
            let _ = writeln!(md, "\nVariance ratio UARD-Full / Baseline: {:.3}.", f / b);
        }
    }
    let _ = writeln!(md, "\nSource: `{PERTURBATION_FILE}` and the seed CSVs.\n");
}
