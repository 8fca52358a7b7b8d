//! CSV layout of per-run series and aggregates, and reading them back.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use crate::agent::VariantSpec;
use crate::stats::{aggregate, EpisodeMetrics, MeanStd, RunSummary, VariantAggregate};

pub const EPISODE_HEADER: &str = "episode,true_return,observed_return,trap_visits,abstentions,goal_reached,mean_sigma_m,mean_sigma_h,epsilon";

/// Six decimals, with values that round to zero written unsigned.
pub fn fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

pub fn write_episodes<W: Write>(episodes: &[EpisodeMetrics], out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{EPISODE_HEADER}")?;
    for e in episodes {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.episode,
            fixed6(e.true_return),
            fixed6(e.observed_return),
            e.trap_visits,
            e.abstentions,
            u8::from(e.goal_reached),
            fixed6(e.mean_sigma_m),
            fixed6(e.mean_sigma_h),
            fixed6(e.epsilon)
        )?;
    }
    out.flush()
}

pub fn seed_file_name(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

pub fn write_run(dir: &Path, run: &RunSummary) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(seed_file_name(run.seed));
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_episodes(&run.episodes, file).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn read_episodes(path: &Path) -> anyhow::Result<Vec<EpisodeMetrics>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != EPISODE_HEADER {
        bail!("{}: unexpected header {:?}", path.display(), header.join(","));
    }
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        let f = |k: usize| -> anyhow::Result<f64> {
            rec[k]
                .parse::<f64>()
                .with_context(|| format!("{}: row {} column {}", path.display(), i + 2, k + 1))
        };
        let u = |k: usize| -> anyhow::Result<u32> {
            rec[k]
                .parse::<u32>()
                .with_context(|| format!("{}: row {} column {}", path.display(), i + 2, k + 1))
        };
        out.push(EpisodeMetrics {
            episode: u(0)?,
            true_return: f(1)?,
            observed_return: f(2)?,
            trap_visits: u(3)?,
            abstentions: u(4)?,
            goal_reached: u(5)? != 0,
            mean_sigma_m: f(6)?,
            mean_sigma_h: f(7)?,
            epsilon: f(8)?,
        });
    }
    Ok(out)
}

/// Runs of one variant under one condition, as stored on disk.
#[derive(Debug, Clone)]
pub struct CellRuns {
    /// Empty for single-condition suites.
    pub condition: String,
    pub variant: String,
    /// Sorted by seed.
    pub runs: Vec<RunSummary>,
    /// Directory of the seed files, relative to the suite root.
    pub rel_dir: PathBuf,
}

impl CellRuns {
    pub fn aggregate(&self) -> anyhow::Result<VariantAggregate> {
        aggregate(&self.runs).with_context(|| format!("aggregating {}", self.rel_dir.display()))
    }
}

fn seed_of(name: &str) -> Option<u64> {
    name.strip_prefix("seed_")?.strip_suffix(".csv")?.parse().ok()
}

/// Numeric-aware sort key for condition labels like `noise_0.10` or `lambda_12`.
pub fn condition_key(label: &str) -> (String, f64) {
    match label.rsplit_once('_') {
        Some((prefix, num)) => match num.parse::<f64>() {
            Ok(x) => (prefix.to_string(), x),
            Err(_) => (label.to_string(), f64::NEG_INFINITY),
        },
        None => (label.to_string(), f64::NEG_INFINITY),
    }
}

fn variant_rank(name: &str) -> usize {
    VariantSpec::PRESETS
        .iter()
        .position(|v| v.name == name)
        .unwrap_or(VariantSpec::PRESETS.len())
}

/// Every `<condition>/<variant>/seed_<k>.csv` (or `<variant>/seed_<k>.csv`)
/// under `root`, grouped and ordered deterministically.
pub fn load_suite(root: &Path) -> anyhow::Result<Vec<CellRuns>> {
    let mut cells = Vec::new();
    collect(root, root, &mut cells)?;
    if cells.is_empty() {
        bail!("no seed_*.csv files under {}", root.display());
    }
    cells.sort_by(|a: &CellRuns, b: &CellRuns| {
        let (pa, xa) = condition_key(&a.condition);
        let (pb, xb) = condition_key(&b.condition);
        pa.cmp(&pb)
            .then(xa.total_cmp(&xb))
            .then(variant_rank(&a.variant).cmp(&variant_rank(&b.variant)))
            .then(a.variant.cmp(&b.variant))
    });
    Ok(cells)
}

fn collect(root: &Path, dir: &Path, cells: &mut Vec<CellRuns>) -> anyhow::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    let mut seeds = Vec::new();
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect(root, &path, cells)?;
        } else if let Some(seed) = path.file_name().and_then(|n| n.to_str()).and_then(seed_of) {
            seeds.push((seed, path));
        }
    }
    if seeds.is_empty() {
        return Ok(());
    }
    seeds.sort_by_key(|(s, _)| *s);
    let rel = dir.strip_prefix(root).unwrap_or(dir).to_path_buf();
    let parts: Vec<String> = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    let Some((variant, condition)) = parts.split_last() else {
        bail!("seed files directly under {}; expected <variant>/seed_<k>.csv", root.display());
    };
    let runs = seeds
        .into_iter()
        .map(|(seed, p)| Ok(RunSummary::new(seed, variant.clone(), read_episodes(&p)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    cells.push(CellRuns {
        condition: condition.join("/"),
        variant: variant.clone(),
        runs,
        rel_dir: rel,
    });
    Ok(())
}

pub const AGGREGATE_HEADER: &str = "condition,variant,n_runs,true_return_mean,true_return_std,observed_return_mean,observed_return_std,trap_visits_mean,trap_visits_std,alignment_gap_mean,alignment_gap_std,goal_rate_mean,goal_rate_std,abstentions_mean,abstentions_std,mean_sigma_m_mean,mean_sigma_m_std,mean_sigma_h_mean,mean_sigma_h_std";

pub fn write_aggregate<W: Write>(cells: &[(String, VariantAggregate)], out: W) -> io::Result<()> {
    let mut out = BufWriter::new(out);
    writeln!(out, "{AGGREGATE_HEADER}")?;
    for (condition, a) in cells {
        let cols: [MeanStd; 8] = [
            a.true_return,
            a.observed_return,
            a.trap_visits,
            a.alignment_gap,
            a.goal_rate,
            a.abstentions,
            a.mean_sigma_m,
            a.mean_sigma_h,
        ];
        write!(out, "{},{},{}", condition, a.variant, a.n_runs)?;
        for c in cols {
            write!(out, ",{},{}", fixed6(c.mean), fixed6(c.std))?;
        }
        writeln!(out)?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(i: u32) -> EpisodeMetrics {
        EpisodeMetrics {
            episode: i,
            true_return: -1.25 * i as f64,
            observed_return: 3.0 + 1.0 / 3.0,
            trap_visits: i,
            abstentions: 2,
            goal_reached: i % 2 == 1,
            mean_sigma_m: 0.0123456789,
            mean_sigma_h: 1.0,
            epsilon: 0.995,
        }
    }

    #[test]
    fn negative_zero_is_unsigned() {
        assert_eq!(fixed6(-0.0), "0.000000");
        assert_eq!(fixed6(-4e-7), "0.000000");
        assert_eq!(fixed6(-6e-7), "-0.000001");
    }

    #[test]
    fn episode_csv_layout() {
        let mut buf = Vec::new();
        write_episodes(&[episode(0), episode(1)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], EPISODE_HEADER);
        assert_eq!(lines[1], "0,0.000000,3.333333,0,2,0,0.012346,1.000000,0.995000");
        assert_eq!(lines[2], "1,-1.250000,3.333333,1,2,1,0.012346,1.000000,0.995000");
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let eps: Vec<_> = (0..5).map(episode).collect();
        for seed in [3, 1, 2] {
            write_run(&dir.path().join("UARD-Full"), &RunSummary::new(seed, "UARD-Full", eps.clone())).unwrap();
        }
        write_run(&dir.path().join("Baseline"), &RunSummary::new(1, "Baseline", eps.clone())).unwrap();
        let cells = load_suite(dir.path()).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].variant, "Baseline");
        assert_eq!(cells[1].condition, "");
        let seeds: Vec<_> = cells[1].runs.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![1, 2, 3]);
        let back = &cells[1].runs[0].episodes;
        assert_eq!(back[1].trap_visits, 1);
        assert!(back[1].goal_reached);
        assert!((back[1].mean_sigma_m - 0.012346).abs() < 1e-12);
    }

    #[test]
    fn conditions_sort_numerically() {
        let mut labels = vec!["lambda_12", "lambda_2", "baseline", "lambda_1", "lambda_5"];
        labels.sort_by(|a, b| {
            let (pa, xa) = condition_key(a);
            let (pb, xb) = condition_key(b);
            pa.cmp(&pb).then(xa.total_cmp(&xb))
        });
        assert_eq!(labels, vec!["baseline", "lambda_1", "lambda_2", "lambda_5", "lambda_12"]);
    }

    #[test]
    fn rejects_foreign_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("seed_0.csv");
        fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(read_episodes(&p).is_err());
    }
}
