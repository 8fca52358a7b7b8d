use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use uard::harness::suites;
use uard::harness::{ExperimentSpec, Origin, SuiteReport};

#[derive(Parser)]
#[command(name = "uard", version, about = "Uncertainty-aware reward discounting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the variant x seed matrix and write CSVs plus a report.
    Suite(Common),
    /// Baseline and UARD-Full across supervisory noise levels.
    NoiseSweep(Common),
    /// UARD-Full across skepticism levels, against one Baseline.
    LambdaSweep(Common),
    /// Write filter-shape curves as CSV.
    FilterCurves(Common),
    /// Shift the agent once mid-training and compare the response.
    OodTest(Common),
    /// Recompute aggregate.csv and report.md from existing seed CSVs.
    Stats(StatsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Score,
    Reward,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_name = "6|8|10")]
    grid: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    /// A variant name, a comma list, or `all`.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    episodes: Option<String>,
    /// Supervisory noise as a fraction of the goal reward.
    #[arg(long)]
    noise: Option<String>,
    /// Trap observed reward 8 instead of 4.
    #[arg(long)]
    hard_trap: bool,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Defer when every action is too risky.
    #[arg(long)]
    abstain: bool,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    base_seed: Option<String>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct StatsArgs {
    /// Suite directories; defaults to every suite under --out.
    dirs: Vec<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(p) => ExperimentSpec::from_config_file(p)?,
            None => ExperimentSpec::default(),
        };
        let mut flags: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: &Option<String>| {
            if let Some(v) = v {
                flags.push((k.to_string(), v.clone()));
            }
        };
        push("grid", &self.grid);
        push("lambda", &self.lambda);
        push("alpha", &self.alpha);
        push("beta", &self.beta);
        push("variant", &self.variant);
        push("seeds", &self.seeds);
        push("episodes", &self.episodes);
        push("noise", &self.noise);
        push("jobs", &self.jobs);
        push("base_seed", &self.base_seed);
        if self.hard_trap {
            flags.push(("hard_trap".into(), "true".into()));
        }
        if self.abstain {
            flags.push(("abstain".into(), "true".into()));
        }
        if let Some(m) = self.mode {
            let m = match m {
                Mode::Score => "score",
                Mode::Reward => "reward",
            };
            flags.push(("mode".into(), m.into()));
        }
        if let Some(o) = &self.out {
            flags.push(("out".into(), o.display().to_string()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            flags.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in flags {
            spec.set(&k, &v, Origin::Flag)?;
        }
        spec.filter.validate()?;
        Ok(spec)
    }
}

fn print_report(report: &SuiteReport, root: PathBuf) {
    let runs: usize = report.cells.iter().map(|c| c.runs.len()).sum();
    println!("{runs} runs summarized in {}", root.display());
    for (condition, a) in &report.aggregates {
        let label = if condition.is_empty() {
            a.variant.clone()
        } else {
            format!("{condition}/{}", a.variant)
        };
        println!(
            "  {label:<28} trap visits {:>7.3} ± {:<6.3} true return {:>8.3} goal rate {:.2}",
            a.trap_visits.mean, a.trap_visits.std, a.true_return.mean, a.goal_rate.mean
        );
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let start = Instant::now();
    match cli.command {
        Command::Stats(args) => {
            let dirs = if args.dirs.is_empty() {
                [suites::SUITE, suites::NOISE_SWEEP, suites::LAMBDA_SWEEP, suites::OOD_TEST]
                    .iter()
                    .map(|s| args.out.join(s))
                    .filter(|p| p.is_dir())
                    .collect()
            } else {
                args.dirs
            };
            if dirs.is_empty() {
                anyhow::bail!("no suite directories found under {}", args.out.display());
            }
            for d in dirs {
                let report = suites::recompute(&d)?;
                print_report(&report, d);
            }
        }
        Command::FilterCurves(common) => {
            let spec = common.resolve()?;
            let path = suites::run_filter_curves(&spec)?;
            println!("wrote {}", path.display());
        }
        Command::Suite(common) => run_suite(common, suites::run_suite, suites::SUITE, start)?,
        Command::NoiseSweep(common) => {
            run_suite(common, suites::run_noise_sweep, suites::NOISE_SWEEP, start)?
        }
        Command::LambdaSweep(common) => {
            run_suite(common, suites::run_lambda_sweep, suites::LAMBDA_SWEEP, start)?
        }
        Command::OodTest(common) => run_suite(common, suites::run_ood_test, suites::OOD_TEST, start)?,
    }
    Ok(())
}

fn run_suite(
    common: Common,
    runner: fn(&ExperimentSpec) -> anyhow::Result<SuiteReport>,
    name: &str,
    start: Instant,
) -> anyhow::Result<()> {
    let spec = common.resolve()?;
    for w in &spec.warnings {
        eprintln!("warning: {w}");
    }
    let report = runner(&spec)?;
    print_report(&report, spec.out.join(name));
    eprintln!("done in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
