//! Experiment configuration: flat `key = value` files and CLI overrides.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::agent::{DiscountMode, TieBreak, TrainingConfig, VariantSpec};
use crate::env::{make_preset, GridPreset, PerturbationSpec};
use crate::filter::{FilterParams, FilterVariant, LAMBDA_WARN_ABOVE};
use crate::supervision::NoiseSpec;

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Flag => f.write_str("command line"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { key: String, origin: Origin },
    #[error("{origin}: invalid value {value:?} for `{key}`, expected {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
        origin: Origin,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub grid: GridPreset,
    pub variants: Vec<VariantSpec>,
    pub n_seeds: u32,
    pub n_episodes: u32,
    pub base_seed: u64,
    pub filter: FilterParams,
    /// Levels for the lambda sweep.
    pub lambdas: Vec<f64>,
    /// Supervisory noise for single-condition suites.
    pub noise: f64,
    /// Levels for the noise sweep.
    pub noise_levels: Vec<f64>,
    pub mode: DiscountMode,
    pub tie_break: TieBreak,
    pub hard_trap: bool,
    pub abstain: bool,
    pub perturbation: PerturbationSpec,
    /// Episodes after the perturbation used by the OOD test.
    pub ood_window: u32,
    pub jobs: usize,
    pub out: PathBuf,
    /// Non-fatal remarks collected while parsing.
    pub warnings: Vec<String>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            grid: GridPreset::G6,
            variants: VariantSpec::PRESETS.to_vec(),
            n_seeds: 10,
            n_episodes: 500,
            base_seed: 0,
            filter: FilterParams::default(),
            lambdas: vec![1.0, 2.0, 5.0],
            noise: 0.0,
            noise_levels: vec![0.0, 0.1, 0.2, 0.3],
            mode: DiscountMode::ScoreFilter,
            tie_break: TieBreak::LowestActionIndex,
            hard_trap: false,
            abstain: false,
            perturbation: PerturbationSpec::default(),
            ood_window: 50,
            jobs: 0,
            out: PathBuf::from("out"),
            warnings: Vec::new(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "grid",
    "variant",
    "seeds",
    "episodes",
    "base_seed",
    "lambda",
    "alpha",
    "beta",
    "filter",
    "adaptive",
    "lambda_min",
    "lambda_max",
    "abstain_threshold",
    "lambdas",
    "noise",
    "noise_levels",
    "mode",
    "tie_break",
    "hard_trap",
    "abstain",
    "perturb_step",
    "perturb_magnitude",
    "ood_window",
    "jobs",
    "out",
];

fn parse<T: FromStr>(
    key: &str,
    value: &str,
    expected: &'static str,
    origin: &Origin,
) -> Result<T, ConfigError> {
    value.parse().map_err(|_| bad(key, value, expected, origin))
}

fn bad(key: &str, value: &str, expected: &'static str, origin: &Origin) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected,
        origin: origin.clone(),
    }
}

fn parse_bool(key: &str, value: &str, origin: &Origin) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, value, "a boolean (true/false)", origin)),
    }
}

fn parse_list(
    key: &str,
    value: &str,
    expected: &'static str,
    origin: &Origin,
    ok: impl Fn(f64) -> bool,
) -> Result<Vec<f64>, ConfigError> {
    let xs = value
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| bad(key, value, expected, origin))?;
    if xs.is_empty() || !xs.iter().all(|&x| ok(x)) {
        return Err(bad(key, value, expected, origin));
    }
    Ok(xs)
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

fn non_negative(x: f64) -> bool {
    x >= 0.0 && x.is_finite()
}

impl ExperimentSpec {
    /// Parses a config file body; every key not set keeps its default.
    pub fn from_config_text(text: &str) -> Result<Self, ConfigError> {
        let mut spec = ExperimentSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let value = value.trim().trim_matches('"');
            spec.set(key.trim(), value, Origin::Line(line))?;
        }
        Ok(spec)
    }

    pub fn from_config_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        ExperimentSpec::from_config_text(&text)
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str, origin: Origin) -> Result<(), ConfigError> {
        let o = &origin;
        match key {
            "grid" => {
                let n: usize = parse(key, value, "one of 6, 8, 10", o)?;
                self.grid = GridPreset::from_size(n).ok_or_else(|| bad(key, value, "one of 6, 8, 10", o))?;
            }
            "variant" => {
                const EXPECTED: &str =
                    "all or a comma list of Baseline, AblationI, AblationII, UARD-lite, HumanOnly, UARD-Full";
                self.variants = if value.eq_ignore_ascii_case("all") {
                    VariantSpec::PRESETS.to_vec()
                } else {
                    value
                        .split(',')
                        .map(|v| VariantSpec::from_name(v.trim()))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad(key, value, EXPECTED, o))?
                };
            }
            "seeds" => {
                self.n_seeds = parse(key, value, "an integer >= 1", o)?;
                if self.n_seeds == 0 {
                    return Err(bad(key, value, "an integer >= 1", o));
                }
            }
            "episodes" => self.n_episodes = parse(key, value, "a non-negative integer", o)?,
            "base_seed" => self.base_seed = parse(key, value, "an unsigned 64-bit integer", o)?,
            "lambda" => {
                let l: f64 = parse(key, value, "a finite number >= 0", o)?;
                if !non_negative(l) {
                    return Err(bad(key, value, "a finite number >= 0", o));
                }
                if l > LAMBDA_WARN_ABOVE {
                    self.warnings.push(format!(
                        "lambda = {l} is above {LAMBDA_WARN_ABOVE}; expect over-conservative behavior and reduced exploration"
                    ));
                }
                self.filter.lambda = l;
            }
            "alpha" | "beta" | "abstain_threshold" => {
                let expected = if key == "abstain_threshold" {
                    "a finite number >= 0"
                } else {
                    "a number in [0, 1]"
                };
                let x: f64 = parse(key, value, expected, o)?;
                let ok = if key == "abstain_threshold" { non_negative(x) } else { unit(x) };
                if !ok {
                    return Err(bad(key, value, expected, o));
                }
                match key {
                    "alpha" => self.filter.alpha = x,
                    "beta" => self.filter.beta = x,
                    _ => self.filter.abstain_threshold = x,
                }
            }
            "filter" => {
                self.filter.variant = value
                    .parse::<FilterVariant>()
                    .map_err(|_| bad(key, value, "reciprocal, linear or exponential", o))?;
            }
            "adaptive" => self.filter.adaptive = parse_bool(key, value, o)?,
            "lambda_min" | "lambda_max" => {
                let x: f64 = parse(key, value, "a finite number >= 0", o)?;
                if !non_negative(x) {
                    return Err(bad(key, value, "a finite number >= 0", o));
                }
                if key == "lambda_min" {
                    self.filter.lambda_min = x;
                } else {
                    self.filter.lambda_max = x;
                }
            }
            "lambdas" => {
                self.lambdas = parse_list(key, value, "a comma list of numbers >= 0", o, non_negative)?;
                if let Some(l) = self.lambdas.iter().copied().find(|&l| l > LAMBDA_WARN_ABOVE) {
                    self.warnings.push(format!(
                        "lambda = {l} in the sweep is above {LAMBDA_WARN_ABOVE}; expect over-conservative behavior"
                    ));
                }
            }
            "noise" => {
                self.noise = parse(key, value, "a number in [0, 1]", o)?;
                if !unit(self.noise) {
                    return Err(bad(key, value, "a number in [0, 1]", o));
                }
            }
            "noise_levels" => {
                self.noise_levels = parse_list(key, value, "a comma list of numbers in [0, 1]", o, unit)?;
            }
            "mode" => {
                self.mode = value
                    .parse()
                    .map_err(|_| bad(key, value, "score or reward", o))?;
            }
            "tie_break" => {
                self.tie_break = match value.to_ascii_lowercase().as_str() {
                    "lowest" => TieBreak::LowestActionIndex,
                    "random" => TieBreak::RandomUniform,
                    _ => return Err(bad(key, value, "lowest or random", o)),
                };
            }
            "hard_trap" => self.hard_trap = parse_bool(key, value, o)?,
            "abstain" => self.abstain = parse_bool(key, value, o)?,
            "perturb_step" => {
                self.perturbation.trigger_step = parse(key, value, "a non-negative integer", o)?
            }
            "perturb_magnitude" => {
                self.perturbation.magnitude = parse(key, value, "a non-negative integer", o)?
            }
            "ood_window" => {
                self.ood_window = parse(key, value, "an integer >= 2", o)?;
                if self.ood_window < 2 {
                    return Err(bad(key, value, "an integer >= 2", o));
                }
            }
            "jobs" => self.jobs = parse(key, value, "a non-negative integer (0 = all cores)", o)?,
            "out" => {
                if value.is_empty() {
                    return Err(bad(key, value, "a directory path", o));
                }
                self.out = PathBuf::from(value);
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    origin,
                })
            }
        }
        Ok(())
    }

    /// Training configuration for one variant with this spec's settings.
    pub fn training_config(&self, variant: VariantSpec) -> TrainingConfig {
        let mut env = make_preset(self.grid);
        if self.hard_trap {
            env = env.with_hard_trap();
        }
        let mut cfg = TrainingConfig::new(env, variant);
        cfg.filter = self.filter;
        cfg.mode = self.mode;
        cfg.policy.tie_break = self.tie_break;
        cfg.policy.abstain = self.abstain;
        cfg.n_episodes = self.n_episodes;
        cfg.noise = NoiseSpec::from_level(self.noise, cfg.env.goal_reward)
            .expect("noise level validated on parse");
        cfg
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..u64::from(self.n_seeds)).map(move |i| self.base_seed.wrapping_add(i))
    }
}
