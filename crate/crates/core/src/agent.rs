//! Epsilon-greedy control over filtered scores, and the training loop.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::ensemble::{self, QEnsemble};
use crate::env::{self, Action, GridState, GridWorldConfig, PerturbationSpec};
use crate::error::{Error, Result};
use crate::filter::{self, FilterParams, SigmaBaseline};
use crate::rng::{self, SimRng};
use crate::stats::{EpisodeMetrics, RunSummary};
use crate::supervision::{self, AnnotatorProfile, NoiseSpec, SigmaHStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    LowestActionIndex,
    RandomUniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub epsilon_start: f64,
    /// Multiplicative decay per episode.
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub tie_break: TieBreak,
    /// Defer when every action's risk exceeds the filter threshold.
    pub abstain: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            epsilon_start: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.05,
            tie_break: TieBreak::LowestActionIndex,
            abstain: false,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.epsilon_min
            && self.epsilon_min <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: format!(
                    "need 0 <= epsilon_min <= epsilon_start <= 1, got {} and {}",
                    self.epsilon_min, self.epsilon_start
                ),
            });
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "epsilon_decay",
                reason: format!("must lie in (0, 1], got {}", self.epsilon_decay),
            });
        }
        Ok(())
    }

    /// `max(epsilon_min, epsilon_start * epsilon_decay^episode)`
    pub fn epsilon(&self, episode: u32) -> f64 {
        let e = i32::try_from(episode).unwrap_or(i32::MAX);
        (self.epsilon_start * self.epsilon_decay.powi(e)).max(self.epsilon_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VariantSpec {
    pub name: &'static str,
    pub use_sigma_m: bool,
    pub use_sigma_h: bool,
    pub use_discounting: bool,
}

impl VariantSpec {
    pub const BASELINE: VariantSpec = VariantSpec::new("Baseline", false, false, false);
    pub const ABLATION_I: VariantSpec = VariantSpec::new("AblationI", true, false, false);
    pub const ABLATION_II: VariantSpec = VariantSpec::new("AblationII", true, true, false);
    pub const UARD_LITE: VariantSpec = VariantSpec::new("UARD-lite", true, false, true);
    pub const HUMAN_ONLY: VariantSpec = VariantSpec::new("HumanOnly", false, true, true);
    pub const UARD_FULL: VariantSpec = VariantSpec::new("UARD-Full", true, true, true);

    pub const PRESETS: [VariantSpec; 6] = [
        VariantSpec::BASELINE,
        VariantSpec::ABLATION_I,
        VariantSpec::ABLATION_II,
        VariantSpec::UARD_LITE,
        VariantSpec::HUMAN_ONLY,
        VariantSpec::UARD_FULL,
    ];

    pub const fn new(
        name: &'static str,
        use_sigma_m: bool,
        use_sigma_h: bool,
        use_discounting: bool,
    ) -> Self {
        VariantSpec {
            name,
            use_sigma_m,
            use_sigma_h,
            use_discounting,
        }
    }

    /// Case-insensitive preset lookup.
    pub fn from_name(name: &str) -> Option<VariantSpec> {
        VariantSpec::PRESETS
            .into_iter()
            .find(|v| v.name.eq_ignore_ascii_case(name))
    }

    /// Filter as this variant applies it: disabled sources are zeroed and
    /// without discounting `lambda` is forced to zero.
    pub fn effective_filter(&self, filter: &FilterParams) -> FilterParams {
        FilterParams {
            lambda: if self.use_discounting { filter.lambda } else { 0.0 },
            adaptive: filter.adaptive && self.use_discounting,
            ..*filter
        }
    }

    pub fn mask(&self, sigma_m: f64, sigma_h: f64) -> (f64, f64) {
        (
            if self.use_sigma_m { sigma_m } else { 0.0 },
            if self.use_sigma_h { sigma_h } else { 0.0 },
        )
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscountMode {
    /// Filter at action selection only; heads learn the annotated reward.
    #[default]
    ScoreFilter,
    /// Heads learn the annotated reward scaled by `1 / (1 + risk)`.
    RewardFilter,
}

impl FromStr for DiscountMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "score" => Ok(DiscountMode::ScoreFilter),
            "reward" => Ok(DiscountMode::RewardFilter),
            _ => Err(format!("unknown mode {s:?}, expected score or reward")),
        }
    }
}

impl fmt::Display for DiscountMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscountMode::ScoreFilter => "score",
            DiscountMode::RewardFilter => "reward",
        })
    }
}

/// Which signal feeds the Q update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardSource {
    #[default]
    AnnotatorMean,
    /// The environment's observed reward, bypassing the annotators.
    Observed,
}

/// Outcome of one action choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    /// `None` only when abstaining in a cell where no move is clamped.
    pub action: Option<Action>,
    pub abstained: bool,
    /// The action the greedy rule preferred (the random one when exploring).
    pub preferred: Action,
}

/// Weighted, masked uncertainty of each action in state `s`.
fn action_inputs(
    ensemble: &QEnsemble,
    sigma_h: &SigmaHStore,
    variant: &VariantSpec,
    s: usize,
) -> [(f64, f64, f64); Action::COUNT] {
    let mut out = [(0.0, 0.0, 0.0); Action::COUNT];
    for (a, slot) in out.iter_mut().enumerate() {
        let e = ensemble.estimate(s, a);
        let (sm, sh) = variant.mask(e.sigma_m, sigma_h.get(s, a));
        *slot = (e.mu, sm, sh);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn select_action(
    env: &GridWorldConfig,
    ensemble: &QEnsemble,
    sigma_h: &SigmaHStore,
    filter: &FilterParams,
    variant: &VariantSpec,
    policy: &PolicyConfig,
    s: usize,
    epsilon: f64,
    rng: &mut SimRng,
) -> Selection {
    if rng.random::<f64>() < epsilon {
        let a = Action::ALL[rng.random_range(0..Action::COUNT)];
        return Selection {
            action: Some(a),
            abstained: false,
            preferred: a,
        };
    }
    let params = variant.effective_filter(filter);
    let mut scores = [0.0; Action::COUNT];
    let mut all_risky = true;
    for (a, (mu, sm, sh)) in action_inputs(ensemble, sigma_h, variant, s).into_iter().enumerate() {
        let sc = filter::score(&params, mu, sm, sh).expect("uncertainties are non-negative");
        scores[a] = sc.j;
        all_risky &= sc.abstain;
    }
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let preferred = match policy.tie_break {
        TieBreak::LowestActionIndex => scores.iter().position(|&j| j == best).unwrap_or(0),
        TieBreak::RandomUniform => {
            let ties: Vec<usize> = (0..Action::COUNT).filter(|&a| scores[a] == best).collect();
            if ties.len() == 1 {
                ties[0]
            } else {
                ties[rng.random_range(0..ties.len())]
            }
        }
    };
    let preferred = Action::ALL[preferred];
    if policy.abstain && all_risky {
        let cell = env.cell_of(s);
        return Selection {
            action: Action::ALL.into_iter().find(|&a| env.clamps(cell, a)),
            abstained: true,
            preferred,
        };
    }
    Selection {
        action: Some(preferred),
        abstained: false,
        preferred,
    }
}

/// Everything one training run needs besides its seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub env: GridWorldConfig,
    pub variant: VariantSpec,
    pub filter: FilterParams,
    pub mode: DiscountMode,
    pub policy: PolicyConfig,
    pub annotators: Vec<AnnotatorProfile>,
    pub noise: NoiseSpec,
    pub perturbation: PerturbationSpec,
    pub reward_source: RewardSource,
    pub n_episodes: u32,
    pub n_heads: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub init_scale: f64,
    pub sigma_h_tau: f64,
    /// Keys the random streams. Defaults to the variant name so that
    /// variants sharing a seed still draw independently.
    pub stream_key: String,
}

pub const DEFAULT_EPISODES: u32 = 500;

impl TrainingConfig {
    pub fn new(env: GridWorldConfig, variant: VariantSpec) -> Self {
        TrainingConfig {
            env,
            variant,
            filter: FilterParams::default(),
            mode: DiscountMode::default(),
            policy: PolicyConfig::default(),
            annotators: supervision::default_profiles(),
            noise: NoiseSpec::none(),
            perturbation: PerturbationSpec::default(),
            reward_source: RewardSource::default(),
            n_episodes: DEFAULT_EPISODES,
            n_heads: ensemble::DEFAULT_HEADS,
            learning_rate: ensemble::DEFAULT_LEARNING_RATE,
            discount: ensemble::DEFAULT_DISCOUNT,
            init_scale: ensemble::DEFAULT_INIT_SCALE,
            sigma_h_tau: supervision::DEFAULT_SIGMA_H_TAU,
            stream_key: variant.name.to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.filter.validate()?;
        self.policy.validate()?;
        if self.annotators.len() < 2 {
            return Err(Error::TooFewAnnotators(self.annotators.len()));
        }
        if !(self.sigma_h_tau > 0.0 && self.sigma_h_tau <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "sigma_h_tau",
                reason: format!("must lie in (0, 1], got {}", self.sigma_h_tau),
            });
        }
        Ok(())
    }
}

/// Mutable state of one run. Owned by a single thread.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub ensemble: QEnsemble,
    pub sigma_h: SigmaHStore,
    pub baseline: SigmaBaseline,
    /// Environment steps taken so far, across episodes.
    pub global_step: u64,
    /// Episode during which the perturbation fired.
    pub perturbed_episode: Option<u32>,
    pub policy_rng: SimRng,
    pub annotator_rng: SimRng,
}

impl AgentState {
    pub fn new(cfg: &TrainingConfig, seed: u64) -> Result<Self> {
        let n_states = cfg.env.n_states();
        let init_seed = rng::stream_seed(seed, &cfg.stream_key, "init");
        let ensemble = QEnsemble::init(cfg.n_heads, n_states, Action::COUNT, cfg.init_scale, init_seed)?
            .with_rates(cfg.learning_rate, cfg.discount)?;
        Ok(AgentState {
            ensemble,
            sigma_h: SigmaHStore::with_tau(n_states, Action::COUNT, cfg.sigma_h_tau),
            baseline: SigmaBaseline::default(),
            global_step: 0,
            perturbed_episode: None,
            policy_rng: rng::stream(seed, &cfg.stream_key, "policy"),
            annotator_rng: rng::stream(seed, &cfg.stream_key, "annotators"),
        })
    }
}

/// Roll one episode, learning online.
pub fn run_episode(
    cfg: &TrainingConfig,
    state: &mut AgentState,
    episode: u32,
    epsilon: f64,
) -> Result<EpisodeMetrics> {
    let env_cfg = &cfg.env;
    let variant = &cfg.variant;
    let base = variant.effective_filter(&cfg.filter);

    let mut m = EpisodeMetrics {
        episode,
        true_return: 0.0,
        observed_return: 0.0,
        trap_visits: 0,
        abstentions: 0,
        goal_reached: false,
        mean_sigma_m: 0.0,
        mean_sigma_h: 0.0,
        epsilon,
    };
    let mut steps = 0u32;
    let mut gs: GridState = env::reset(env_cfg);

    while !env::is_terminal(env_cfg, &gs) {
        if cfg.perturbation.enabled
            && state.perturbed_episode.is_none()
            && state.global_step == cfg.perturbation.trigger_step
        {
            gs = env::apply_perturbation(env_cfg, &gs, &cfg.perturbation);
            state.perturbed_episode = Some(episode);
        }
        state.global_step += 1;
        let s = env_cfg.state_index(gs.position);

        let inputs = action_inputs(&state.ensemble, &state.sigma_h, variant, s);
        let params = if base.adaptive {
            let (sm, sh) = inputs.iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.1, acc.1 + x.2));
            let n = Action::COUNT as f64;
            let lambda = filter::adaptive_lambda(&base, sm / n, sh / n, state.baseline.mean());
            state.baseline.push(base.weighted_sigma(sm / n, sh / n));
            FilterParams { lambda, ..base }
        } else {
            base
        };

        let sel = select_action(
            env_cfg,
            &state.ensemble,
            &state.sigma_h,
            &params,
            variant,
            &cfg.policy,
            s,
            epsilon,
            &mut state.policy_rng,
        );
        if sel.abstained {
            m.abstentions += 1;
        }
        let outcome = match sel.action {
            Some(a) => env::step(env_cfg, &gs, a)?,
            None => env::hold(env_cfg, &gs)?,
        };
        let sample = supervision::annotate(
            &cfg.annotators,
            outcome.observed_reward,
            outcome.trap_hit,
            &cfg.noise,
            &mut state.annotator_rng,
        )?;

        let logged = sel.action.unwrap_or(sel.preferred).index();
        let sigma_m = state.ensemble.sigma_m(s, logged);
        let sigma_h = match sel.action {
            Some(a) => {
                let a = a.index();
                let sh = state.sigma_h.running_sigma_h(s, a, &sample);
                let target = match cfg.reward_source {
                    RewardSource::AnnotatorMean => sample.mean_h,
                    RewardSource::Observed => outcome.observed_reward,
                };
                let reward = match cfg.mode {
                    DiscountMode::ScoreFilter => target,
                    DiscountMode::RewardFilter => {
                        let (sm, sh) = variant.mask(sigma_m, sh);
                        target / (1.0 + params.lambda * params.weighted_sigma(sm, sh))
                    }
                };
                let s_next = env_cfg.state_index(outcome.next_state.position);
                state.ensemble.update(s, a, reward, s_next, outcome.terminal);
                sh
            }
            None => state.sigma_h.get(s, logged),
        };

        m.true_return += outcome.true_reward;
        m.observed_return += sample.mean_h;
        m.trap_visits += u32::from(outcome.trap_hit);
        m.mean_sigma_m += sigma_m;
        m.mean_sigma_h += sigma_h;
        steps += 1;
        gs = outcome.next_state;
        if outcome.goal_reached {
            m.goal_reached = true;
        }
        if outcome.terminal {
            break;
        }
    }
    if steps > 0 {
        m.mean_sigma_m /= f64::from(steps);
        m.mean_sigma_h /= f64::from(steps);
    }
    Ok(m)
}

/// A finished run together with its learned state.
#[derive(Debug, Clone)]
pub struct TrainingResult {
    pub summary: RunSummary,
    pub state: AgentState,
}

pub fn train(cfg: &TrainingConfig, seed: u64) -> Result<TrainingResult> {
    cfg.validate()?;
    let mut state = AgentState::new(cfg, seed)?;
    let mut episodes = Vec::with_capacity(cfg.n_episodes as usize);
    for e in 0..cfg.n_episodes {
        let eps = cfg.policy.epsilon(e);
        episodes.push(run_episode(cfg, &mut state, e, eps)?);
    }
    Ok(TrainingResult {
        summary: RunSummary::new(seed, cfg.variant.name, episodes),
        state,
    })
}

pub fn run_training(cfg: &TrainingConfig, seed: u64) -> Result<RunSummary> {
    train(cfg, seed).map(|r| r.summary)
}

/// Long-run `sigma_h` estimates split by whether the transition enters a trap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaHProfile {
    /// Mean over well-visited `(s, a)` pairs whose move lands on a trap.
    pub trap: f64,
    pub non_trap: f64,
    pub trap_pairs: usize,
    pub non_trap_pairs: usize,
}

/// Only pairs visited at least `min_visits` times count, so that the
/// running average has moved away from its prior.
pub fn sigma_h_profile(env: &GridWorldConfig, store: &SigmaHStore, min_visits: u32) -> SigmaHProfile {
    let (mut trap, mut non_trap) = (Vec::new(), Vec::new());
    for s in 0..env.n_states() {
        let cell = env.cell_of(s);
        for a in Action::ALL {
            if store.visits(s, a.index()) < min_visits {
                continue;
            }
            let v = store.get(s, a.index());
            if env.is_trap(env.target(cell, a)) {
                trap.push(v);
            } else {
                non_trap.push(v);
            }
        }
    }
    let avg = |xs: &[f64]| {
        if xs.is_empty() {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    SigmaHProfile {
        trap: avg(&trap),
        non_trap: avg(&non_trap),
        trap_pairs: trap.len(),
        non_trap_pairs: non_trap.len(),
    }
}
