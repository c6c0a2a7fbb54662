//! Episode loop, regret accounting, configuration and outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::game::{
    random_game, random_general_sum, sample_step, to_player1_view, MarkovGame, MarkovPolicy, ReturnMode, StepFeedback,
};
use crate::hard::{epsilon_hk, hard_markov_game, random_bits};
use crate::learner::{FixedLearner, InformedLearner, Learner, Policy};
use crate::matrix::ORACLE_TOL;
use crate::opponents::{
    AdaptiveBestResponse, FixedOpponent, Opponent, OpponentKind, ScriptSpec, ScriptedOpponent, SelfPlayMirror,
};
use crate::oracle::{best_policy_in_hindsight, evaluate_pair, minimax_values, ValueTable};
use crate::qol::{QolHyper, QolLearner};
use crate::vol::{choose_g, DoublingVol, VolHyper, VolLearner};

/// Slack below `V*` before a learner value counts as a UCB violation.
pub const UCB_SLACK: f64 = 1e-9;
/// Snapshots are kept by default only up to this many `K * H * S * A` cells.
pub const SNAPSHOT_BUDGET: usize = 10_000_000;

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinGame {
    /// One step, `r = 1` when the actions match.
    MatchingPennies,
    /// One step, `r = (1 + payoff) / 2`.
    RockPaperScissors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameSource {
    Builtin(BuiltinGame),
    File(PathBuf),
    Random {
        horizon: usize,
        states: usize,
        max_actions: usize,
        min_actions: usize,
        seed: u64,
        #[serde(default)]
        bernoulli: bool,
    },
    /// The four-action wrapper around a combination lock of length `lock`.
    /// `epsilon` defaults to `epsilon_hk(lock, K)`.
    HardLock {
        lock: usize,
        #[serde(default)]
        epsilon: Option<f64>,
        key_seed: u64,
    },
    /// Player 1's view of a random general-sum game.
    MultiPlayer {
        horizon: usize,
        states: usize,
        actions: Vec<usize>,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GMode {
    #[default]
    Auto,
    Doubling,
    Fixed(f64),
}

fn default_c() -> f64 {
    2.0
}

fn default_p() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Vol {
        #[serde(default)]
        g: GMode,
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_p")]
        p: f64,
        #[serde(default)]
        clip_values: bool,
    },
    Qol {
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_p")]
        p: f64,
    },
    Uniform,
    /// Plays the max player's Nash policy.
    Nash,
}

impl LearnerSpec {
    pub fn vol() -> Self {
        LearnerSpec::Vol {
            g: GMode::Auto,
            c: 2.0,
            p: 0.01,
            clip_values: false,
        }
    }
}

/// Inline data or a path to a JSON file holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inline<T> {
    Path(PathBuf),
    Value(T),
}

impl<T: serde::de::DeserializeOwned + Clone> Inline<T> {
    fn resolve(&self) -> Result<T, HarnessError> {
        match self {
            Inline::Value(v) => Ok(v.clone()),
            Inline::Path(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| HarnessError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpponentSpec {
    Nash,
    Uniform,
    Fixed {
        policy: Inline<MarkovPolicy>,
    },
    Scripted {
        script: Inline<ScriptSpec>,
    },
    AdaptiveBestResponse {
        /// Refresh period in episodes; absent means never refresh.
        #[serde(default)]
        period: Option<usize>,
    },
    SelfPlayMirror {
        #[serde(default)]
        g: GMode,
        #[serde(default = "default_c")]
        c: f64,
        #[serde(default = "default_p")]
        p: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialStates {
    Fixed(usize),
    Uniform,
    Cycle(Vec<usize>),
}

impl Default for InitialStates {
    fn default() -> Self {
        InitialStates::Fixed(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    WeakRegret,
    StrongRegret,
    UcbGap,
    UcbViolations,
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::WeakRegret]
}

fn default_opponent() -> OpponentSpec {
    OpponentSpec::Nash
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<PathBuf>,
}

impl OutputSpec {
    /// `ledger.csv`, `summary.json` and `regret.svg` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            csv: Some(dir.join("ledger.csv")),
            summary: Some(dir.join("summary.json")),
            svg: Some(dir.join("regret.svg")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub game: GameSource,
    pub learner: LearnerSpec,
    #[serde(default = "default_opponent")]
    pub opponent: OpponentSpec,
    pub episodes: usize,
    #[serde(default)]
    pub initial_states: InitialStates,
    #[serde(default)]
    pub seed: u64,
    /// Informed mode shows the opponent's action to learners that accept it.
    #[serde(default)]
    pub informed: bool,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    /// Replicate every min-player action this many times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_min_actions: Option<usize>,
    /// Keep per-episode opponent policies; defaults to on for small runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_snapshots: Option<bool>,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn new(game: GameSource, learner: LearnerSpec, episodes: usize) -> Self {
        Self {
            game,
            learner,
            opponent: OpponentSpec::Nash,
            episodes,
            initial_states: InitialStates::default(),
            seed: 0,
            informed: false,
            metrics: default_metrics(),
            duplicate_min_actions: None,
            keep_snapshots: None,
            output: OutputSpec::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config; relative paths inside it resolve against its folder.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let GameSource::File(p) = &mut self.game {
            fix(p);
        }
        match &mut self.opponent {
            OpponentSpec::Fixed { policy: Inline::Path(p) } => fix(p),
            OpponentSpec::Scripted { script: Inline::Path(p) } => fix(p),
            _ => {}
        }
        let out = &mut self.output;
        for p in [&mut out.csv, &mut out.summary, &mut out.svg].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn has(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }

    /// Checks that do not need the game.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.episodes == 0 {
            return bad("episodes must be at least 1".into());
        }
        if matches!(self.learner, LearnerSpec::Qol { .. }) && !self.informed {
            return bad("the qol learner needs the opponent's actions; set \"informed\": true".into());
        }
        if self.duplicate_min_actions == Some(0) {
            return bad("duplicate_min_actions must be at least 1".into());
        }
        if let InitialStates::Cycle(c) = &self.initial_states {
            if c.is_empty() {
                return bad("initial state cycle is empty".into());
            }
        }
        if let OpponentSpec::SelfPlayMirror { g: GMode::Doubling, .. } = self.opponent {
            return bad("the self-play mirror supports g = auto or fixed".into());
        }
        if self.has(Metric::StrongRegret) && self.keep_snapshots == Some(false) {
            return Err(HarnessError::SnapshotsDisabled);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Construction

/// A built game plus the lock key when it came from a hard-lock source.
#[derive(Debug, Clone)]
pub struct BuiltGame {
    pub game: MarkovGame,
    /// Game before min-action duplication.
    pub base: MarkovGame,
    pub lock_key: Option<Vec<bool>>,
}

fn builtin(b: BuiltinGame) -> MarkovGame {
    match b {
        BuiltinGame::MatchingPennies => {
            let mut g = MarkovGame::uniform_sizes(1, 1, 2, 2).expect("fixed sizes");
            for a in 0..2 {
                g.set_return(0, 0, a, a, 1.0);
            }
            g
        }
        BuiltinGame::RockPaperScissors => {
            let mut g = MarkovGame::uniform_sizes(1, 1, 3, 3).expect("fixed sizes");
            for a in 0..3 {
                for b in 0..3 {
                    let payoff = match (3 + a - b) % 3 {
                        0 => 0.0,
                        1 => 1.0,
                        _ => -1.0,
                    };
                    g.set_return(0, 0, a, b, (1.0 + payoff) / 2.0);
                }
            }
            g
        }
    }
}

pub fn build_game(cfg: &ExperimentConfig) -> Result<BuiltGame, HarnessError> {
    let mut lock_key = None;
    let base = match &cfg.game {
        GameSource::Builtin(b) => builtin(*b),
        GameSource::File(p) => MarkovGame::load(p)?,
        GameSource::Random {
            horizon,
            states,
            max_actions,
            min_actions,
            seed,
            bernoulli,
        } => {
            let mode = if *bernoulli { ReturnMode::Bernoulli } else { ReturnMode::Deterministic };
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            random_game(*horizon, *states, *max_actions, *min_actions, &mut rng, mode)?
        }
        GameSource::HardLock { lock, epsilon, key_seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*key_seed);
            let x = random_bits(*lock, &mut rng);
            let eps = epsilon.unwrap_or_else(|| epsilon_hk(*lock, cfg.episodes));
            let g = hard_markov_game(&x, eps)?;
            lock_key = Some(x);
            g
        }
        GameSource::MultiPlayer {
            horizon,
            states,
            actions,
            seed,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let gs = random_general_sum(*horizon, *states, actions, &mut rng)?;
            to_player1_view(&gs)?.0
        }
    };
    let game = match cfg.duplicate_min_actions {
        Some(f) if f > 1 => base.duplicate_min_actions(f)?,
        _ => base.clone(),
    };
    Ok(BuiltGame { game, base, lock_key })
}

/// Spreads each min-player action's mass evenly over its copies in a game
/// built with [`MarkovGame::duplicate_min_actions`].
pub fn lift_min_policy(nu: &MarkovPolicy, factor: usize) -> MarkovPolicy {
    let horizon = nu.horizon();
    let states: Vec<usize> = (0..horizon).map(|h| nu.num_states(h)).collect();
    let actions: Vec<usize> = (0..horizon).map(|h| nu.num_actions(h) * factor).collect();
    let mut out = MarkovPolicy::uniform(&states, &actions);
    for h in 0..horizon {
        let nb = nu.num_actions(h);
        for s in 0..states[h] {
            let src = nu.dist(h, s).to_vec();
            for (b, p) in out.dist_mut(h, s).iter_mut().enumerate() {
                *p = src[b % nb] / factor as f64;
            }
        }
    }
    out
}

fn max_size(v: &[usize]) -> usize {
    v.iter().copied().max().unwrap_or(1)
}

fn build_learner(cfg: &ExperimentConfig, built: &BuiltGame, star: &MarkovPolicy) -> Result<LearnerHandle, HarnessError> {
    let g = &built.game;
    let (states, actions) = (g.state_sizes(), g.max_action_sizes());
    let k = cfg.episodes;
    Ok(match &cfg.learner {
        LearnerSpec::Vol { g: mode, c, p, clip_values } => match mode {
            GMode::Doubling => LearnerHandle::Unknown(Box::new(DoublingVol::new(states, actions, *c, *p, *clip_values)?)),
            GMode::Auto | GMode::Fixed(_) => {
                let gv = match mode {
                    GMode::Fixed(v) => *v,
                    _ => choose_g(k, g.horizon(), max_size(states), max_size(actions)),
                };
                let hyper = VolHyper {
                    g: gv,
                    c: *c,
                    p: *p,
                    episodes: k,
                    clip_values: *clip_values,
                };
                LearnerHandle::Unknown(Box::new(VolLearner::new(states, actions, hyper)?))
            }
        },
        LearnerSpec::Qol { c, p } => {
            let hyper = QolHyper { c: *c, p: *p, episodes: k };
            LearnerHandle::Informed(Box::new(QolLearner::new(states, actions, g.min_action_sizes(), hyper)?))
        }
        LearnerSpec::Uniform => LearnerHandle::Unknown(Box::new(FixedLearner::uniform(&states[..g.horizon()], actions))),
        LearnerSpec::Nash => LearnerHandle::Unknown(Box::new(FixedLearner::new(star.clone()).with_name("nash"))),
    })
}

fn build_opponent(cfg: &ExperimentConfig, built: &BuiltGame) -> Result<Box<dyn Opponent>, HarnessError> {
    let g = &built.game;
    let factor = cfg.duplicate_min_actions.unwrap_or(1);
    Ok(match &cfg.opponent {
        OpponentSpec::Nash => {
            // With duplicated actions, lift the base game's policy so every
            // copy is played equally.
            let base = minimax_values(&built.base, ORACLE_TOL)?.min_policy;
            Box::new(FixedOpponent::labelled(lift_min_policy(&base, factor), OpponentKind::Nash))
        }
        OpponentSpec::Uniform => Box::new(FixedOpponent::new(MarkovPolicy::uniform_min(g))),
        OpponentSpec::Fixed { policy } => {
            let nu = policy.resolve()?;
            if !nu.fits_min(g) {
                return Err(HarnessError::Config("fixed opponent policy does not fit the game".into()));
            }
            Box::new(FixedOpponent::new(nu))
        }
        OpponentSpec::Scripted { script } => {
            let spec = script.resolve()?;
            Box::new(ScriptedOpponent::from_spec(g, spec, built.lock_key.as_deref())?)
        }
        OpponentSpec::AdaptiveBestResponse { period } => Box::new(AdaptiveBestResponse::new(g, *period)?),
        OpponentSpec::SelfPlayMirror { g: mode, c, p } => {
            let gv = match mode {
                GMode::Fixed(v) => *v,
                _ => choose_g(cfg.episodes, g.horizon(), max_size(g.state_sizes()), max_size(g.min_action_sizes())),
            };
            let hyper = VolHyper {
                g: gv,
                c: *c,
                p: *p,
                episodes: cfg.episodes,
                clip_values: false,
            };
            Box::new(SelfPlayMirror::new(g, hyper)?)
        }
    })
}

// ---------------------------------------------------------------------------
// Episode loop

/// A learner in either mode. Only [`LearnerHandle::Informed`] learners are
/// ever handed the opponent's action.
pub enum LearnerHandle {
    Unknown(Box<dyn Learner>),
    Informed(Box<dyn InformedLearner>),
}

impl LearnerHandle {
    fn base(&self) -> &dyn Policy {
        match self {
            LearnerHandle::Unknown(l) => l.as_ref(),
            LearnerHandle::Informed(l) => l.as_ref(),
        }
    }

    fn base_mut(&mut self) -> &mut dyn Policy {
        match self {
            LearnerHandle::Unknown(l) => l.as_mut(),
            LearnerHandle::Informed(l) => l.as_mut(),
        }
    }
}

pub const STREAM_LEARNER: u64 = 1;
pub const STREAM_OPPONENT: u64 = 2;
pub const STREAM_ENVIRONMENT: u64 = 3;
pub const STREAM_INITIAL: u64 = 4;

/// Independent named stream `id` under a root seed.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    /// 1-based episode index.
    pub k: usize,
    pub s1: usize,
    pub v_star: f64,
    pub v_pair: f64,
    pub weak_inc: f64,
    pub weak_cum: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ucb_gap: Option<f64>,
    /// Visited `(h, s)` in this episode with `V_h^k(s) < V*_h(s)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ucb_violations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongRegret {
    pub value: f64,
    /// Proven upper bound; equals `value` when `exact`.
    pub upper_bound: f64,
    pub exact: bool,
}

#[derive(Debug, Clone)]
pub struct RegretLedger {
    pub rows: Vec<LedgerRow>,
    pub learner: String,
    pub opponent: OpponentKind,
    pub opponent_snapshots: Option<Vec<MarkovPolicy>>,
    pub strong: Option<StrongRegret>,
    /// Episodes whose start value `V_1^k(s_1^k)` fell below `V*_1(s_1^k)`.
    pub initial_ucb_violations: Option<usize>,
    /// Violations per `(h, s)` over the whole run.
    pub ucb_violation_table: Option<Vec<Vec<usize>>>,
}

impl RegretLedger {
    pub fn weak_regret(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.weak_cum)
    }

    pub fn weak_cumulative(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.weak_cum).collect()
    }

    pub fn pair_total(&self) -> f64 {
        self.rows.iter().map(|r| r.v_pair).sum()
    }

    pub fn slope(&self) -> Option<f64> {
        fit_loglog_slope(&self.weak_cumulative())
    }

    /// Total visited-state UCB violations.
    pub fn ucb_violations(&self) -> Option<usize> {
        self.ucb_violation_table.as_ref().map(|t| t.iter().flatten().sum())
    }
}

fn initial_state(spec: &InitialStates, k: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<usize, HarnessError> {
    let s = match spec {
        InitialStates::Fixed(s) => *s,
        InitialStates::Uniform => rng.random_range(0..n),
        InitialStates::Cycle(c) => c[k % c.len()],
    };
    if s >= n {
        return Err(HarnessError::Config(format!("initial state {s} out of range (layer 0 has {n})")));
    }
    Ok(s)
}

/// Builds everything from the config and runs it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RegretLedger, HarnessError> {
    cfg.validate()?;
    let built = build_game(cfg)?;
    let star = minimax_values(&built.game, ORACLE_TOL)?;
    let learner = build_learner(cfg, &built, &star.max_policy)?;
    let opponent = build_opponent(cfg, &built)?;
    run_episodes(cfg, &built.game, &star.values, learner, opponent)
}

/// The episode loop with caller-supplied parts. `v_star` must be the
/// minimax table of `g`.
pub fn run_episodes(
    cfg: &ExperimentConfig,
    g: &MarkovGame,
    v_star: &ValueTable,
    mut learner: LearnerHandle,
    mut opponent: Box<dyn Opponent>,
) -> Result<RegretLedger, HarnessError> {
    cfg.validate()?;
    let horizon = g.horizon();
    let k_total = cfg.episodes;
    let cells = k_total
        .saturating_mul(horizon)
        .saturating_mul(g.max_num_states())
        .saturating_mul(g.max_num_max_actions());
    let keep = cfg.has(Metric::StrongRegret) || cfg.keep_snapshots.unwrap_or(cells <= SNAPSHOT_BUDGET);
    let want_gap = cfg.has(Metric::UcbGap);
    let want_viol = cfg.has(Metric::UcbViolations);

    let mut lrng = stream(cfg.seed, STREAM_LEARNER);
    let mut orng = stream(cfg.seed, STREAM_OPPONENT);
    let mut erng = stream(cfg.seed, STREAM_ENVIRONMENT);
    let mut irng = stream(cfg.seed, STREAM_INITIAL);

    let mut rows = Vec::with_capacity(k_total);
    let mut snapshots = keep.then(|| Vec::with_capacity(k_total));
    let mut table: Vec<Vec<usize>> = (0..horizon).map(|h| vec![0; g.num_states(h)]).collect();
    let mut start_violations = 0usize;
    let mut cum = 0.0;

    for k in 0..k_total {
        let s1 = initial_state(&cfg.initial_states, k, g.num_states(0), &mut irng)?;
        learner.base_mut().begin_episode(k)?;
        let mu = learner.base().policy();
        opponent.begin_episode(k, &mu)?;
        let v_pair = evaluate_pair(g, &mu, opponent.policy())?.get(0, s1);
        let vs = v_star.get(0, s1);
        let weak_inc = vs - v_pair;
        cum += weak_inc;
        let start_value = learner.base().value(0, s1);
        if want_viol && start_value.is_some_and(|v| v < vs - UCB_SLACK) {
            start_violations += 1;
        }
        let ucb_gap = if want_gap { start_value.map(|v| v - v_pair) } else { None };
        if let Some(s) = snapshots.as_mut() {
            s.push(opponent.policy().clone());
        }

        let mut violations = 0usize;
        let mut s = s1;
        for h in 0..horizon {
            let a = learner.base_mut().act(h, s, &mut lrng);
            let b = opponent.act(h, s, &mut orng);
            let (ret, next_state) = sample_step(g, h, s, a, b, &mut erng)?;
            if want_viol && learner.base().value(h, s).is_some_and(|v| v < v_star.get(h, s) - UCB_SLACK) {
                violations += 1;
                table[h][s] += 1;
            }
            let fb = StepFeedback { step: h, state: s, action: a, ret, next_state };
            match &mut learner {
                LearnerHandle::Unknown(l) => l.observe(&fb)?,
                LearnerHandle::Informed(l) => {
                    if cfg.informed {
                        l.observe_informed(&fb, b)?
                    } else {
                        return Err(HarnessError::Config("informed learner in an unknown game".into()));
                    }
                }
            }
            opponent.observe(&StepFeedback { action: b, ..fb })?;
            s = next_state;
        }
        rows.push(LedgerRow {
            k: k + 1,
            s1,
            v_star: vs,
            v_pair,
            weak_inc,
            weak_cum: cum,
            ucb_gap,
            ucb_violations: want_viol.then_some(violations),
        });
    }

    let mut ledger = RegretLedger {
        rows,
        learner: learner.base().name().to_string(),
        opponent: opponent.kind(),
        opponent_snapshots: snapshots,
        strong: None,
        initial_ucb_violations: want_viol.then_some(start_violations),
        ucb_violation_table: want_viol.then_some(table),
    };
    if cfg.has(Metric::StrongRegret) {
        ledger.strong = Some(compute_strong_regret(&ledger, g)?);
    }
    Ok(ledger)
}

/// Best fixed policy in hindsight against the recorded opponent policies,
/// minus the realized pair values.
pub fn compute_strong_regret(ledger: &RegretLedger, g: &MarkovGame) -> Result<StrongRegret, HarnessError> {
    let snaps = ledger.opponent_snapshots.as_ref().ok_or(HarnessError::SnapshotsDisabled)?;
    let initials: Vec<usize> = ledger.rows.iter().map(|r| r.s1).collect();
    let sol = best_policy_in_hindsight(g, snaps, &initials)?;
    let realized = ledger.pair_total();
    Ok(StrongRegret {
        value: sol.total - realized,
        upper_bound: sol.upper_bound - realized,
        exact: sol.exact,
    })
}

// ---------------------------------------------------------------------------
// Outputs

/// Least-squares slope of `ln cum` against `ln k` over the second half of
/// the episodes, skipping non-positive values.
pub fn fit_loglog_slope(cum: &[f64]) -> Option<f64> {
    let n = cum.len();
    let pts: Vec<(f64, f64)> = (n / 2..n)
        .filter(|&i| cum[i] > 0.0)
        .map(|i| (((i + 1) as f64).ln(), cum[i].ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn ledger_csv(ledger: &RegretLedger) -> String {
    let gap = ledger.rows.first().is_some_and(|r| r.ucb_gap.is_some());
    let viol = ledger.rows.first().is_some_and(|r| r.ucb_violations.is_some());
    let mut out = String::from("k,s1,v_star,v_pair,weak_inc,weak_cum");
    if gap {
        out.push_str(",ucb_gap");
    }
    if viol {
        out.push_str(",ucb_violations");
    }
    out.push('\n');
    for r in &ledger.rows {
        let _ = write!(out, "{},{},{},{},{},{}", r.k, r.s1, r.v_star, r.v_pair, r.weak_inc, r.weak_cum);
        if gap {
            let _ = write!(out, ",{}", r.ucb_gap.unwrap_or(f64::NAN));
        }
        if viol {
            let _ = write!(out, ",{}", r.ucb_violations.unwrap_or(0));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a> {
    pub config: &'a ExperimentConfig,
    pub learner: &'a str,
    pub opponent: OpponentKind,
    pub episodes: usize,
    pub weak_regret: f64,
    pub loglog_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strong_regret: Option<StrongRegret>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_ucb_violations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ucb_violations: Option<usize>,
}

pub fn summary<'a>(ledger: &'a RegretLedger, cfg: &'a ExperimentConfig) -> Summary<'a> {
    Summary {
        config: cfg,
        learner: &ledger.learner,
        opponent: ledger.opponent,
        episodes: ledger.rows.len(),
        weak_regret: ledger.weak_regret(),
        loglog_slope: ledger.slope(),
        strong_regret: ledger.strong,
        initial_ucb_violations: ledger.initial_ucb_violations,
        ucb_violations: ledger.ucb_violations(),
    }
}

/// Line plot of cumulative weak regret against episode.
pub fn render_svg(ledger: &RegretLedger) -> String {
    let (w, h, pad) = (640.0, 400.0, 48.0);
    let cum = ledger.weak_cumulative();
    let n = cum.len().max(1) as f64;
    let lo = cum.iter().copied().fold(0.0f64, f64::min);
    let hi = cum.iter().copied().fold(0.0f64, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    // At most ~2000 vertices keeps the file small for long runs.
    let stride = (cum.len() / 2000).max(1);
    let mut points = String::new();
    for (i, v) in cum.iter().enumerate().step_by(stride) {
        let x = pad + (w - 2.0 * pad) * (i + 1) as f64 / n;
        let y = h - pad - (h - 2.0 * pad) * (v - lo) / span;
        let _ = write!(points, "{x:.2},{y:.2} ");
    }
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<line x1="{pad}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{y0}" stroke="black"/>"#,
        y0 = h - pad,
        x1 = w - pad
    );
    let _ = writeln!(out, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, points.trim_end());
    let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">episode (K = {})</text>"#, w / 2.0, h - 12.0, cum.len());
    let _ = writeln!(out, r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">weak regret [{lo:.3}, {hi:.3}]</text>"#, h / 2.0, h / 2.0);
    out.push_str("</svg>\n");
    out
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes whichever of CSV, summary JSON and SVG `out` names.
pub fn emit_outputs(ledger: &RegretLedger, cfg: &ExperimentConfig, out: &OutputSpec) -> Result<(), HarnessError> {
    if let Some(p) = &out.csv {
        write_file(p, &ledger_csv(ledger))?;
    }
    if let Some(p) = &out.summary {
        let text = serde_json::to_string_pretty(&summary(ledger, cfg))?;
        write_file(p, &(text + "\n"))?;
    }
    if let Some(p) = &out.svg {
        write_file(p, &render_svg(ledger))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Batches

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub seed: u64,
    pub g: Option<f64>,
    pub duplicate_min_actions: Option<usize>,
    pub weak_regret: f64,
    pub loglog_slope: Option<f64>,
    pub strong_regret: Option<f64>,
}

/// Runs the grid seeds x G values x duplication factors in parallel. A
/// `None` G keeps the config's own setting.
pub fn run_sweep(
    base: &ExperimentConfig,
    seeds: &[u64],
    gs: &[Option<f64>],
    dups: &[Option<usize>],
) -> Result<Vec<SweepCell>, HarnessError> {
    let mut grid = Vec::new();
    for &d in dups {
        for &g in gs {
            for &seed in seeds {
                grid.push((seed, g, d));
            }
        }
    }
    grid.par_iter()
        .map(|&(seed, g, d)| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.duplicate_min_actions = d.or(base.duplicate_min_actions);
            if let Some(gv) = g {
                match &mut cfg.learner {
                    LearnerSpec::Vol { g, .. } => *g = GMode::Fixed(gv),
                    _ => return Err(HarnessError::Config("a G grid needs the vol learner".into())),
                }
            }
            let ledger = run_experiment(&cfg)?;
            Ok(SweepCell {
                seed,
                g,
                duplicate_min_actions: cfg.duplicate_min_actions,
                weak_regret: ledger.weak_regret(),
                loglog_slope: ledger.slope(),
                strong_regret: ledger.strong.map(|s| s.value),
            })
        })
        .collect()
}

/// Seed offset for the lock-key script so it differs from the game's key.
const SCRIPT_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// The hard-lock experiment for one seed: the wrapper game with key from
/// `seed`, a fresh `Y` per episode, and strong regret measured exactly.
pub fn hard_lb_config(lock: usize, episodes: usize, epsilon: Option<f64>, learner: LearnerSpec, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        GameSource::HardLock {
            lock,
            epsilon,
            key_seed: seed,
        },
        learner,
        episodes,
    );
    cfg.opponent = OpponentSpec::Scripted {
        script: Inline::Value(ScriptSpec::Generator {
            hard_lock: crate::opponents::HardLockScript {
                seed: seed ^ SCRIPT_SEED_SALT,
            },
        }),
    };
    cfg.metrics = vec![Metric::WeakRegret, Metric::StrongRegret];
    cfg.seed = seed;
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardLbRow {
    pub seed: u64,
    pub epsilon: f64,
    pub strong_regret: f64,
    pub upper_bound: f64,
    pub exact: bool,
    pub threshold: f64,
    pub linear: bool,
}

pub fn hard_lb_run(lock: usize, episodes: usize, epsilon: Option<f64>, learner: LearnerSpec, seed: u64) -> Result<HardLbRow, HarnessError> {
    let cfg = hard_lb_config(lock, episodes, epsilon, learner, seed);
    let eps = epsilon.unwrap_or_else(|| epsilon_hk(lock, episodes));
    let ledger = run_experiment(&cfg)?;
    let strong = ledger.strong.expect("strong regret was requested");
    let threshold = 0.5 * eps * episodes as f64;
    Ok(HardLbRow {
        seed,
        epsilon: eps,
        strong_regret: strong.value,
        upper_bound: strong.upper_bound,
        exact: strong.exact,
        threshold,
        linear: strong.value >= threshold,
    })
}
