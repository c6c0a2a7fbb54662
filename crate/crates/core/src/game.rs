//! Episodic two-player zero-sum Markov games.
//!
//! Steps are 0-based in code: a game with horizon `H` has decision steps
//! `0..H` and state layers `0..=H`, where layer `H` is terminal and carries
//! no decisions. Cardinalities may differ per step, so every tensor is
//! ragged by step and flat within a step:
//!
//! * returns at step `h` are indexed by `(s * A_h + a) * B_h + b`,
//! * transitions at step `h` are indexed by `((s * A_h + a) * B_h + b) * S_{h+1} + s'`.
//!
//! Returns lie in `[0, 1]` per step, so the total return of an episode lies
//! in `[0, H]`. A return entry may be flagged as Bernoulli, in which case the
//! stored value is the success probability and the realized return is a
//! `{0, 1}` draw. Every exact computation in this crate uses the mean.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::GameError;

/// Absolute tolerance on the sum of a probability row.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Draws an index from a discrete distribution by inverse CDF.
///
/// Uses exactly one uniform draw from `rng`. Mass lost to rounding falls on
/// the last index with positive probability.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// How returns of a generated game are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReturnMode {
    /// `r[h][s][a][b]` is paid as is.
    #[default]
    Deterministic,
    /// `r[h][s][a][b]` is the mean of a Bernoulli draw.
    Bernoulli,
}

/// One invariant violation found by [`validate_game`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension {
        detail: String,
    },
    NotStochastic {
        step: usize,
        state: usize,
        max_action: usize,
        min_action: usize,
        sum: f64,
    },
    NegativeProbability {
        step: usize,
        state: usize,
        max_action: usize,
        min_action: usize,
        next_state: usize,
        value: f64,
    },
    ReturnOutOfRange {
        step: usize,
        state: usize,
        max_action: usize,
        min_action: usize,
        value: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension { detail } => write!(f, "dimension mismatch: {detail}"),
            Violation::NotStochastic { step, state, max_action, min_action, sum } => write!(
                f,
                "transition row (h={step}, s={state}, a={max_action}, b={min_action}) sums to {sum}"
            ),
            Violation::NegativeProbability { step, state, max_action, min_action, next_state, value } => write!(
                f,
                "transition (h={step}, s={state}, a={max_action}, b={min_action}) -> {next_state} has negative mass {value}"
            ),
            Violation::ReturnOutOfRange { step, state, max_action, min_action, value } => write!(
                f,
                "return (h={step}, s={state}, a={max_action}, b={min_action}) = {value} is outside [0, 1]"
            ),
        }
    }
}

/// A tabular episodic two-player zero-sum Markov game.
///
/// Dimensions are fixed at construction. Entry values can be edited through
/// the `*_mut` accessors, which is how generators fill tensors; call
/// [`validate_game`] (or load through [`MarkovGame::from_json`]) to check
/// the stochasticity and range invariants afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGame {
    horizon: usize,
    states: Vec<usize>,
    max_actions: Vec<usize>,
    min_actions: Vec<usize>,
    returns: Vec<Vec<f64>>,
    transitions: Vec<Vec<f64>>,
    bernoulli: Option<Vec<Vec<bool>>>,
}

impl MarkovGame {
    /// Creates a game with zero returns where every transition goes to state 0.
    ///
    /// `states` has one entry per layer (`H + 1` entries), the action lists one
    /// entry per decision step.
    pub fn new(
        states: Vec<usize>,
        max_actions: Vec<usize>,
        min_actions: Vec<usize>,
    ) -> Result<Self, GameError> {
        let horizon = max_actions.len();
        if horizon == 0 {
            return Err(GameError::ZeroSize("horizon"));
        }
        if states.len() != horizon + 1 || min_actions.len() != horizon {
            return Err(GameError::Invalid(vec![Violation::Dimension {
                detail: format!(
                    "expected {} state layers and {} min-action sizes, got {} and {}",
                    horizon + 1,
                    horizon,
                    states.len(),
                    min_actions.len()
                ),
            }]));
        }
        if states.contains(&0) {
            return Err(GameError::ZeroSize("states"));
        }
        if max_actions.contains(&0) {
            return Err(GameError::ZeroSize("max_actions"));
        }
        if min_actions.contains(&0) {
            return Err(GameError::ZeroSize("min_actions"));
        }
        let mut returns = Vec::with_capacity(horizon);
        let mut transitions = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let cells = states[h] * max_actions[h] * min_actions[h];
            returns.push(vec![0.0; cells]);
            let mut rows = vec![0.0; cells * states[h + 1]];
            for row in rows.chunks_mut(states[h + 1]) {
                row[0] = 1.0;
            }
            transitions.push(rows);
        }
        Ok(Self {
            horizon,
            states,
            max_actions,
            min_actions,
            returns,
            transitions,
            bernoulli: None,
        })
    }

    /// Same cardinalities at every step.
    pub fn uniform_sizes(
        horizon: usize,
        states: usize,
        max_actions: usize,
        min_actions: usize,
    ) -> Result<Self, GameError> {
        Self::new(
            vec![states; horizon + 1],
            vec![max_actions; horizon],
            vec![min_actions; horizon],
        )
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of states in layer `h` (`h` may equal the horizon).
    pub fn num_states(&self, h: usize) -> usize {
        self.states[h]
    }

    pub fn num_max_actions(&self, h: usize) -> usize {
        self.max_actions[h]
    }

    pub fn num_min_actions(&self, h: usize) -> usize {
        self.min_actions[h]
    }

    pub fn state_sizes(&self) -> &[usize] {
        &self.states
    }

    pub fn max_action_sizes(&self) -> &[usize] {
        &self.max_actions
    }

    pub fn min_action_sizes(&self) -> &[usize] {
        &self.min_actions
    }

    /// `S = max_h |S_h|` over decision layers.
    pub fn max_num_states(&self) -> usize {
        self.states[..self.horizon].iter().copied().max().unwrap_or(1)
    }

    /// `A = max_h |A_h|`.
    pub fn max_num_max_actions(&self) -> usize {
        self.max_actions.iter().copied().max().unwrap_or(1)
    }

    /// `B = max_h |B_h|`.
    pub fn max_num_min_actions(&self) -> usize {
        self.min_actions.iter().copied().max().unwrap_or(1)
    }

    fn cell(&self, h: usize, s: usize, a: usize, b: usize) -> usize {
        (s * self.max_actions[h] + a) * self.min_actions[h] + b
    }

    /// Mean return `r[h][s][a][b]`.
    pub fn mean_return(&self, h: usize, s: usize, a: usize, b: usize) -> f64 {
        self.returns[h][self.cell(h, s, a, b)]
    }

    pub fn set_return(&mut self, h: usize, s: usize, a: usize, b: usize, value: f64) {
        let c = self.cell(h, s, a, b);
        self.returns[h][c] = value;
    }

    pub fn is_bernoulli(&self, h: usize, s: usize, a: usize, b: usize) -> bool {
        match &self.bernoulli {
            Some(flags) => flags[h][self.cell(h, s, a, b)],
            None => false,
        }
    }

    pub fn has_bernoulli_returns(&self) -> bool {
        self.bernoulli
            .as_ref()
            .is_some_and(|flags| flags.iter().any(|step| step.iter().any(|&f| f)))
    }

    pub fn set_bernoulli(&mut self, h: usize, s: usize, a: usize, b: usize, flag: bool) {
        let c = self.cell(h, s, a, b);
        if self.bernoulli.is_none() {
            if !flag {
                return;
            }
            self.bernoulli = Some(self.returns.iter().map(|r| vec![false; r.len()]).collect());
        }
        if let Some(flags) = self.bernoulli.as_mut() {
            flags[h][c] = flag;
        }
    }

    /// Distribution over layer `h + 1` after `(s, a, b)` at step `h`.
    pub fn transition(&self, h: usize, s: usize, a: usize, b: usize) -> &[f64] {
        let n = self.states[h + 1];
        let start = self.cell(h, s, a, b) * n;
        &self.transitions[h][start..start + n]
    }

    pub fn transition_mut(&mut self, h: usize, s: usize, a: usize, b: usize) -> &mut [f64] {
        let n = self.states[h + 1];
        let start = self.cell(h, s, a, b) * n;
        &mut self.transitions[h][start..start + n]
    }

    /// Expected continuation `r[h][s][a][b] + sum_s' P(s'|s,a,b) next[s']`.
    pub fn backup(&self, h: usize, s: usize, a: usize, b: usize, next: &[f64]) -> f64 {
        let row = self.transition(h, s, a, b);
        let cont: f64 = row.iter().zip(next).map(|(p, v)| p * v).sum();
        self.mean_return(h, s, a, b) + cont
    }

    fn check_index(&self, h: usize, s: usize, a: usize, b: usize) -> Result<(), GameError> {
        if h >= self.horizon {
            return Err(GameError::index("step", h, h, self.horizon));
        }
        if s >= self.states[h] {
            return Err(GameError::index("state", h, s, self.states[h]));
        }
        if a >= self.max_actions[h] {
            return Err(GameError::index("max action", h, a, self.max_actions[h]));
        }
        if b >= self.min_actions[h] {
            return Err(GameError::index("min action", h, b, self.min_actions[h]));
        }
        Ok(())
    }

    /// Builds the game in which the roles of the two players are exchanged.
    ///
    /// The new max player is the old min player and returns are complemented
    /// (`1 - r`) so they stay in `[0, 1]`. The minimax value of the swapped
    /// game at layer `h` is `(H - h) - V*_h` in 0-based steps.
    pub fn swap_roles(&self) -> MarkovGame {
        let mut out = MarkovGame::new(
            self.states.clone(),
            self.min_actions.clone(),
            self.max_actions.clone(),
        )
        .expect("dimensions of a valid game");
        for h in 0..self.horizon {
            for s in 0..self.states[h] {
                for a in 0..self.max_actions[h] {
                    for b in 0..self.min_actions[h] {
                        out.set_return(h, s, b, a, 1.0 - self.mean_return(h, s, a, b));
                        out.set_bernoulli(h, s, b, a, self.is_bernoulli(h, s, a, b));
                        out.transition_mut(h, s, b, a)
                            .copy_from_slice(self.transition(h, s, a, b));
                    }
                }
            }
        }
        out
    }

    /// Replicates every min-player action `factor` times.
    ///
    /// Action `b'` of the result behaves exactly like action `b' % B_h` of
    /// `self`, so any learner that never sees `b` faces the same game.
    pub fn duplicate_min_actions(&self, factor: usize) -> Result<MarkovGame, GameError> {
        if factor == 0 {
            return Err(GameError::ZeroSize("duplication factor"));
        }
        let min_actions = self.min_actions.iter().map(|&b| b * factor).collect();
        let mut out = MarkovGame::new(self.states.clone(), self.max_actions.clone(), min_actions)?;
        for h in 0..self.horizon {
            for s in 0..self.states[h] {
                for a in 0..self.max_actions[h] {
                    for b in 0..out.min_actions[h] {
                        let base = b % self.min_actions[h];
                        out.set_return(h, s, a, b, self.mean_return(h, s, a, base));
                        out.set_bernoulli(h, s, a, b, self.is_bernoulli(h, s, a, base));
                        out.transition_mut(h, s, a, b)
                            .copy_from_slice(self.transition(h, s, a, base));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Parses and re-validates a game file.
    pub fn from_json(text: &str) -> Result<Self, GameError> {
        let file: GameFile = serde_json::from_str(text)?;
        file.into_game()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GameFile::from_game(self)).expect("game serializes")
    }

    pub fn load(path: &Path) -> Result<Self, GameError> {
        let text = std::fs::read_to_string(path).map_err(|e| GameError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), GameError> {
        std::fs::write(path, self.to_json()).map_err(|e| GameError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Lists every invariant violation of `g`; empty means valid.
pub fn validate_game(g: &MarkovGame) -> Vec<Violation> {
    let mut out = Vec::new();
    for h in 0..g.horizon {
        for s in 0..g.states[h] {
            for a in 0..g.max_actions[h] {
                for b in 0..g.min_actions[h] {
                    let r = g.mean_return(h, s, a, b);
                    if !(0.0..=1.0).contains(&r) {
                        out.push(Violation::ReturnOutOfRange {
                            step: h,
                            state: s,
                            max_action: a,
                            min_action: b,
                            value: r,
                        });
                    }
                    let row = g.transition(h, s, a, b);
                    for (next, &p) in row.iter().enumerate() {
                        if p < 0.0 {
                            out.push(Violation::NegativeProbability {
                                step: h,
                                state: s,
                                max_action: a,
                                min_action: b,
                                next_state: next,
                                value: p,
                            });
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    // written as a negation so NaN rows are reported
                    if !((sum - 1.0).abs() <= STOCHASTIC_TOL) {
                        out.push(Violation::NotStochastic {
                            step: h,
                            state: s,
                            max_action: a,
                            min_action: b,
                            sum,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Plays one step: returns the realized return and the next state.
///
/// For Bernoulli cells the return draw happens before the transition draw,
/// so the number of uniforms consumed depends only on the cell.
pub fn sample_step<R: Rng + ?Sized>(
    g: &MarkovGame,
    h: usize,
    s: usize,
    a: usize,
    b: usize,
    rng: &mut R,
) -> Result<(f64, usize), GameError> {
    g.check_index(h, s, a, b)?;
    let mean = g.mean_return(h, s, a, b);
    let ret = if g.is_bernoulli(h, s, a, b) {
        let u: f64 = rng.random();
        if u < mean {
            1.0
        } else {
            0.0
        }
    } else {
        mean
    };
    let next = sample_categorical(g.transition(h, s, a, b), rng);
    Ok((ret, next))
}

/// Random game with flat-Dirichlet transition rows and uniform returns.
pub fn random_game<R: Rng + ?Sized>(
    horizon: usize,
    states: usize,
    max_actions: usize,
    min_actions: usize,
    rng: &mut R,
    mode: ReturnMode,
) -> Result<MarkovGame, GameError> {
    let mut g = MarkovGame::uniform_sizes(horizon, states, max_actions, min_actions)?;
    for h in 0..horizon {
        for s in 0..states {
            for a in 0..max_actions {
                for b in 0..min_actions {
                    let r: f64 = rng.random();
                    g.set_return(h, s, a, b, r);
                    if mode == ReturnMode::Bernoulli {
                        g.set_bernoulli(h, s, a, b, true);
                    }
                    let row = g.transition_mut(h, s, a, b);
                    fill_dirichlet(row, rng);
                }
            }
        }
    }
    Ok(g)
}

fn fill_dirichlet<R: Rng + ?Sized>(row: &mut [f64], rng: &mut R) {
    let mut total = 0.0;
    for p in row.iter_mut() {
        let x: f64 = Exp1.sample(rng);
        *p = x;
        total += x;
    }
    for p in row.iter_mut() {
        *p /= total;
    }
    // renormalize once more so the row sum is 1 to within a couple of ulps
    let total: f64 = row.iter().sum();
    for p in row.iter_mut() {
        *p /= total;
    }
}

/// One step of feedback as seen by a learner in an unknown game.
///
/// There is deliberately no field for the opponent's action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepFeedback {
    pub step: usize,
    pub state: usize,
    pub action: usize,
    pub ret: f64,
    pub next_state: usize,
}

/// Full record of one step, including the opponent's action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: usize,
    pub max_action: usize,
    pub min_action: usize,
    pub ret: f64,
    pub next_state: usize,
}

/// A played episode. The ledger keeps `min_action`; what a learner may see
/// is given by [`EpisodeRecord::learner_view`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub initial_state: usize,
    pub steps: Vec<StepRecord>,
    pub informed: bool,
}

impl EpisodeRecord {
    /// Per-step learner feedback; opponent actions are present only in
    /// informed mode.
    pub fn learner_view(&self) -> Vec<(StepFeedback, Option<usize>)> {
        self.steps
            .iter()
            .enumerate()
            .map(|(h, st)| {
                let fb = StepFeedback {
                    step: h,
                    state: st.state,
                    action: st.max_action,
                    ret: st.ret,
                    next_state: st.next_state,
                };
                (fb, self.informed.then_some(st.min_action))
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Policies

/// A Markov policy: one distribution over own actions per step and state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Vec<f64>>>", into = "Vec<Vec<Vec<f64>>>")]
pub struct MarkovPolicy {
    actions: Vec<usize>,
    probs: Vec<Vec<f64>>,
}

impl MarkovPolicy {
    /// Uniform policy for the given per-step state and action counts.
    pub fn uniform(states: &[usize], actions: &[usize]) -> Self {
        assert_eq!(states.len(), actions.len(), "one state count per step");
        let probs = states
            .iter()
            .zip(actions)
            .map(|(&n, &k)| vec![1.0 / k as f64; n * k])
            .collect();
        Self {
            actions: actions.to_vec(),
            probs,
        }
    }

    /// Uniform policy for the max player of `g`.
    pub fn uniform_max(g: &MarkovGame) -> Self {
        Self::uniform(&g.states[..g.horizon], &g.max_actions)
    }

    /// Uniform policy for the min player of `g`.
    pub fn uniform_min(g: &MarkovGame) -> Self {
        Self::uniform(&g.states[..g.horizon], &g.min_actions)
    }

    /// Deterministic policy from `choice[h][s]`.
    pub fn deterministic(choice: &[Vec<usize>], actions: &[usize]) -> Self {
        let probs = choice
            .iter()
            .zip(actions)
            .map(|(row, &k)| {
                let mut p = vec![0.0; row.len() * k];
                for (s, &a) in row.iter().enumerate() {
                    p[s * k + a] = 1.0;
                }
                p
            })
            .collect();
        Self {
            actions: actions.to_vec(),
            probs,
        }
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn num_actions(&self, h: usize) -> usize {
        self.actions[h]
    }

    pub fn num_states(&self, h: usize) -> usize {
        self.probs[h].len() / self.actions[h]
    }

    pub fn dist(&self, h: usize, s: usize) -> &[f64] {
        let k = self.actions[h];
        &self.probs[h][s * k..(s + 1) * k]
    }

    pub fn dist_mut(&mut self, h: usize, s: usize) -> &mut [f64] {
        let k = self.actions[h];
        &mut self.probs[h][s * k..(s + 1) * k]
    }

    pub fn prob(&self, h: usize, s: usize, a: usize) -> f64 {
        self.probs[h][s * self.actions[h] + a]
    }

    /// Checks every distribution; returns a description of the first problem.
    pub fn check_distributions(&self, tol: f64) -> Result<(), String> {
        for h in 0..self.horizon() {
            for s in 0..self.num_states(h) {
                let d = self.dist(h, s);
                if let Some(p) = d.iter().find(|p| !(**p >= 0.0)) {
                    return Err(format!("negative or NaN mass {p} at (h={h}, s={s})"));
                }
                let sum: f64 = d.iter().sum();
                if (sum - 1.0).abs() > tol {
                    return Err(format!("mass {sum} at (h={h}, s={s})"));
                }
            }
        }
        Ok(())
    }

    /// True when the shape matches the max player of `g`.
    pub fn fits_max(&self, g: &MarkovGame) -> bool {
        self.fits(g, &g.max_actions)
    }

    /// True when the shape matches the min player of `g`.
    pub fn fits_min(&self, g: &MarkovGame) -> bool {
        self.fits(g, &g.min_actions)
    }

    fn fits(&self, g: &MarkovGame, actions: &[usize]) -> bool {
        self.actions == actions
            && (0..g.horizon).all(|h| self.probs[h].len() == g.states[h] * actions[h])
    }

    /// Samples an action at `(h, s)`.
    pub fn sample<R: Rng + ?Sized>(&self, h: usize, s: usize, rng: &mut R) -> usize {
        sample_categorical(self.dist(h, s), rng)
    }

    /// Heap bytes used by the probability tables.
    pub fn table_len(&self) -> usize {
        self.probs.iter().map(Vec::len).sum()
    }
}

impl TryFrom<Vec<Vec<Vec<f64>>>> for MarkovPolicy {
    type Error = String;

    fn try_from(nested: Vec<Vec<Vec<f64>>>) -> Result<Self, Self::Error> {
        let mut actions = Vec::with_capacity(nested.len());
        let mut probs = Vec::with_capacity(nested.len());
        for (h, step) in nested.into_iter().enumerate() {
            let k = step.first().map_or(0, Vec::len);
            if k == 0 || step.iter().any(|d| d.len() != k) {
                return Err(format!("step {h}: every state needs the same non-zero action count"));
            }
            actions.push(k);
            probs.push(step.into_iter().flatten().collect());
        }
        let policy = Self { actions, probs };
        policy.check_distributions(1e-9)?;
        Ok(policy)
    }
}

impl From<MarkovPolicy> for Vec<Vec<Vec<f64>>> {
    fn from(p: MarkovPolicy) -> Self {
        p.probs
            .iter()
            .zip(&p.actions)
            .map(|(flat, &k)| flat.chunks(k).map(<[f64]>::to_vec).collect())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Game files

#[derive(Debug, Serialize, Deserialize)]
struct GameSizes {
    states: Vec<usize>,
    max_actions: Vec<usize>,
    min_actions: Vec<usize>,
}

/// On-disk game format; nested arrays are `[h][s][a][b]` (and `[s']` for
/// transitions).
#[derive(Debug, Serialize, Deserialize)]
struct GameFile {
    horizon: usize,
    sizes: GameSizes,
    transitions: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
    returns: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bernoulli_flags: Option<Vec<Vec<Vec<Vec<bool>>>>>,
}

impl GameFile {
    fn from_game(g: &MarkovGame) -> Self {
        let mut transitions = Vec::new();
        let mut returns = Vec::new();
        let mut flags = Vec::new();
        for h in 0..g.horizon {
            let mut t_h = Vec::new();
            let mut r_h = Vec::new();
            let mut f_h = Vec::new();
            for s in 0..g.states[h] {
                let mut t_s = Vec::new();
                let mut r_s = Vec::new();
                let mut f_s = Vec::new();
                for a in 0..g.max_actions[h] {
                    t_s.push(
                        (0..g.min_actions[h])
                            .map(|b| g.transition(h, s, a, b).to_vec())
                            .collect(),
                    );
                    r_s.push((0..g.min_actions[h]).map(|b| g.mean_return(h, s, a, b)).collect());
                    f_s.push((0..g.min_actions[h]).map(|b| g.is_bernoulli(h, s, a, b)).collect());
                }
                t_h.push(t_s);
                r_h.push(r_s);
                f_h.push(f_s);
            }
            transitions.push(t_h);
            returns.push(r_h);
            flags.push(f_h);
        }
        Self {
            horizon: g.horizon,
            sizes: GameSizes {
                states: g.states.clone(),
                max_actions: g.max_actions.clone(),
                min_actions: g.min_actions.clone(),
            },
            transitions,
            returns,
            bernoulli_flags: g.has_bernoulli_returns().then_some(flags),
        }
    }

    fn into_game(self) -> Result<MarkovGame, GameError> {
        let mut dims = Vec::new();
        fn dim(dims: &mut Vec<Violation>, detail: String) {
            dims.push(Violation::Dimension { detail });
        }
        if self.sizes.max_actions.len() != self.horizon {
            dim(&mut dims, format!(
                "horizon {} but {} max-action sizes",
                self.horizon,
                self.sizes.max_actions.len()
            ));
        }
        if self.transitions.len() != self.horizon || self.returns.len() != self.horizon {
            dim(&mut dims, format!(
                "horizon {} but {} transition steps and {} return steps",
                self.horizon,
                self.transitions.len(),
                self.returns.len()
            ));
        }
        if !dims.is_empty() {
            return Err(GameError::Invalid(dims));
        }
        let mut g = MarkovGame::new(self.sizes.states, self.sizes.max_actions, self.sizes.min_actions)?;
        for h in 0..g.horizon {
            let (ns, na, nb, nn) = (g.states[h], g.max_actions[h], g.min_actions[h], g.states[h + 1]);
            let t = &self.transitions[h];
            let r = &self.returns[h];
            let shape_ok = t.len() == ns
                && r.len() == ns
                && t.iter().all(|ts| {
                    ts.len() == na && ts.iter().all(|ta| ta.len() == nb && ta.iter().all(|row| row.len() == nn))
                })
                && r.iter().all(|rs| rs.len() == na && rs.iter().all(|ra| ra.len() == nb));
            if !shape_ok {
                dim(&mut dims, format!("step {h}: tensor shape does not match sizes ({ns}, {na}, {nb}, {nn})"));
                continue;
            }
            for s in 0..ns {
                for a in 0..na {
                    for b in 0..nb {
                        g.set_return(h, s, a, b, r[s][a][b]);
                        g.transition_mut(h, s, a, b).copy_from_slice(&t[s][a][b]);
                    }
                }
            }
        }
        if let Some(flags) = &self.bernoulli_flags {
            for h in 0..g.horizon {
                let (ns, na, nb) = (g.states[h], g.max_actions[h], g.min_actions[h]);
                let ok = flags.get(h).is_some_and(|f| {
                    f.len() == ns && f.iter().all(|fs| fs.len() == na && fs.iter().all(|fa| fa.len() == nb))
                });
                if !ok {
                    dim(&mut dims, format!("step {h}: bernoulli_flags shape does not match sizes"));
                    continue;
                }
                for s in 0..ns {
                    for a in 0..na {
                        for b in 0..nb {
                            g.set_bernoulli(h, s, a, b, flags[h][s][a][b]);
                        }
                    }
                }
            }
        }
        dims.extend(validate_game(&g));
        if dims.is_empty() {
            Ok(g)
        } else {
            Err(GameError::Invalid(dims))
        }
    }
}

// ---------------------------------------------------------------------------
// Multi-player general-sum games

/// Mixed-radix codec for joint opponent actions, player 2 least significant.
///
/// At step `h` with opponent action counts `(A_2, ..., A_m)` the joint action
/// `(b_2, ..., b_m)` has flat index `b_2 + A_2 * (b_3 + A_3 * (...))`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointActionCodec {
    radices: Vec<Vec<usize>>,
}

impl JointActionCodec {
    pub fn new(radices: Vec<Vec<usize>>) -> Result<Self, GameError> {
        for step in &radices {
            joint_size(step)?;
        }
        Ok(Self { radices })
    }

    pub fn radices(&self, h: usize) -> &[usize] {
        &self.radices[h]
    }

    pub fn size(&self, h: usize) -> usize {
        self.radices[h].iter().product()
    }

    pub fn encode(&self, h: usize, actions: &[usize]) -> usize {
        let radices = &self.radices[h];
        debug_assert_eq!(actions.len(), radices.len());
        let mut idx = 0;
        for (&a, &r) in actions.iter().zip(radices).rev() {
            debug_assert!(a < r);
            idx = idx * r + a;
        }
        idx
    }

    pub fn decode(&self, h: usize, mut idx: usize) -> Vec<usize> {
        self.radices[h]
            .iter()
            .map(|&r| {
                let a = idx % r;
                idx /= r;
                a
            })
            .collect()
    }
}

fn joint_size(radices: &[usize]) -> Result<usize, GameError> {
    radices
        .iter()
        .try_fold(1usize, |acc, &r| acc.checked_mul(r))
        .ok_or(GameError::Capacity("product of joint action sizes overflows"))
}

/// An `m`-player general-sum Markov game with per-player returns in `[0, 1]`.
///
/// Joint actions `(a_1, ..., a_m)` are flattened with player 1 least
/// significant, so that `joint = a_1 + A_1 * opponent_index` where
/// `opponent_index` follows [`JointActionCodec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralSumGame {
    horizon: usize,
    states: Vec<usize>,
    actions: Vec<Vec<usize>>,
    joint: Vec<usize>,
    transitions: Vec<Vec<f64>>,
    returns: Vec<Vec<Vec<f64>>>,
}

impl GeneralSumGame {
    /// Zero-return game with all transitions to state 0; `actions[i][h]` is
    /// player `i`'s action count at step `h`.
    pub fn new(states: Vec<usize>, actions: Vec<Vec<usize>>) -> Result<Self, GameError> {
        let horizon = states.len().checked_sub(1).ok_or(GameError::ZeroSize("horizon"))?;
        if horizon == 0 {
            return Err(GameError::ZeroSize("horizon"));
        }
        if actions.is_empty() {
            return Err(GameError::ZeroSize("players"));
        }
        if actions.iter().any(|p| p.len() != horizon) {
            return Err(GameError::Invalid(vec![Violation::Dimension {
                detail: format!("every player needs {horizon} action sizes"),
            }]));
        }
        if states.contains(&0) || actions.iter().flatten().any(|&a| a == 0) {
            return Err(GameError::ZeroSize("states or actions"));
        }
        let mut joint = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let radices: Vec<usize> = actions.iter().map(|p| p[h]).collect();
            joint.push(joint_size(&radices)?);
        }
        let mut transitions = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let cells = states[h]
                .checked_mul(joint[h])
                .and_then(|c| c.checked_mul(states[h + 1]))
                .ok_or(GameError::Capacity("transition tensor size overflows"))?;
            let mut rows = vec![0.0; cells];
            for row in rows.chunks_mut(states[h + 1]) {
                row[0] = 1.0;
            }
            transitions.push(rows);
        }
        let returns = (0..actions.len())
            .map(|_| (0..horizon).map(|h| vec![0.0; states[h] * joint[h]]).collect())
            .collect();
        Ok(Self {
            horizon,
            states,
            actions,
            joint,
            transitions,
            returns,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_players(&self) -> usize {
        self.actions.len()
    }

    pub fn num_states(&self, h: usize) -> usize {
        self.states[h]
    }

    pub fn num_actions(&self, player: usize, h: usize) -> usize {
        self.actions[player][h]
    }

    /// Flat joint index of `(a_1, ..., a_m)`, player 1 least significant.
    pub fn joint_index(&self, h: usize, actions: &[usize]) -> usize {
        let mut idx = 0;
        for (p, &a) in actions.iter().enumerate().rev() {
            idx = idx * self.actions[p][h] + a;
        }
        idx
    }

    pub fn transition(&self, h: usize, s: usize, joint: usize) -> &[f64] {
        let n = self.states[h + 1];
        let start = (s * self.joint[h] + joint) * n;
        &self.transitions[h][start..start + n]
    }

    pub fn transition_mut(&mut self, h: usize, s: usize, joint: usize) -> &mut [f64] {
        let n = self.states[h + 1];
        let start = (s * self.joint[h] + joint) * n;
        &mut self.transitions[h][start..start + n]
    }

    pub fn player_return(&self, player: usize, h: usize, s: usize, joint: usize) -> f64 {
        self.returns[player][h][s * self.joint[h] + joint]
    }

    pub fn set_player_return(&mut self, player: usize, h: usize, s: usize, joint: usize, v: f64) {
        let j = self.joint[h];
        self.returns[player][h][s * j + joint] = v;
    }

    /// Stochasticity and range checks for the shared transitions and every
    /// player's returns.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for h in 0..self.horizon {
            let a1 = self.actions[0][h];
            for s in 0..self.states[h] {
                for joint in 0..self.joint[h] {
                    let (a, b) = (joint % a1, joint / a1);
                    let row = self.transition(h, s, joint);
                    let sum: f64 = row.iter().sum();
                    if row.iter().any(|&p| p < 0.0) || !((sum - 1.0).abs() <= STOCHASTIC_TOL) {
                        out.push(Violation::NotStochastic {
                            step: h,
                            state: s,
                            max_action: a,
                            min_action: b,
                            sum,
                        });
                    }
                    for p in 0..self.num_players() {
                        let r = self.player_return(p, h, s, joint);
                        if !(0.0..=1.0).contains(&r) {
                            out.push(Violation::ReturnOutOfRange {
                                step: h,
                                state: s,
                                max_action: a,
                                min_action: b,
                                value: r,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Random general-sum game with flat-Dirichlet rows and uniform returns.
pub fn random_general_sum<R: Rng + ?Sized>(
    horizon: usize,
    states: usize,
    actions: &[usize],
    rng: &mut R,
) -> Result<GeneralSumGame, GameError> {
    let per_player = actions.iter().map(|&a| vec![a; horizon]).collect();
    let mut g = GeneralSumGame::new(vec![states; horizon + 1], per_player)?;
    for h in 0..horizon {
        for s in 0..states {
            for joint in 0..g.joint[h] {
                for p in 0..actions.len() {
                    let r: f64 = rng.random();
                    g.set_player_return(p, h, s, joint, r);
                }
                fill_dirichlet(g.transition_mut(h, s, joint), rng);
            }
        }
    }
    Ok(g)
}

/// Player 1's view of a general-sum game as a two-player zero-sum game.
///
/// The min player's action set is the product of all opponents' action
/// sets, flattened by the returned codec. Returns are player 1's only.
pub fn to_player1_view(g: &GeneralSumGame) -> Result<(MarkovGame, JointActionCodec), GameError> {
    if g.num_players() < 2 {
        return Err(GameError::ZeroSize("opponents (need m >= 2)"));
    }
    let radices: Vec<Vec<usize>> = (0..g.horizon)
        .map(|h| g.actions[1..].iter().map(|p| p[h]).collect())
        .collect();
    let codec = JointActionCodec::new(radices)?;
    let min_actions: Vec<usize> = (0..g.horizon).map(|h| codec.size(h)).collect();
    let mut view = MarkovGame::new(g.states.clone(), g.actions[0].clone(), min_actions)?;
    for h in 0..g.horizon {
        let a1 = g.actions[0][h];
        for s in 0..g.states[h] {
            for a in 0..a1 {
                for b in 0..view.num_min_actions(h) {
                    let joint = a + a1 * b;
                    view.set_return(h, s, a, b, g.player_return(0, h, s, joint));
                    view.transition_mut(h, s, a, b).copy_from_slice(g.transition(h, s, joint));
                }
            }
        }
    }
    Ok((view, codec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn random_game_is_valid_and_reproducible() {
        let g1 = random_game(3, 3, 2, 2, &mut rng(1), ReturnMode::Deterministic).unwrap();
        let g2 = random_game(3, 3, 2, 2, &mut rng(1), ReturnMode::Deterministic).unwrap();
        assert!(validate_game(&g1).is_empty());
        assert_eq!(g1, g2);
        let single = random_game(1, 1, 2, 2, &mut rng(2), ReturnMode::Bernoulli).unwrap();
        assert_eq!(single.horizon(), 1);
        assert!(single.is_bernoulli(0, 0, 1, 1));
    }

    #[test]
    fn zero_sizes_are_rejected() {
        assert!(matches!(
            random_game(0, 2, 2, 2, &mut rng(0), ReturnMode::Deterministic),
            Err(GameError::ZeroSize(_))
        ));
        assert!(matches!(
            random_game(2, 0, 2, 2, &mut rng(0), ReturnMode::Deterministic),
            Err(GameError::ZeroSize(_))
        ));
        assert!(matches!(
            random_game(2, 2, 2, 0, &mut rng(0), ReturnMode::Deterministic),
            Err(GameError::ZeroSize(_))
        ));
    }

    #[test]
    fn scaled_row_gives_one_stochasticity_violation() {
        let mut g = random_game(2, 3, 2, 2, &mut rng(3), ReturnMode::Deterministic).unwrap();
        for p in g.transition_mut(1, 2, 1, 0) {
            *p *= 1.5;
        }
        let v = validate_game(&g);
        assert_eq!(v.len(), 1);
        assert!(matches!(
            v[0],
            Violation::NotStochastic { step: 1, state: 2, max_action: 1, min_action: 0, .. }
        ));
    }

    #[test]
    fn out_of_range_return_is_reported() {
        let mut g = random_game(2, 2, 2, 2, &mut rng(4), ReturnMode::Deterministic).unwrap();
        g.set_return(0, 0, 0, 0, 1.2);
        let v = validate_game(&g);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::ReturnOutOfRange { value, .. } if value == 1.2));
    }

    #[test]
    fn nan_row_is_reported() {
        let mut g = MarkovGame::uniform_sizes(1, 1, 1, 1).unwrap();
        g.transition_mut(0, 0, 0, 0)[0] = f64::NAN;
        assert_eq!(validate_game(&g).len(), 1);
    }

    #[test]
    fn point_mass_row_is_followed() {
        let mut g = MarkovGame::new(vec![1, 3], vec![1], vec![1]).unwrap();
        g.transition_mut(0, 0, 0, 0).copy_from_slice(&[0.0, 1.0, 0.0]);
        let mut r = rng(5);
        for _ in 0..100 {
            assert_eq!(sample_step(&g, 0, 0, 0, 0, &mut r).unwrap().1, 1);
        }
    }

    #[test]
    fn sample_step_rejects_bad_indices() {
        let g = MarkovGame::uniform_sizes(2, 2, 2, 3).unwrap();
        let mut r = rng(0);
        let err = sample_step(&g, 0, 0, 0, 3, &mut r).unwrap_err();
        assert!(err.to_string().contains("min action"), "{err}");
        let err = sample_step(&g, 2, 0, 0, 0, &mut r).unwrap_err();
        assert!(err.to_string().contains("step"), "{err}");
        let err = sample_step(&g, 1, 2, 0, 0, &mut r).unwrap_err();
        assert!(err.to_string().contains("state"), "{err}");
    }

    #[test]
    fn bernoulli_returns_are_binary() {
        let mut g = MarkovGame::uniform_sizes(1, 1, 1, 1).unwrap();
        g.set_return(0, 0, 0, 0, 0.3);
        g.set_bernoulli(0, 0, 0, 0, true);
        let mut r = rng(6);
        let n = 20_000;
        let mut hits = 0.0;
        for _ in 0..n {
            let (ret, _) = sample_step(&g, 0, 0, 0, 0, &mut r).unwrap();
            assert!(ret == 0.0 || ret == 1.0);
            hits += ret;
        }
        let mean = hits / n as f64;
        let sigma = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((mean - 0.3).abs() < 4.0 * sigma, "{mean}");
    }

    #[test]
    fn json_round_trip_revalidates() {
        let mut g = random_game(2, 2, 3, 2, &mut rng(7), ReturnMode::Deterministic).unwrap();
        g.set_bernoulli(1, 1, 2, 1, true);
        let back = MarkovGame::from_json(&g.to_json()).unwrap();
        assert_eq!(g, back);

        let mut bad = g.clone();
        bad.set_return(0, 1, 1, 1, -0.5);
        assert!(matches!(MarkovGame::from_json(&bad.to_json()), Err(GameError::Invalid(v)) if v.len() == 1));
    }

    #[test]
    fn json_shape_mismatch_is_a_dimension_violation() {
        let text = r#"{"horizon":1,"sizes":{"states":[1,2],"max_actions":[1],"min_actions":[1]},
            "transitions":[[[[[0.5,0.25,0.25]]]]],"returns":[[[[0.0]]]]}"#;
        match MarkovGame::from_json(text) {
            Err(GameError::Invalid(v)) => assert!(matches!(v[0], Violation::Dimension { .. })),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn policy_serde_validates_distributions() {
        let p: MarkovPolicy = serde_json::from_str("[[[0.25,0.75],[1.0,0.0]]]").unwrap();
        assert_eq!(p.prob(0, 1, 0), 1.0);
        assert!(serde_json::from_str::<MarkovPolicy>("[[[0.5,0.6]]]").is_err());
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<MarkovPolicy>(&text).unwrap(), p);
    }

    #[test]
    fn learner_view_hides_opponent_action_when_unknown() {
        let rec = EpisodeRecord {
            episode: 0,
            initial_state: 0,
            steps: vec![StepRecord { state: 0, max_action: 1, min_action: 3, ret: 0.5, next_state: 0 }],
            informed: false,
        };
        assert_eq!(rec.learner_view()[0].1, None);
        let informed = EpisodeRecord { informed: true, ..rec };
        assert_eq!(informed.learner_view()[0].1, Some(3));
    }

    #[test]
    fn swap_roles_complements_and_transposes() {
        let g = random_game(2, 2, 3, 2, &mut rng(8), ReturnMode::Deterministic).unwrap();
        let sw = g.swap_roles();
        assert_eq!(sw.num_max_actions(0), 2);
        assert_eq!(sw.num_min_actions(0), 3);
        assert_eq!(sw.mean_return(1, 1, 1, 2), 1.0 - g.mean_return(1, 1, 2, 1));
        assert_eq!(sw.transition(0, 1, 0, 2), g.transition(0, 1, 2, 0));
        assert!(validate_game(&sw).is_empty());
    }

    #[test]
    fn codec_matches_documented_radix_order() {
        let codec = JointActionCodec::new(vec![vec![2, 2]]).unwrap();
        assert_eq!(codec.size(0), 4);
        assert_eq!(codec.encode(0, &[1, 0]), 1);
        assert_eq!(codec.encode(0, &[0, 1]), 2);
        assert_eq!(codec.decode(0, 3), vec![1, 1]);
    }

    #[test]
    fn codec_overflow_is_a_capacity_error() {
        let huge = vec![vec![usize::MAX / 2, 3]];
        assert!(matches!(JointActionCodec::new(huge), Err(GameError::Capacity(_))));
    }

    #[test]
    fn two_player_view_is_identity_reindexing() {
        let g = random_general_sum(2, 2, &[2, 3], &mut rng(9)).unwrap();
        assert!(g.validate().is_empty());
        let (view, codec) = to_player1_view(&g).unwrap();
        assert!(validate_game(&view).is_empty());
        assert_eq!(codec.size(0), 3);
        for h in 0..2 {
            for s in 0..2 {
                for a in 0..2 {
                    for b in 0..3 {
                        let joint = g.joint_index(h, &[a, b]);
                        assert_eq!(view.mean_return(h, s, a, b), g.player_return(0, h, s, joint));
                        assert_eq!(view.transition(h, s, a, b), g.transition(h, s, joint));
                    }
                }
            }
        }
    }

    #[test]
    fn three_player_view_flattens_opponents() {
        let g = random_general_sum(1, 2, &[2, 2, 2], &mut rng(10)).unwrap();
        let (view, codec) = to_player1_view(&g).unwrap();
        assert_eq!(view.num_min_actions(0), 4);
        let b = codec.encode(0, &[1, 0]);
        assert_eq!(b, 1);
        for s in 0..2 {
            for a in 0..2 {
                let joint = g.joint_index(0, &[a, 1, 0]);
                assert_eq!(view.mean_return(0, s, a, b), g.player_return(0, 0, s, joint));
                assert_eq!(view.transition(0, s, a, b), g.transition(0, s, joint));
            }
        }
    }

    #[test]
    fn single_player_has_no_view() {
        let g = random_general_sum(1, 1, &[2], &mut rng(11)).unwrap();
        assert!(to_player1_view(&g).is_err());
    }

    #[test]
    fn duplicated_columns_mirror_the_base_game() {
        let g = random_game(2, 2, 2, 2, &mut rng(12), ReturnMode::Deterministic).unwrap();
        let d = g.duplicate_min_actions(4).unwrap();
        assert_eq!(d.num_min_actions(1), 8);
        assert_eq!(d.mean_return(1, 1, 0, 7), g.mean_return(1, 1, 0, 1));
        assert_eq!(d.transition(0, 0, 1, 6), g.transition(0, 0, 1, 0));
    }
}
