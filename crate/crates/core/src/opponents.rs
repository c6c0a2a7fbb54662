//! Min-player strategies.
//!
//! Every opponent exposes the Markov policy it plays in the current
//! episode, and `act` always samples from that policy, so the oracle can
//! evaluate the realized pair exactly.

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GameError, LearnerError, OracleError};
use crate::game::{sample_categorical, MarkovGame, MarkovPolicy, StepFeedback};
use crate::hard::{lock_opponent, random_bits};
use crate::learner::{Learner, Policy};
use crate::oracle::{min_best_response, minimax_values};
use crate::vol::{VolHyper, VolLearner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpponentKind {
    Fixed,
    Nash,
    Scripted,
    AdaptiveBestResponse,
    SelfPlayMirror,
}

pub trait Opponent: Send {
    /// Called before episode `k` with the learner's policy for that episode.
    fn begin_episode(&mut self, k: usize, learner: &MarkovPolicy) -> Result<(), OracleError>;

    /// The policy `nu^k` for the current episode.
    fn policy(&self) -> &MarkovPolicy;

    fn act(&mut self, h: usize, s: usize, rng: &mut dyn RngCore) -> usize {
        sample_categorical(self.policy().dist(h, s), rng)
    }

    /// Feedback from the opponent's side: `action` is its own action `b` and
    /// `ret` the max player's return. The max player's action is never shown.
    fn observe(&mut self, _fb: &StepFeedback) -> Result<(), LearnerError> {
        Ok(())
    }

    fn kind(&self) -> OpponentKind;
}

/// Plays one stored policy forever.
#[derive(Debug, Clone)]
pub struct FixedOpponent {
    policy: MarkovPolicy,
    kind: OpponentKind,
}

impl FixedOpponent {
    pub fn new(policy: MarkovPolicy) -> Self {
        Self {
            policy,
            kind: OpponentKind::Fixed,
        }
    }

    pub fn labelled(policy: MarkovPolicy, kind: OpponentKind) -> Self {
        Self { policy, kind }
    }

    /// The min player's half of a Nash pair, computed once.
    pub fn nash(g: &MarkovGame, tol: f64) -> Result<Self, OracleError> {
        Ok(Self {
            policy: minimax_values(g, tol)?.min_policy,
            kind: OpponentKind::Nash,
        })
    }
}

impl Opponent for FixedOpponent {
    fn begin_episode(&mut self, _k: usize, _learner: &MarkovPolicy) -> Result<(), OracleError> {
        Ok(())
    }

    fn policy(&self) -> &MarkovPolicy {
        &self.policy
    }

    fn kind(&self) -> OpponentKind {
        self.kind
    }
}

/// Script file contents: either a list of per-episode policies (cycled if
/// shorter than the run) or a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptSpec {
    Policies(Vec<MarkovPolicy>),
    Generator { hard_lock: HardLockScript },
}

/// Draws a fresh lock key `Y` every episode and plays `nu_Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardLockScript {
    pub seed: u64,
}

impl ScriptSpec {
    pub fn load(path: &Path) -> Result<Self, GameError> {
        let text = std::fs::read_to_string(path).map_err(|source| GameError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
enum ScriptSource {
    List(Vec<MarkovPolicy>),
    Lock { x: Vec<bool>, rng: ChaCha8Rng },
}

#[derive(Debug, Clone)]
pub struct ScriptedOpponent {
    source: ScriptSource,
    current: MarkovPolicy,
    keys: Vec<Vec<bool>>,
}

impl ScriptedOpponent {
    pub fn from_policies(g: &MarkovGame, policies: Vec<MarkovPolicy>) -> Result<Self, OracleError> {
        if policies.is_empty() {
            return Err(OracleError::Dimension("script needs at least one policy"));
        }
        if !policies.iter().all(|p| p.fits_min(g)) {
            return Err(OracleError::Dimension("scripted min-player policy"));
        }
        Ok(Self {
            current: policies[0].clone(),
            source: ScriptSource::List(policies),
            keys: Vec::new(),
        })
    }

    /// Hard-lock generator for the wrapper game with lock key bits `x`.
    pub fn hard_lock(x: &[bool], seed: u64) -> Self {
        Self {
            current: lock_opponent(x, &vec![false; x.len()]),
            source: ScriptSource::Lock {
                x: x.to_vec(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
            keys: Vec::new(),
        }
    }

    /// Builds from a script; `lock_key` is required for generator scripts.
    pub fn from_spec(g: &MarkovGame, spec: ScriptSpec, lock_key: Option<&[bool]>) -> Result<Self, OracleError> {
        match spec {
            ScriptSpec::Policies(p) => Self::from_policies(g, p),
            ScriptSpec::Generator { hard_lock } => {
                let x = lock_key.ok_or(OracleError::Dimension("hard-lock script needs a hard-lock game"))?;
                let o = Self::hard_lock(x, hard_lock.seed);
                if !o.current.fits_min(g) {
                    return Err(OracleError::Dimension("hard-lock script does not fit the game"));
                }
                Ok(o)
            }
        }
    }

    /// Lock keys drawn so far, one per episode (generator scripts only).
    pub fn keys(&self) -> &[Vec<bool>] {
        &self.keys
    }
}

impl Opponent for ScriptedOpponent {
    fn begin_episode(&mut self, k: usize, _learner: &MarkovPolicy) -> Result<(), OracleError> {
        match &mut self.source {
            ScriptSource::List(list) => self.current = list[k % list.len()].clone(),
            ScriptSource::Lock { x, rng } => {
                let y = random_bits(x.len(), rng);
                self.current = lock_opponent(x, &y);
                self.keys.push(y);
            }
        }
        Ok(())
    }

    fn policy(&self) -> &MarkovPolicy {
        &self.current
    }

    fn kind(&self) -> OpponentKind {
        OpponentKind::Scripted
    }
}

/// Recomputes a best response to the learner's policy every `period`
/// episodes, or only once when `period` is `None`.
#[derive(Debug, Clone)]
pub struct AdaptiveBestResponse {
    game: MarkovGame,
    period: Option<usize>,
    current: MarkovPolicy,
    started: bool,
    refreshes: usize,
}

impl AdaptiveBestResponse {
    pub fn new(g: &MarkovGame, period: Option<usize>) -> Result<Self, OracleError> {
        if period == Some(0) {
            return Err(OracleError::Dimension("refresh period must be at least 1"));
        }
        Ok(Self {
            game: g.clone(),
            period,
            current: MarkovPolicy::uniform_min(g),
            started: false,
            refreshes: 0,
        })
    }

    pub fn refreshes(&self) -> usize {
        self.refreshes
    }
}

impl Opponent for AdaptiveBestResponse {
    fn begin_episode(&mut self, k: usize, learner: &MarkovPolicy) -> Result<(), OracleError> {
        let due = !self.started || self.period.is_some_and(|m| k % m == 0);
        if due {
            self.current = min_best_response(&self.game, learner)?.1;
            self.started = true;
            self.refreshes += 1;
        }
        Ok(())
    }

    fn policy(&self) -> &MarkovPolicy {
        &self.current
    }

    fn kind(&self) -> OpponentKind {
        OpponentKind::AdaptiveBestResponse
    }
}

/// V-OL playing the min player's side on complemented returns `1 - r`.
/// Its tables are indexed by the min player's actions only.
#[derive(Debug, Clone)]
pub struct SelfPlayMirror {
    learner: VolLearner,
    snapshot: MarkovPolicy,
}

impl SelfPlayMirror {
    pub fn new(g: &MarkovGame, hyper: VolHyper) -> Result<Self, LearnerError> {
        let learner = VolLearner::new(g.state_sizes(), g.min_action_sizes(), hyper)?;
        Ok(Self {
            snapshot: learner.policy(),
            learner,
        })
    }

    pub fn learner(&self) -> &VolLearner {
        &self.learner
    }
}

impl Opponent for SelfPlayMirror {
    fn begin_episode(&mut self, _k: usize, _learner: &MarkovPolicy) -> Result<(), OracleError> {
        self.snapshot = self.learner.policy();
        Ok(())
    }

    fn policy(&self) -> &MarkovPolicy {
        &self.snapshot
    }

    fn observe(&mut self, fb: &StepFeedback) -> Result<(), LearnerError> {
        self.learner.observe(&StepFeedback {
            ret: 1.0 - fb.ret,
            ..*fb
        })
    }

    fn kind(&self) -> OpponentKind {
        OpponentKind::SelfPlayMirror
    }
}
