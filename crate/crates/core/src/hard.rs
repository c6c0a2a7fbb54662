//! Combination-lock hard instances and the bandit reduction.
//!
//! A lock of length `H` has decision steps `0..=H`, so the generated games
//! have horizon `H + 1`. Layer 0 holds the start state, layers `1..=H` hold
//! two states `w in {0, 1}`, and layer `H + 1` is a single sink. Bit
//! strings are stored 0-based: `x[h - 1]` is the lock bit used at layer `h`.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{GameError, LearnerError};
use crate::game::{MarkovGame, MarkovPolicy, StepFeedback};
use crate::learner::Learner;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardInstanceSpec {
    pub x: Vec<bool>,
    pub y: Vec<bool>,
    pub epsilon: f64,
}

impl HardInstanceSpec {
    pub fn new(x: Vec<bool>, y: Vec<bool>, epsilon: f64) -> Result<Self, GameError> {
        let spec = Self { x, y, epsilon };
        spec.validate()?;
        Ok(spec)
    }

    pub fn random<R: Rng + ?Sized>(lock: usize, epsilon: f64, rng: &mut R) -> Result<Self, GameError> {
        Self::new(random_bits(lock, rng), random_bits(lock, rng), epsilon)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        check_lock(&self.x, self.epsilon)?;
        if self.y.len() != self.x.len() {
            return Err(GameError::Spec(format!(
                "X has {} bits but Y has {}",
                self.x.len(),
                self.y.len()
            )));
        }
        Ok(())
    }

    /// Lock length `H`.
    pub fn lock(&self) -> usize {
        self.x.len()
    }
}

fn check_lock(x: &[bool], epsilon: f64) -> Result<(), GameError> {
    if x.is_empty() {
        return Err(GameError::Spec("lock length must be at least 1".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(GameError::Spec(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if epsilon > 0.5 {
        return Err(GameError::Spec(format!("epsilon {epsilon} would push 1/2 + epsilon past 1")));
    }
    Ok(())
}

pub fn random_bits<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<bool> {
    (0..n).map(|_| rng.random()).collect()
}

/// `min(sqrt(2^H / K), 1/4)`.
pub fn epsilon_hk(lock: usize, episodes: usize) -> f64 {
    (2f64.powi(lock as i32) / episodes as f64).sqrt().min(0.25)
}

fn lock_sizes(lock: usize) -> Vec<usize> {
    let mut states = vec![1];
    states.extend(std::iter::repeat_n(2, lock));
    states.push(1);
    states
}

fn bit(b: bool) -> usize {
    b as usize
}

/// The lock MDP `M_{X,Y,eps}` as a game with one min-player action.
pub fn combination_lock_mdp(spec: &HardInstanceSpec) -> Result<MarkovGame, GameError> {
    spec.validate()?;
    let lock = spec.lock();
    let mut g = MarkovGame::new(lock_sizes(lock), vec![2; lock + 1], vec![1; lock + 1])?;
    for a in 0..2 {
        g.transition_mut(0, 0, a, 0).copy_from_slice(&[0.5, 0.5]);
    }
    for h in 1..lock {
        let (xh, yh, yn) = (bit(spec.x[h - 1]), bit(spec.y[h - 1]), bit(spec.y[h]));
        for w in 0..2 {
            for a in 0..2 {
                let next = if w == yh && a == xh ^ yh { yn } else { 1 - yn };
                let row = g.transition_mut(h, w, a, 0);
                row.fill(0.0);
                row[next] = 1.0;
            }
        }
    }
    let yl = bit(spec.y[lock - 1]);
    for w in 0..2 {
        for a in 0..2 {
            let mean = if w == yl { 0.5 + spec.epsilon } else { 0.5 - spec.epsilon };
            g.set_return(lock, w, a, 0, mean);
            g.set_bernoulli(lock, w, a, 0, true);
        }
    }
    Ok(g)
}

/// Successor parity under each of the four min-player actions: keep, flip,
/// keep on `a = 0`, flip on `a = 0`.
fn wrapper_next(i: usize, a: usize, b: usize) -> usize {
    match b {
        0 => i,
        1 => 1 - i,
        2 => i ^ a,
        _ => 1 - (i ^ a),
    }
}

/// At the last lock layer the min-player action picks which state pays
/// `1/2 + eps`: actions 0 and 2 favour state 0, actions 1 and 3 state 1.
fn good_terminal(b: usize) -> usize {
    b % 2
}

/// The Markov-game wrapper with four min-player actions. The lock key `Y`
/// lives entirely in the min player's policy, see [`lock_opponent`].
pub fn hard_markov_game(x: &[bool], epsilon: f64) -> Result<MarkovGame, GameError> {
    check_lock(x, epsilon)?;
    let lock = x.len();
    let mut g = MarkovGame::new(lock_sizes(lock), vec![2; lock + 1], vec![4; lock + 1])?;
    for a in 0..2 {
        for b in 0..4 {
            g.transition_mut(0, 0, a, b).copy_from_slice(&[0.5, 0.5]);
        }
    }
    for h in 1..lock {
        for i in 0..2 {
            for a in 0..2 {
                for b in 0..4 {
                    let row = g.transition_mut(h, i, a, b);
                    row.fill(0.0);
                    row[wrapper_next(i, a, b)] = 1.0;
                }
            }
        }
    }
    for w in 0..2 {
        for a in 0..2 {
            for b in 0..4 {
                let mean = if w == good_terminal(b) { 0.5 + epsilon } else { 0.5 - epsilon };
                g.set_return(lock, w, a, b, mean);
                g.set_bernoulli(lock, w, a, b, true);
            }
        }
    }
    Ok(g)
}

/// The deterministic min-player policy `nu_Y` under which the max player of
/// [`hard_markov_game`] faces exactly `M_{X,Y,eps}`.
pub fn lock_opponent(x: &[bool], y: &[bool]) -> MarkovPolicy {
    let lock = x.len();
    assert_eq!(lock, y.len(), "X and Y must have the same length");
    let mut choice: Vec<Vec<usize>> = vec![vec![0]];
    for h in 1..lock {
        let (c, yh, yn) = (bit(x[h - 1]) ^ bit(y[h - 1]), bit(y[h - 1]), bit(y[h]));
        let row = (0..2)
            .map(|i| {
                if i == yh {
                    // Action c must lead to yn, the other action to 1 - yn.
                    if wrapper_next(i, c, 2) == yn {
                        2
                    } else {
                        3
                    }
                } else if i == 1 - yn {
                    0
                } else {
                    1
                }
            })
            .collect();
        choice.push(row);
    }
    choice.push(vec![bit(y[lock - 1]); 2]);
    MarkovPolicy::deterministic(&choice, &vec![4; lock + 1])
}

/// `pi*(w, h) = x_h xor w` on lock layers; action 0 elsewhere.
pub fn lock_optimal_policy(x: &[bool]) -> MarkovPolicy {
    let lock = x.len();
    let mut choice = vec![vec![0]];
    for h in 1..=lock {
        let xh = if h < lock { bit(x[h - 1]) } else { 0 };
        choice.push((0..2).map(|w| xh ^ w).collect());
    }
    MarkovPolicy::deterministic(&choice, &vec![2; lock + 1])
}

/// One episode of the bandit reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionEpisode {
    pub y: Vec<bool>,
    /// Actions at steps `0..=H`.
    pub actions: Vec<usize>,
    /// `A xor Y` on lock layers `1..=H`.
    pub arm: Vec<bool>,
    pub hit: bool,
    pub reward: f64,
}

/// Whether an arm opens the lock. Only layers `1..H` carry a lock check;
/// the action on the last layer does not influence the reward.
pub fn arm_hits(arm: &[bool], x: &[bool]) -> bool {
    let n = x.len() - 1;
    arm[..n] == x[..n]
}

/// Drives an episodic learner through the bandit reduction: each episode
/// draws a fresh `Y`, shows the learner the path `s_0, s_{y_1}, .., s_{y_H}`,
/// pulls arm `A xor Y` and relays the Bernoulli reward as the last return.
pub fn bandit_reduction_run<L: Learner + ?Sized>(
    learner: &mut L,
    x: &[bool],
    epsilon: f64,
    episodes: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<ReductionEpisode>, LearnerError> {
    let lock = x.len();
    let mut out = Vec::with_capacity(episodes);
    for k in 0..episodes {
        learner.begin_episode(k)?;
        let y = random_bits(lock, rng);
        let mut actions = Vec::with_capacity(lock + 1);
        let a0 = learner.act(0, 0, rng);
        actions.push(a0);
        learner.observe(&StepFeedback { step: 0, state: 0, action: a0, ret: 0.0, next_state: bit(y[0]) })?;
        for h in 1..lock {
            let s = bit(y[h - 1]);
            let a = learner.act(h, s, rng);
            actions.push(a);
            learner.observe(&StepFeedback { step: h, state: s, action: a, ret: 0.0, next_state: bit(y[h]) })?;
        }
        let s = bit(y[lock - 1]);
        let a = learner.act(lock, s, rng);
        actions.push(a);
        let arm: Vec<bool> = (1..=lock).map(|h| (actions[h] == 1) ^ y[h - 1]).collect();
        let hit = arm_hits(&arm, x);
        let mean = if hit { 0.5 } else { 0.5 - epsilon };
        let reward = if rng.random::<f64>() < mean { 1.0 } else { 0.0 };
        learner.observe(&StepFeedback { step: lock, state: s, action: a, ret: reward, next_state: 0 })?;
        out.push(ReductionEpisode { y, actions, arm, hit, reward });
    }
    Ok(out)
}

/// Outcome of one episode as the learner sees it: the lock-layer states,
/// the actions at steps `0..=H`, and the final reward bit.
pub type Atom = (Vec<usize>, Vec<usize>, bool);

fn add(atoms: &mut BTreeMap<Atom, f64>, key: Atom, p: f64) {
    if p > 0.0 {
        *atoms.entry(key).or_insert(0.0) += p;
    }
}

/// Exact atom probabilities when a Markov policy interacts directly with
/// `M_{X,Y,eps}` for a uniformly random `Y`.
pub fn direct_outcome_atoms(x: &[bool], epsilon: f64, policy: &MarkovPolicy) -> BTreeMap<Atom, f64> {
    let lock = x.len();
    let mut atoms = BTreeMap::new();
    let prior = 0.5f64.powi(lock as i32);
    for code in 0..1usize << lock {
        let y: Vec<bool> = (0..lock).map(|i| code >> i & 1 == 1).collect();
        let g = combination_lock_mdp(&HardInstanceSpec { x: x.to_vec(), y, epsilon }).expect("valid spec");
        let mut frontier = vec![(0usize, Vec::new(), Vec::new(), prior)];
        for h in 0..=lock {
            let mut next_frontier = Vec::new();
            for (s, states, actions, p) in frontier {
                for a in 0..2 {
                    let pa = p * policy.prob(h, s, a);
                    if pa == 0.0 {
                        continue;
                    }
                    let mut acts: Vec<usize> = actions.clone();
                    acts.push(a);
                    if h == lock {
                        let mean = g.mean_return(h, s, a, 0);
                        add(&mut atoms, (states.clone(), acts.clone(), true), pa * mean);
                        add(&mut atoms, (states.clone(), acts, false), pa * (1.0 - mean));
                        continue;
                    }
                    for (s2, &q) in g.transition(h, s, a, 0).iter().enumerate() {
                        if q > 0.0 {
                            let mut st: Vec<usize> = states.clone();
                            st.push(s2);
                            next_frontier.push((s2, st, acts.clone(), pa * q));
                        }
                    }
                }
            }
            frontier = next_frontier;
        }
    }
    atoms
}

/// Exact atom probabilities of the bandit reduction driven by the same
/// Markov policy.
pub fn reduction_outcome_atoms(x: &[bool], epsilon: f64, policy: &MarkovPolicy) -> BTreeMap<Atom, f64> {
    let lock = x.len();
    let mut atoms = BTreeMap::new();
    let prior = 0.5f64.powi(lock as i32);
    for code in 0..1usize << lock {
        let y: Vec<bool> = (0..lock).map(|i| code >> i & 1 == 1).collect();
        let states: Vec<usize> = y.iter().map(|&b| bit(b)).collect();
        for acode in 0..1usize << (lock + 1) {
            let actions: Vec<usize> = (0..=lock).map(|h| acode >> h & 1).collect();
            let mut p = prior * policy.prob(0, 0, actions[0]);
            for h in 1..=lock {
                p *= policy.prob(h, states[h - 1], actions[h]);
            }
            if p == 0.0 {
                continue;
            }
            let arm: Vec<bool> = (1..=lock).map(|h| (actions[h] == 1) ^ y[h - 1]).collect();
            let mean = if arm_hits(&arm, x) { 0.5 } else { 0.5 - epsilon };
            add(&mut atoms, (states.clone(), actions.clone(), true), p * mean);
            add(&mut atoms, (states.clone(), actions, false), p * (1.0 - mean));
        }
    }
    atoms
}

/// Largest absolute difference between two atom distributions.
pub fn atom_distance(a: &BTreeMap<Atom, f64>, b: &BTreeMap<Atom, f64>) -> f64 {
    let keys: std::collections::BTreeSet<&Atom> = a.keys().chain(b.keys()).collect();
    keys.into_iter()
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Hit probability of a learner that plays uniformly at random.
pub fn uniform_hit_probability(lock: usize) -> f64 {
    0.5f64.powi(lock as i32 - 1)
}
