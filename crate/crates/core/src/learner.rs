//! Interfaces between the episode loop and the max player.
//!
//! The split between [`Learner`] and [`InformedLearner`] is the mode
//! firewall: an unknown-game learner's `observe` receives a
//! [`StepFeedback`], which has no opponent action, so nothing it does can
//! depend on `b`.

use rand::RngCore;

use crate::error::LearnerError;
use crate::game::{sample_categorical, MarkovPolicy, StepFeedback};

/// Common surface of every max-player learner.
pub trait Policy: Send {
    /// Called once before episode `k` (0-based).
    fn begin_episode(&mut self, _k: usize) -> Result<(), LearnerError> {
        Ok(())
    }

    fn act(&mut self, h: usize, s: usize, rng: &mut dyn RngCore) -> usize;

    /// The Markov policy the learner is currently following.
    fn policy(&self) -> MarkovPolicy;

    /// The learner's own optimistic value estimate, if it keeps one.
    fn value(&self, _h: usize, _s: usize) -> Option<f64> {
        None
    }

    fn name(&self) -> &'static str;
}

/// A learner for unknown games.
pub trait Learner: Policy {
    fn observe(&mut self, fb: &StepFeedback) -> Result<(), LearnerError>;
}

/// A learner that needs the opponent's action.
pub trait InformedLearner: Policy {
    fn observe_informed(&mut self, fb: &StepFeedback, opponent_action: usize) -> Result<(), LearnerError>;
}

/// Plays a fixed Markov policy and ignores feedback.
#[derive(Debug, Clone)]
pub struct FixedLearner {
    policy: MarkovPolicy,
    name: &'static str,
}

impl FixedLearner {
    pub fn new(policy: MarkovPolicy) -> Self {
        Self { policy, name: "fixed" }
    }

    pub fn uniform(states: &[usize], actions: &[usize]) -> Self {
        Self {
            policy: MarkovPolicy::uniform(states, actions),
            name: "uniform",
        }
    }

    pub fn with_name(mut self, name: &'static str) -> Self {
        self.name = name;
        self
    }
}

impl Policy for FixedLearner {
    fn act(&mut self, h: usize, s: usize, rng: &mut dyn RngCore) -> usize {
        sample_categorical(self.policy.dist(h, s), rng)
    }

    fn policy(&self) -> MarkovPolicy {
        self.policy.clone()
    }

    fn name(&self) -> &'static str {
        self.name
    }
}

impl Learner for FixedLearner {
    fn observe(&mut self, _fb: &StepFeedback) -> Result<(), LearnerError> {
        Ok(())
    }
}

impl InformedLearner for FixedLearner {
    fn observe_informed(&mut self, _fb: &StepFeedback, _b: usize) -> Result<(), LearnerError> {
        Ok(())
    }
}
