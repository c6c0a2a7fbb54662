//! Q-OL: optimistic Nash Q-learning for informed games.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::LearnerError;
use crate::game::{sample_categorical, MarkovPolicy, StepFeedback};
use crate::learner::{InformedLearner, Policy};
use crate::matrix::{solve_zero_sum_warm, MatrixGame, LEARNER_TOL};

/// `alpha_t = (H + 1) / (H + t)`.
pub fn qol_alpha(t: u64, horizon: usize) -> Result<f64, LearnerError> {
    if t == 0 {
        return Err(LearnerError::ZeroVisitCount);
    }
    let h = horizon as f64;
    Ok((h + 1.0) / (h + t as f64))
}

/// `beta_t = c * sqrt(H^3 iota / t)`.
pub fn qol_beta(t: u64, horizon: usize, iota: f64, c: f64) -> Result<f64, LearnerError> {
    if t == 0 {
        return Err(LearnerError::ZeroVisitCount);
    }
    let h = horizon as f64;
    Ok(c * (h * h * h * iota / t as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QolHyper {
    pub c: f64,
    pub p: f64,
    pub episodes: usize,
}

impl QolHyper {
    pub fn new(episodes: usize) -> Self {
        Self { c: 2.0, p: 0.01, episodes }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(LearnerError::Hyper(format!("c must be positive, got {}", self.c)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(LearnerError::Hyper(format!("p must lie in (0, 1), got {}", self.p)));
        }
        if self.episodes == 0 {
            return Err(LearnerError::Hyper("planned episodes must be at least 1".into()));
        }
        Ok(())
    }
}

/// The mutable tables of Q-OL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QolState {
    /// `Q[h][(s * A_h + a) * B_h + b]`.
    pub q: Vec<Vec<f64>>,
    pub n: Vec<Vec<u64>>,
    /// `V[h][s]` for layers `0..=H`; the terminal layer stays 0.
    pub v: Vec<Vec<f64>>,
    pub mu: MarkovPolicy,
    pub nu: MarkovPolicy,
}

impl QolState {
    pub fn new(states: &[usize], max_actions: &[usize], min_actions: &[usize]) -> Self {
        let horizon = max_actions.len();
        let h = horizon as f64;
        let cells = |k: usize| states[k] * max_actions[k] * min_actions[k];
        Self {
            q: (0..horizon).map(|k| vec![h; cells(k)]).collect(),
            n: (0..horizon).map(|k| vec![0; cells(k)]).collect(),
            v: (0..=horizon).map(|k| vec![if k < horizon { h } else { 0.0 }; states[k]]).collect(),
            mu: MarkovPolicy::uniform(&states[..horizon], max_actions),
            nu: MarkovPolicy::uniform(&states[..horizon], min_actions),
        }
    }

    pub fn footprint(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.q.iter().map(Vec::len).collect();
        out.extend(self.n.iter().map(Vec::len));
        out.extend(self.v.iter().map(Vec::len));
        out.push(self.mu.table_len());
        out.push(self.nu.table_len());
        out
    }

    /// The `A_h x B_h` slice of `Q` at `(h, s)`.
    pub fn slice(&self, h: usize, s: usize) -> MatrixGame {
        let (na, nb) = (self.mu.num_actions(h), self.nu.num_actions(h));
        let data = self.q[h][s * na * nb..(s + 1) * na * nb].to_vec();
        MatrixGame::new(na, nb, data).expect("Q entries stay finite")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("learner state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnerError> {
        serde_json::from_str(text).map_err(|e| LearnerError::Snapshot(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct QolLearner {
    hyper: QolHyper,
    iota: f64,
    state: QolState,
}

impl QolLearner {
    pub fn new(
        states: &[usize],
        max_actions: &[usize],
        min_actions: &[usize],
        hyper: QolHyper,
    ) -> Result<Self, LearnerError> {
        hyper.validate()?;
        let horizon = max_actions.len();
        if horizon == 0 || states.len() != horizon + 1 || min_actions.len() != horizon {
            return Err(LearnerError::Hyper("need H + 1 state sizes and H action sizes per player".into()));
        }
        if states.contains(&0) || max_actions.contains(&0) || min_actions.contains(&0) {
            return Err(LearnerError::Hyper("state and action sizes must be at least 1".into()));
        }
        let max = |v: &[usize]| v.iter().copied().max().unwrap_or(1) as f64;
        let iota = (horizon as f64 * max(states) * max(max_actions) * max(min_actions) * hyper.episodes as f64
            / hyper.p)
            .ln();
        Ok(Self {
            hyper,
            iota,
            state: QolState::new(states, max_actions, min_actions),
        })
    }

    pub fn hyper(&self) -> &QolHyper {
        &self.hyper
    }

    pub fn iota(&self) -> f64 {
        self.iota
    }

    pub fn state(&self) -> &QolState {
        &self.state
    }

    pub fn horizon(&self) -> usize {
        self.state.n.len()
    }

    /// One update; `b` must be present.
    pub fn observe_step(&mut self, fb: &StepFeedback, b: Option<usize>) -> Result<(), LearnerError> {
        let b = b.ok_or(LearnerError::MissingOpponentAction)?;
        let horizon = self.horizon();
        let err = |what, step, index, size| Err(LearnerError::Index { what, step, index, size });
        if fb.step >= horizon {
            return err("step", fb.step, fb.step, horizon);
        }
        let (h, s, a) = (fb.step, fb.state, fb.action);
        let st = &mut self.state;
        let (na, nb) = (st.mu.num_actions(h), st.nu.num_actions(h));
        if s >= st.v[h].len() {
            return err("state", h, s, st.v[h].len());
        }
        if a >= na {
            return err("max action", h, a, na);
        }
        if b >= nb {
            return err("min action", h, b, nb);
        }
        if fb.next_state >= st.v[h + 1].len() {
            return err("next state", h, fb.next_state, st.v[h + 1].len());
        }

        let cell = (s * na + a) * nb + b;
        st.n[h][cell] += 1;
        let t = st.n[h][cell];
        let al = qol_alpha(t, horizon)?;
        let be = qol_beta(t, horizon, self.iota, self.hyper.c)?;
        let target = fb.ret + st.v[h + 1][fb.next_state] + be;
        st.q[h][cell] = (1.0 - al) * st.q[h][cell] + al * target;

        let m = st.slice(h, s);
        let cert = solve_zero_sum_warm(&m, LEARNER_TOL, Some((st.mu.dist(h, s), st.nu.dist(h, s))))
            .expect("Q slice is a finite nonempty matrix");
        st.mu.dist_mut(h, s).copy_from_slice(&cert.row_strategy);
        st.nu.dist_mut(h, s).copy_from_slice(&cert.col_strategy);
        st.v[h][s] = m.mixed_value(&cert.row_strategy, &cert.col_strategy);
        Ok(())
    }
}

impl Policy for QolLearner {
    fn act(&mut self, h: usize, s: usize, rng: &mut dyn RngCore) -> usize {
        sample_categorical(self.state.mu.dist(h, s), rng)
    }

    fn policy(&self) -> MarkovPolicy {
        self.state.mu.clone()
    }

    fn value(&self, h: usize, s: usize) -> Option<f64> {
        Some(self.state.v[h][s])
    }

    fn name(&self) -> &'static str {
        "qol"
    }
}

impl InformedLearner for QolLearner {
    fn observe_informed(&mut self, fb: &StepFeedback, b: usize) -> Result<(), LearnerError> {
        self.observe_step(fb, Some(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::solve_zero_sum;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fb(step: usize, state: usize, action: usize, ret: f64, next_state: usize) -> StepFeedback {
        StepFeedback { step, state, action, ret, next_state }
    }

    #[test]
    fn first_visit_sets_optimistic_target() {
        let mut l = QolLearner::new(&[1, 2, 1], &[2, 2], &[3, 3], QolHyper::new(50)).unwrap();
        l.observe_informed(&fb(0, 0, 1, 0.25, 1), 2).unwrap();
        let expected = 0.25 + 2.0 + 2.0 * (8.0 * l.iota()).sqrt();
        assert!((l.state().q[0][(1) * 3 + 2] - expected).abs() < 1e-12);
        assert_eq!(l.state().n[0][5], 1);
        assert_eq!(l.state().q[0][0], 2.0);
    }

    #[test]
    fn single_action_players_copy_q_into_v() {
        let mut l = QolLearner::new(&[1, 1], &[1], &[1], QolHyper::new(10)).unwrap();
        l.observe_informed(&fb(0, 0, 0, 0.5, 0), 0).unwrap();
        assert_eq!(l.state().v[0][0], l.state().q[0][0]);
    }

    #[test]
    fn value_matches_an_independent_solve() {
        let mut l = QolLearner::new(&[2, 2, 1], &[3, 3], &[2, 2], QolHyper::new(500)).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..400 {
            let (h, s) = (r.random_range(0..2), r.random_range(0..2));
            let next = if h == 0 { r.random_range(0..2) } else { 0 };
            let a = l.act(h, s, &mut r);
            l.observe_informed(&fb(h, s, a, r.random(), next), r.random_range(0..2)).unwrap();
        }
        for h in 0..2 {
            for s in 0..2 {
                let cert = solve_zero_sum(&l.state().slice(h, s), 1e-10).unwrap();
                let scale = l.state().slice(h, s).data().iter().fold(1.0f64, |m, x| m.max(x.abs()));
                assert!((cert.value - l.state().v[h][s]).abs() <= 2.0 * LEARNER_TOL * scale);
            }
        }
    }

    #[test]
    fn unknown_mode_is_rejected() {
        let mut l = QolLearner::new(&[1, 1], &[2], &[2], QolHyper::new(10)).unwrap();
        assert_eq!(l.observe_step(&fb(0, 0, 0, 0.5, 0), None), Err(LearnerError::MissingOpponentAction));
        assert!(matches!(l.observe_informed(&fb(0, 0, 0, 0.5, 0), 2), Err(LearnerError::Index { .. })));
    }

    #[test]
    fn footprint_grows_linearly_in_b() {
        let size = |b: usize| -> usize {
            QolLearner::new(&[3, 3, 3, 1], &[2; 3], &[b; 3], QolHyper::new(10))
                .unwrap()
                .state()
                .footprint()
                .iter()
                .sum()
        };
        let (s2, s4, s8) = (size(2), size(4), size(8));
        assert_eq!(s8 - s4, 2 * (s4 - s2));
        assert!(s4 > s2);
    }

    #[test]
    fn fresh_policy_is_uniform_and_sampling_matches() {
        let mut l = QolLearner::new(&[1, 1], &[4], &[2], QolHyper::new(10)).unwrap();
        assert_eq!(l.state().mu.dist(0, 0), &[0.25; 4]);
        assert_eq!(l.state().nu.dist(0, 0), &[0.5; 2]);
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[l.act(0, 0, &mut r)] += 1;
        }
        let sd = (0.25f64 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let mut l = QolLearner::new(&[1, 2, 1], &[2, 2], &[2, 2], QolHyper::new(10)).unwrap();
        l.observe_informed(&fb(1, 1, 0, 1.0, 0), 1).unwrap();
        let back = QolState::from_json(&l.state().to_json()).unwrap();
        assert_eq!(&back, l.state());
    }
}
