//! V-OL: optimistic V-learning with exponential-weights policies.
//!
//! The learner's tables are indexed by step, state and its own action only.
//! Nothing here knows how many actions the opponent has.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::LearnerError;
use crate::game::{sample_categorical, MarkovPolicy, StepFeedback};
use crate::learner::{Learner, Policy};

fn check_t(t: u64) -> Result<f64, LearnerError> {
    if t == 0 {
        Err(LearnerError::ZeroVisitCount)
    } else {
        Ok(t as f64)
    }
}

/// `alpha_t = (GH + 1) / (GH + t)`.
pub fn alpha(t: u64, g: f64, horizon: usize) -> Result<f64, LearnerError> {
    let t = check_t(t)?;
    let gh = g * horizon as f64;
    Ok((gh + 1.0) / (gh + t))
}

/// `beta_t = c * sqrt(G H^3 A iota / t)`.
pub fn beta(t: u64, g: f64, horizon: usize, actions: usize, iota: f64, c: f64) -> Result<f64, LearnerError> {
    let t = check_t(t)?;
    let h = horizon as f64;
    Ok(c * (g * h * h * h * actions as f64 * iota / t).sqrt())
}

/// `eta_t = sqrt(G H ln A / (A t))`.
pub fn eta(t: u64, g: f64, horizon: usize, actions: usize) -> Result<f64, LearnerError> {
    let t = check_t(t)?;
    let a = actions as f64;
    Ok((g * horizon as f64 * a.ln() / (a * t)).sqrt())
}

/// Effective weights `[alpha_t^1, .., alpha_t^t]` and `alpha_t^0`.
///
/// `alpha_t^0` is the empty product for `t = 0`, so `alpha_0^0 = 1` and the
/// list is empty; for `t >= 1` it is 0 because `alpha_1 = 1`.
pub fn alpha_weights(t: u64, g: f64, horizon: usize) -> (Vec<f64>, f64) {
    let gh = g * horizon as f64;
    let mut weights = vec![0.0; t as usize];
    // Running product of (1 - alpha_j) = (j - 1) / (GH + j) from j = t down.
    let mut tail = 1.0;
    for i in (1..=t).rev() {
        let fi = i as f64;
        weights[(i - 1) as usize] = (gh + 1.0) / (gh + fi) * tail;
        tail *= (fi - 1.0) / (gh + fi);
    }
    (weights, tail)
}

/// `iota = ln(H S A K / p)`.
pub fn iota(horizon: usize, states: usize, actions: usize, episodes: usize, p: f64) -> f64 {
    (horizon as f64 * states as f64 * actions as f64 * episodes as f64 / p).ln()
}

/// Tuned aggressiveness for a known number of episodes.
pub fn choose_g(episodes: usize, horizon: usize, states: usize, actions: usize) -> f64 {
    let (k, h, sa) = (episodes as f64, horizon as f64, (states * actions) as f64);
    if k >= h * h * h * sa {
        (k / sa).cbrt() / h
    } else {
        k.cbrt()
    }
}

/// Normalized `exp(-eta * L / alpha)`, computed after subtracting the
/// largest exponent.
pub fn exp_weights(losses: &[f64], eta: f64, alpha: f64, out: &mut [f64]) {
    let scale = -eta / alpha;
    let top = losses.iter().map(|l| scale * l).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(losses) {
        *o = (scale * l - top).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolHyper {
    pub g: f64,
    pub c: f64,
    pub p: f64,
    /// Planned number of episodes; enters only through `iota`.
    pub episodes: usize,
    #[serde(default)]
    pub clip_values: bool,
}

impl VolHyper {
    pub fn new(g: f64, episodes: usize) -> Self {
        Self {
            g,
            c: 2.0,
            p: 0.01,
            episodes,
            clip_values: false,
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.g >= 1.0) || !self.g.is_finite() {
            return Err(LearnerError::Hyper(format!("G must be at least 1, got {}", self.g)));
        }
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

/// The mutable tables of V-OL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolState {
    /// `V[h][s]` for layers `0..=H`; the terminal layer stays 0.
    pub v: Vec<Vec<f64>>,
    /// `L[h][s * A_h + a]`.
    pub l: Vec<Vec<f64>>,
    pub n: Vec<Vec<u64>>,
    pub mu: MarkovPolicy,
}

impl VolState {
    /// Fresh tables: `V = H`, `L = 0`, `N = 0`, uniform `mu`.
    pub fn new(states: &[usize], actions: &[usize]) -> Self {
        let horizon = actions.len();
        let v = (0..=horizon)
            .map(|h| vec![if h < horizon { horizon as f64 } else { 0.0 }; states[h]])
            .collect();
        Self {
            v,
            l: (0..horizon).map(|h| vec![0.0; states[h] * actions[h]]).collect(),
            n: (0..horizon).map(|h| vec![0; states[h]]).collect(),
            mu: MarkovPolicy::uniform(&states[..horizon], actions),
        }
    }

    pub fn horizon(&self) -> usize {
        self.n.len()
    }

    /// Lengths of every table in a fixed order.
    pub fn footprint(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.v.iter().map(Vec::len).collect();
        out.extend(self.l.iter().map(Vec::len));
        out.extend(self.n.iter().map(Vec::len));
        out.push(self.mu.table_len());
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("learner state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LearnerError> {
        serde_json::from_str(text).map_err(|e| LearnerError::Snapshot(e.to_string()))
    }
}

/// Optimistic V-learning for a fixed `G` and planned `K`.
#[derive(Debug, Clone)]
pub struct VolLearner {
    hyper: VolHyper,
    actions: Vec<usize>,
    iota: f64,
    state: VolState,
}

impl VolLearner {
    /// `states` has one entry per layer `0..=H`, `actions` one per step.
    pub fn new(states: &[usize], actions: &[usize], hyper: VolHyper) -> Result<Self, LearnerError> {
        hyper.validate()?;
        if actions.is_empty() || states.len() != actions.len() + 1 {
            return Err(LearnerError::Hyper(format!(
                "need H + 1 state sizes and H action sizes, got {} and {}",
                states.len(),
                actions.len()
            )));
        }
        if states.contains(&0) || actions.contains(&0) {
            return Err(LearnerError::Hyper("state and action sizes must be at least 1".into()));
        }
        let s_max = states.iter().copied().max().unwrap_or(1);
        let a_max = actions.iter().copied().max().unwrap_or(1);
        Ok(Self {
            iota: iota(actions.len(), s_max, a_max, hyper.episodes, hyper.p),
            hyper,
            actions: actions.to_vec(),
            state: VolState::new(states, actions),
        })
    }

    pub fn hyper(&self) -> &VolHyper {
        &self.hyper
    }

    pub fn iota(&self) -> f64 {
        self.iota
    }

    pub fn state(&self) -> &VolState {
        &self.state
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    fn check(&self, fb: &StepFeedback) -> Result<(), LearnerError> {
        let horizon = self.horizon();
        let err = |what, step, index, size| Err(LearnerError::Index { what, step, index, size });
        if fb.step >= horizon {
            return err("step", fb.step, fb.step, horizon);
        }
        let h = fb.step;
        if fb.state >= self.state.n[h].len() {
            return err("state", h, fb.state, self.state.n[h].len());
        }
        if fb.action >= self.actions[h] {
            return err("action", h, fb.action, self.actions[h]);
        }
        if fb.next_state >= self.state.v[h + 1].len() {
            return err("next state", h, fb.next_state, self.state.v[h + 1].len());
        }
        Ok(())
    }
}

impl Policy for VolLearner {
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
        "vol"
    }
}

impl Learner for VolLearner {
    fn observe(&mut self, fb: &StepFeedback) -> Result<(), LearnerError> {
        self.check(fb)?;
        let (h, s, a) = (fb.step, fb.state, fb.action);
        let horizon = self.horizon();
        let na = self.actions[h];
        let (g, c, clip) = (self.hyper.g, self.hyper.c, self.hyper.clip_values);
        let st = &mut self.state;

        st.n[h][s] += 1;
        let t = st.n[h][s];
        let al = alpha(t, g, horizon)?;
        let be = beta(t, g, horizon, na, self.iota, c)?;
        let et = eta(t, g, horizon, na)?;

        let next = st.v[h + 1][fb.next_state];
        let mut v = (1.0 - al) * st.v[h][s] + al * (fb.ret + next + be);
        if clip {
            v = v.clamp(0.0, (horizon - h) as f64);
        }
        st.v[h][s] = v;

        let played = st.mu.prob(h, s, a);
        let loss = (horizon as f64 - fb.ret - next) / (played + et);
        let l = &mut st.l[h][s * na..(s + 1) * na];
        for (i, li) in l.iter_mut().enumerate() {
            let inst = if i == a { loss } else { 0.0 };
            *li = (1.0 - al) * *li + al * inst;
        }
        exp_weights(l, et, al, st.mu.dist_mut(h, s));
        Ok(())
    }
}

/// Epoch `j` covers 1-based episodes `2^j ..= 2^{j+1} - 1`.
pub fn doubling_epoch(k: usize) -> usize {
    (k + 1).ilog2() as usize
}

/// Anytime V-OL: restarts with fresh tables at every doubling-epoch
/// boundary, tuning `G` and `iota` for the epoch length `2^j`.
#[derive(Debug, Clone)]
pub struct DoublingVol {
    states: Vec<usize>,
    actions: Vec<usize>,
    c: f64,
    p: f64,
    clip_values: bool,
    epoch: usize,
    inner: VolLearner,
}

impl DoublingVol {
    pub fn new(states: &[usize], actions: &[usize], c: f64, p: f64, clip_values: bool) -> Result<Self, LearnerError> {
        let inner = Self::make(states, actions, c, p, clip_values, 0)?;
        Ok(Self {
            states: states.to_vec(),
            actions: actions.to_vec(),
            c,
            p,
            clip_values,
            epoch: 0,
            inner,
        })
    }

    fn make(states: &[usize], actions: &[usize], c: f64, p: f64, clip: bool, epoch: usize) -> Result<VolLearner, LearnerError> {
        let len = 1usize << epoch;
        let s_max = states.iter().copied().max().unwrap_or(1);
        let a_max = actions.iter().copied().max().unwrap_or(1);
        let hyper = VolHyper {
            g: choose_g(len, actions.len(), s_max, a_max),
            c,
            p,
            episodes: len,
            clip_values: clip,
        };
        VolLearner::new(states, actions, hyper)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn inner(&self) -> &VolLearner {
        &self.inner
    }
}

impl Policy for DoublingVol {
    fn begin_episode(&mut self, k: usize) -> Result<(), LearnerError> {
        let j = doubling_epoch(k);
        if j != self.epoch {
            self.inner = Self::make(&self.states, &self.actions, self.c, self.p, self.clip_values, j)?;
            self.epoch = j;
        }
        Ok(())
    }

    fn act(&mut self, h: usize, s: usize, rng: &mut dyn RngCore) -> usize {
        self.inner.act(h, s, rng)
    }

    fn policy(&self) -> MarkovPolicy {
        self.inner.policy()
    }

    fn value(&self, h: usize, s: usize) -> Option<f64> {
        self.inner.value(h, s)
    }

    fn name(&self) -> &'static str {
        "vol-doubling"
    }
}

impl Learner for DoublingVol {
    fn observe(&mut self, fb: &StepFeedback) -> Result<(), LearnerError> {
        self.inner.observe(fb)
    }
}
