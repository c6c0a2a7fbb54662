//! Exact ground truth by backward induction.
//!
//! Everything here works with mean returns, so Bernoulli cells are evaluated
//! in expectation and the results are noise-free. Whenever an argmax is
//! taken, ties go to the lowest action index.

use serde::{Deserialize, Serialize};

use crate::error::OracleError;
use crate::game::{MarkovGame, MarkovPolicy};
use crate::matrix::{solve_zero_sum, MatrixGame};

/// Upper limit on the number of floats the hindsight search may allocate.
pub const HINDSIGHT_MEMORY_LIMIT: usize = 100_000_000;
/// Default number of bound evaluations before the hindsight search gives up
/// on proving optimality.
pub const HINDSIGHT_NODE_BUDGET: usize = 1_000_000;

/// `V[h][s]` for layers `0..=H`; the terminal layer is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    layers: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn zeros(g: &MarkovGame) -> Self {
        Self {
            layers: (0..=g.horizon()).map(|h| vec![0.0; g.num_states(h)]).collect(),
        }
    }

    pub fn get(&self, h: usize, s: usize) -> f64 {
        self.layers[h][s]
    }

    pub fn layer(&self, h: usize) -> &[f64] {
        &self.layers[h]
    }

    pub fn horizon(&self) -> usize {
        self.layers.len() - 1
    }

    fn set(&mut self, h: usize, s: usize, v: f64) {
        self.layers[h][s] = v;
    }
}

/// The payoff matrix `r_h + P_h V_{h+1}` at `(h, s)`.
pub fn stage_matrix(g: &MarkovGame, h: usize, s: usize, next: &[f64]) -> MatrixGame {
    let (na, nb) = (g.num_max_actions(h), g.num_min_actions(h));
    let mut data = Vec::with_capacity(na * nb);
    for a in 0..na {
        for b in 0..nb {
            data.push(g.backup(h, s, a, b, next));
        }
    }
    MatrixGame::new(na, nb, data).expect("finite stage matrix of a valid game")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxSolution {
    pub values: ValueTable,
    pub max_policy: MarkovPolicy,
    pub min_policy: MarkovPolicy,
    /// Largest per-state duality gap encountered.
    pub max_gap: f64,
}

/// Minimax values and a Nash policy pair; the error in `V*` is at most
/// `H * tol`.
pub fn minimax_values(g: &MarkovGame, tol: f64) -> Result<MinimaxSolution, OracleError> {
    let mut values = ValueTable::zeros(g);
    let mut max_policy = MarkovPolicy::uniform_max(g);
    let mut min_policy = MarkovPolicy::uniform_min(g);
    let mut max_gap: f64 = 0.0;
    for h in (0..g.horizon()).rev() {
        for s in 0..g.num_states(h) {
            let m = stage_matrix(g, h, s, values.layer(h + 1));
            let cert = solve_zero_sum(&m, tol)?;
            if !cert.converged {
                return Err(OracleError::NotConverged {
                    step: h,
                    state: s,
                    gap: cert.gap,
                });
            }
            max_gap = max_gap.max(cert.gap);
            values.set(h, s, cert.value);
            max_policy.dist_mut(h, s).copy_from_slice(&cert.row_strategy);
            min_policy.dist_mut(h, s).copy_from_slice(&cert.col_strategy);
        }
    }
    Ok(MinimaxSolution {
        values,
        max_policy,
        min_policy,
        max_gap,
    })
}

fn check_max(g: &MarkovGame, mu: &MarkovPolicy) -> Result<(), OracleError> {
    if mu.fits_max(g) {
        Ok(())
    } else {
        Err(OracleError::Dimension("max-player policy"))
    }
}

fn check_min(g: &MarkovGame, nu: &MarkovPolicy) -> Result<(), OracleError> {
    if nu.fits_min(g) {
        Ok(())
    } else {
        Err(OracleError::Dimension("min-player policy"))
    }
}

/// Expected return of `(a, nu)` at `(h, s)` given continuation `next`.
fn q_against_min(g: &MarkovGame, h: usize, s: usize, a: usize, nu: &[f64], next: &[f64]) -> f64 {
    nu.iter()
        .enumerate()
        .filter(|(_, &p)| p != 0.0)
        .map(|(b, &p)| p * g.backup(h, s, a, b, next))
        .sum()
}

/// Exact `V^{mu, nu}` by the Bellman equations.
pub fn evaluate_pair(
    g: &MarkovGame,
    mu: &MarkovPolicy,
    nu: &MarkovPolicy,
) -> Result<ValueTable, OracleError> {
    check_max(g, mu)?;
    check_min(g, nu)?;
    let mut values = ValueTable::zeros(g);
    for h in (0..g.horizon()).rev() {
        for s in 0..g.num_states(h) {
            let next = values.layer(h + 1);
            let nu_s = nu.dist(h, s);
            let v: f64 = mu
                .dist(h, s)
                .iter()
                .enumerate()
                .filter(|(_, &p)| p != 0.0)
                .map(|(a, &p)| p * q_against_min(g, h, s, a, nu_s, next))
                .sum();
            values.set(h, s, v);
        }
    }
    Ok(values)
}

/// `V^{dagger, nu}` and a deterministic best response.
pub fn best_response_value(
    g: &MarkovGame,
    nu: &MarkovPolicy,
) -> Result<(ValueTable, MarkovPolicy), OracleError> {
    check_min(g, nu)?;
    let mut values = ValueTable::zeros(g);
    let mut choice: Vec<Vec<usize>> = (0..g.horizon()).map(|h| vec![0; g.num_states(h)]).collect();
    for h in (0..g.horizon()).rev() {
        for s in 0..g.num_states(h) {
            let next = values.layer(h + 1);
            let mut best = (0, f64::NEG_INFINITY);
            for a in 0..g.num_max_actions(h) {
                let q = q_against_min(g, h, s, a, nu.dist(h, s), next);
                if q > best.1 {
                    best = (a, q);
                }
            }
            choice[h][s] = best.0;
            values.set(h, s, best.1);
        }
    }
    let policy = MarkovPolicy::deterministic(&choice, g.max_action_sizes());
    Ok((values, policy))
}

/// The min player's best response to `mu`: `min_nu V^{mu, nu}` and a
/// deterministic minimizer, obtained by a best-response call on the
/// role-swapped game.
pub fn min_best_response(
    g: &MarkovGame,
    mu: &MarkovPolicy,
) -> Result<(ValueTable, MarkovPolicy), OracleError> {
    check_max(g, mu)?;
    let swapped = g.swap_roles();
    let (complement, nu) = best_response_value(&swapped, mu)?;
    let mut values = ValueTable::zeros(g);
    for h in 0..g.horizon() {
        let remaining = (g.horizon() - h) as f64;
        for s in 0..g.num_states(h) {
            values.set(h, s, remaining - complement.get(h, s));
        }
    }
    Ok((values, nu))
}

/// The single-player game the max player faces when the min player is
/// fixed at `nu`. A cell is flagged Bernoulli if any action `nu` plays
/// there is.
pub fn induced_mdp(g: &MarkovGame, nu: &MarkovPolicy) -> Result<MarkovGame, OracleError> {
    check_min(g, nu)?;
    let states = g.state_sizes().to_vec();
    let actions = g.max_action_sizes().to_vec();
    let mut m = MarkovGame::new(states, actions, vec![1; g.horizon()])
        .map_err(|_| OracleError::Dimension("induced game sizes"))?;
    for h in 0..g.horizon() {
        for s in 0..g.num_states(h) {
            for a in 0..g.num_max_actions(h) {
                let mut r = 0.0;
                let mut flag = false;
                let mut row = vec![0.0; g.num_states(h + 1)];
                for (b, &w) in nu.dist(h, s).iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    r += w * g.mean_return(h, s, a, b);
                    flag |= g.is_bernoulli(h, s, a, b);
                    for (dst, src) in row.iter_mut().zip(g.transition(h, s, a, b)) {
                        *dst += w * src;
                    }
                }
                m.set_return(h, s, a, 0, r);
                m.transition_mut(h, s, a, 0).copy_from_slice(&row);
                if flag {
                    m.set_bernoulli(h, s, a, 0, true);
                }
            }
        }
    }
    Ok(m)
}

/// Result of the best-fixed-policy-in-hindsight search.
#[derive(Debug, Clone)]
pub struct HindsightSolution {
    /// Deterministic Markov policy attaining `total`.
    pub policy: MarkovPolicy,
    /// `sum_k V_1^{policy, nu^k}(s_1^k)`.
    pub total: f64,
    /// Proven upper bound on the optimum over Markov policies.
    pub upper_bound: f64,
    /// True when `total` is proven optimal.
    pub exact: bool,
    /// Number of bound evaluations spent.
    pub nodes: usize,
}

/// The opponent policy folded into the game: an MDP for the max player.
struct InducedMdp {
    rewards: Vec<Vec<f64>>,
    transitions: Vec<Vec<f64>>,
}

impl InducedMdp {
    fn new(g: &MarkovGame, nu: &MarkovPolicy) -> Self {
        let mut rewards = Vec::with_capacity(g.horizon());
        let mut transitions = Vec::with_capacity(g.horizon());
        for h in 0..g.horizon() {
            let (ns, na, nn) = (g.num_states(h), g.num_max_actions(h), g.num_states(h + 1));
            let mut r = vec![0.0; ns * na];
            let mut p = vec![0.0; ns * na * nn];
            for s in 0..ns {
                for (b, &w) in nu.dist(h, s).iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for a in 0..na {
                        r[s * na + a] += w * g.mean_return(h, s, a, b);
                        let row = &mut p[(s * na + a) * nn..(s * na + a + 1) * nn];
                        for (dst, src) in row.iter_mut().zip(g.transition(h, s, a, b)) {
                            *dst += w * src;
                        }
                    }
                }
            }
            rewards.push(r);
            transitions.push(p);
        }
        Self { rewards, transitions }
    }

    fn q(&self, g: &MarkovGame, h: usize, s: usize, a: usize, next: &[f64]) -> f64 {
        let na = g.num_max_actions(h);
        let nn = next.len();
        let cell = s * na + a;
        let row = &self.transitions[h][cell * nn..(cell + 1) * nn];
        self.rewards[h][cell] + row.iter().zip(next).map(|(p, v)| p * v).sum::<f64>()
    }
}

struct HindsightProblem<'a> {
    g: &'a MarkovGame,
    mdps: Vec<InducedMdp>,
    initials: &'a [usize],
    /// Decision positions `(h, s)` in forward order.
    positions: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

impl HindsightProblem<'_> {
    /// Per-episode backward induction where assigned positions play their
    /// fixed action and free positions maximize per episode. Summed over
    /// episodes this upper-bounds every completion of the assignment, and
    /// equals the exact total once everything is assigned.
    fn bound(&self, assigned: &[Option<usize>], scratch: &mut [Vec<f64>]) -> f64 {
        let g = self.g;
        let mut total = 0.0;
        for (mdp, &s1) in self.mdps.iter().zip(self.initials) {
            for layer in scratch.iter_mut() {
                layer.iter_mut().for_each(|v| *v = 0.0);
            }
            for h in (0..g.horizon()).rev() {
                let (cur, next) = scratch.split_at_mut(h + 1);
                let next = &next[0];
                for s in 0..g.num_states(h) {
                    cur[h][s] = match assigned[self.offsets[h] + s] {
                        Some(a) => mdp.q(g, h, s, a, next),
                        None => (0..g.num_max_actions(h))
                            .map(|a| mdp.q(g, h, s, a, next))
                            .fold(f64::NEG_INFINITY, f64::max),
                    };
                }
            }
            total += scratch[0][s1];
        }
        total
    }

    /// Backward induction on the K-sum: at each `(h, s)` pick the action
    /// maximizing `sum_k Q_k`, carrying each episode's continuation value.
    /// This ignores that episodes reach `(h, s)` with different
    /// probabilities, so it is a heuristic, but its total is exact for the
    /// policy it returns.
    fn summed_backward_induction(&self) -> Vec<usize> {
        let g = self.g;
        let k = self.mdps.len();
        let mut cont: Vec<Vec<Vec<f64>>> =
            (0..k).map(|_| (0..=g.horizon()).map(|h| vec![0.0; g.num_states(h)]).collect()).collect();
        let mut choice = vec![0; self.positions.len()];
        for h in (0..g.horizon()).rev() {
            for s in 0..g.num_states(h) {
                let mut best = (0, f64::NEG_INFINITY);
                for a in 0..g.num_max_actions(h) {
                    let sum: f64 = (0..k).map(|i| self.mdps[i].q(g, h, s, a, &cont[i][h + 1])).sum();
                    if sum > best.1 {
                        best = (a, sum);
                    }
                }
                choice[self.offsets[h] + s] = best.0;
                for (i, c) in cont.iter_mut().enumerate() {
                    let (cur, next) = c.split_at_mut(h + 1);
                    cur[h][s] = self.mdps[i].q(g, h, s, best.0, &next[0]);
                }
            }
        }
        choice
    }
}

struct Search<'a, 'b> {
    problem: &'a HindsightProblem<'b>,
    assigned: Vec<Option<usize>>,
    scratch: Vec<Vec<f64>>,
    best_choice: Vec<usize>,
    best_total: f64,
    nodes: usize,
    budget: usize,
    exhausted: bool,
}

impl Search<'_, '_> {
    fn improves(&self, bound: f64) -> bool {
        bound > self.best_total + 1e-12 * self.best_total.abs().max(1.0)
    }

    fn dfs(&mut self, depth: usize) {
        if self.nodes >= self.budget {
            self.exhausted = true;
            return;
        }
        self.nodes += 1;
        let bound = self.problem.bound(&self.assigned, &mut self.scratch);
        if !self.improves(bound) {
            return;
        }
        if depth == self.assigned.len() {
            self.best_total = bound;
            self.best_choice = self.assigned.iter().map(|a| a.expect("leaf is fully assigned")).collect();
            return;
        }
        let (h, _) = self.problem.positions[depth];
        let first = self.best_choice[depth];
        let order = std::iter::once(first).chain((0..self.problem.g.num_max_actions(h)).filter(|&a| a != first));
        for a in order.collect::<Vec<_>>() {
            self.assigned[depth] = Some(a);
            self.dfs(depth + 1);
            if self.exhausted {
                break;
            }
        }
        self.assigned[depth] = None;
    }
}

/// Best fixed Markov policy against the opponent sequence `nu^1..nu^K`,
/// maximizing `sum_k V_1^{mu, nu^k}(s_1^k)`.
///
/// A K-sum backward induction supplies the first candidate; a depth-first
/// branch and bound over `(h, s)` decisions, bounded by per-episode best
/// responses, then proves it optimal or improves it. The optimum over
/// Markov policies is attained by a deterministic one because the objective
/// is multilinear in the per-state distributions. The search stops after
/// `node_budget` bound evaluations and reports `exact == false` if it had
/// not finished.
pub fn best_policy_in_hindsight_with_budget(
    g: &MarkovGame,
    opponents: &[MarkovPolicy],
    initials: &[usize],
    node_budget: usize,
) -> Result<HindsightSolution, OracleError> {
    if opponents.len() != initials.len() {
        return Err(OracleError::Dimension("one initial state per opponent policy"));
    }
    if opponents.is_empty() {
        return Err(OracleError::Dimension("at least one episode"));
    }
    for nu in opponents {
        check_min(g, nu)?;
    }
    if let Some(&s) = initials.iter().find(|&&s| s >= g.num_states(0)) {
        return Err(OracleError::Capacity(format!("initial state {s} out of range")));
    }
    let per_episode: usize = (0..g.horizon())
        .map(|h| g.num_states(h) * g.num_max_actions(h) * (1 + g.num_states(h + 1)) + g.num_states(h))
        .sum();
    let floats = opponents.len().saturating_mul(per_episode);
    if floats > HINDSIGHT_MEMORY_LIMIT {
        return Err(OracleError::Capacity(format!(
            "hindsight search needs {floats} floats (limit {HINDSIGHT_MEMORY_LIMIT})"
        )));
    }

    let mut positions = Vec::new();
    let mut offsets = Vec::with_capacity(g.horizon());
    for h in 0..g.horizon() {
        offsets.push(positions.len());
        positions.extend((0..g.num_states(h)).map(|s| (h, s)));
    }
    let problem = HindsightProblem {
        g,
        mdps: opponents.iter().map(|nu| InducedMdp::new(g, nu)).collect(),
        initials,
        positions,
        offsets,
    };
    let mut scratch: Vec<Vec<f64>> = (0..=g.horizon()).map(|h| vec![0.0; g.num_states(h)]).collect();

    let seed_choice = problem.summed_backward_induction();
    let seed_assigned: Vec<Option<usize>> = seed_choice.iter().copied().map(Some).collect();
    let seed_total = problem.bound(&seed_assigned, &mut scratch);
    let root_bound = problem.bound(&vec![None; problem.positions.len()], &mut scratch);

    let mut search = Search {
        problem: &problem,
        assigned: vec![None; problem.positions.len()],
        scratch,
        best_choice: seed_choice,
        best_total: seed_total,
        nodes: 2,
        budget: node_budget,
        exhausted: false,
    };
    if search.improves(root_bound) {
        search.dfs(0);
    }
    let exact = !search.exhausted;

    let choice: Vec<Vec<usize>> = (0..g.horizon())
        .map(|h| {
            let start = problem.offsets[h];
            search.best_choice[start..start + g.num_states(h)].to_vec()
        })
        .collect();
    Ok(HindsightSolution {
        policy: MarkovPolicy::deterministic(&choice, g.max_action_sizes()),
        total: search.best_total,
        upper_bound: if exact { search.best_total.max(root_bound.min(search.best_total)) } else { root_bound },
        exact,
        nodes: search.nodes,
    })
}

/// [`best_policy_in_hindsight_with_budget`] with the default node budget.
pub fn best_policy_in_hindsight(
    g: &MarkovGame,
    opponents: &[MarkovPolicy],
    initials: &[usize],
) -> Result<HindsightSolution, OracleError> {
    best_policy_in_hindsight_with_budget(g, opponents, initials, HINDSIGHT_NODE_BUDGET)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{random_game, sample_step, ReturnMode};
    use crate::matrix::ORACLE_TOL;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_policy(g: &MarkovGame, min_side: bool, r: &mut ChaCha8Rng) -> MarkovPolicy {
        let mut p = if min_side { MarkovPolicy::uniform_min(g) } else { MarkovPolicy::uniform_max(g) };
        for h in 0..g.horizon() {
            for s in 0..g.num_states(h) {
                let d = p.dist_mut(h, s);
                let w: Vec<f64> = d.iter().map(|_| r.random::<f64>() + 1e-3).collect();
                let total: f64 = w.iter().sum();
                for (x, v) in d.iter_mut().zip(w) {
                    *x = v / total;
                }
            }
        }
        p
    }

    /// Every deterministic max-player policy of `g`.
    fn all_deterministic(g: &MarkovGame) -> Vec<MarkovPolicy> {
        let slots: Vec<(usize, usize)> =
            (0..g.horizon()).flat_map(|h| (0..g.num_states(h)).map(move |s| (h, s))).collect();
        let count: usize = slots.iter().map(|&(h, _)| g.num_max_actions(h)).product();
        (0..count)
            .map(|mut idx| {
                let mut choice: Vec<Vec<usize>> = (0..g.horizon()).map(|h| vec![0; g.num_states(h)]).collect();
                for &(h, s) in &slots {
                    let k = g.num_max_actions(h);
                    choice[h][s] = idx % k;
                    idx /= k;
                }
                MarkovPolicy::deterministic(&choice, g.max_action_sizes())
            })
            .collect()
    }

    #[test]
    fn single_stage_is_the_matrix_value() {
        let g = random_game(1, 1, 3, 2, &mut rng(1), ReturnMode::Deterministic).unwrap();
        let sol = minimax_values(&g, ORACLE_TOL).unwrap();
        let cert = solve_zero_sum(&stage_matrix(&g, 0, 0, &[0.0]), ORACLE_TOL).unwrap();
        assert!((sol.values.get(0, 0) - cert.value).abs() < 1e-12);
    }

    #[test]
    fn zero_returns_give_zero_values() {
        let g = MarkovGame::uniform_sizes(3, 2, 2, 2).unwrap();
        let sol = minimax_values(&g, ORACLE_TOL).unwrap();
        for h in 0..=3 {
            for s in 0..2 {
                assert_eq!(sol.values.get(h, s), 0.0);
            }
        }
    }

    #[test]
    fn nash_pair_attains_the_minimax_value() {
        for seed in 0..10 {
            let g = random_game(3, 3, 2, 3, &mut rng(seed), ReturnMode::Deterministic).unwrap();
            let sol = minimax_values(&g, ORACLE_TOL).unwrap();
            let v = evaluate_pair(&g, &sol.max_policy, &sol.min_policy).unwrap();
            let (br, _) = best_response_value(&g, &sol.min_policy).unwrap();
            let (worst, _) = min_best_response(&g, &sol.max_policy).unwrap();
            for s in 0..3 {
                let star = sol.values.get(0, s);
                assert!((v.get(0, s) - star).abs() <= 3.0 * ORACLE_TOL);
                assert!((br.get(0, s) - star).abs() <= 3.0 * ORACLE_TOL);
                assert!((worst.get(0, s) - star).abs() <= 3.0 * ORACLE_TOL);
            }
        }
    }

    #[test]
    fn horizon_one_best_response_is_row_maximization() {
        let g = random_game(1, 2, 4, 3, &mut rng(2), ReturnMode::Deterministic).unwrap();
        let nu = random_policy(&g, true, &mut rng(3));
        let (v, mu) = best_response_value(&g, &nu).unwrap();
        for s in 0..2 {
            let m = stage_matrix(&g, 0, s, &[0.0, 0.0]);
            let (row, value) = crate::matrix::best_response_row(&m, nu.dist(0, s)).unwrap();
            assert_eq!(mu.prob(0, s, row), 1.0);
            assert!((v.get(0, s) - value).abs() < 1e-15);
        }
    }

    #[test]
    fn best_response_matches_enumeration() {
        for seed in 0..20 {
            let g = random_game(2, 2, 2, 2, &mut rng(seed), ReturnMode::Deterministic).unwrap();
            let nu = random_policy(&g, true, &mut rng(100 + seed));
            let (v, _) = best_response_value(&g, &nu).unwrap();
            for s in 0..2 {
                let brute = all_deterministic(&g)
                    .iter()
                    .map(|mu| evaluate_pair(&g, mu, &nu).unwrap().get(0, s))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((v.get(0, s) - brute).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hindsight_matches_enumeration_and_beats_the_summed_heuristic_somewhere() {
        let mut heuristic_was_suboptimal = false;
        for seed in 0..200 {
            let mut r = rng(1000 + seed);
            let g = random_game(2, 2, 2, 2, &mut r, ReturnMode::Deterministic).unwrap();
            let k = 1 + (seed as usize % 3);
            let nus: Vec<MarkovPolicy> = (0..k).map(|_| random_policy(&g, true, &mut r)).collect();
            let initials: Vec<usize> = (0..k).map(|_| r.random_range(0..2)).collect();
            let sol = best_policy_in_hindsight(&g, &nus, &initials).unwrap();
            assert!(sol.exact);
            let brute = all_deterministic(&g)
                .iter()
                .map(|mu| {
                    nus.iter()
                        .zip(&initials)
                        .map(|(nu, &s)| evaluate_pair(&g, mu, nu).unwrap().get(0, s))
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((sol.total - brute).abs() < 1e-9, "seed {seed}: {} vs {brute}", sol.total);

            let problem = HindsightProblem {
                g: &g,
                mdps: nus.iter().map(|nu| InducedMdp::new(&g, nu)).collect(),
                initials: &initials,
                positions: (0..2).flat_map(|h| (0..2).map(move |s| (h, s))).collect(),
                offsets: vec![0, 2],
            };
            let heuristic: Vec<Option<usize>> = problem.summed_backward_induction().into_iter().map(Some).collect();
            let mut scratch = vec![vec![0.0; 2]; 3];
            if problem.bound(&heuristic, &mut scratch) < brute - 1e-9 {
                heuristic_was_suboptimal = true;
            }
        }
        assert!(heuristic_was_suboptimal, "expected at least one instance where the K-sum heuristic is not optimal");
    }

    #[test]
    fn hindsight_single_episode_is_best_response() {
        let g = random_game(3, 3, 2, 2, &mut rng(5), ReturnMode::Deterministic).unwrap();
        let nu = random_policy(&g, true, &mut rng(6));
        let (br, _) = best_response_value(&g, &nu).unwrap();
        let sol = best_policy_in_hindsight(&g, std::slice::from_ref(&nu), &[1]).unwrap();
        assert!((sol.total - br.get(0, 1)).abs() < 1e-12);
        let many = vec![nu.clone(); 5];
        let sol = best_policy_in_hindsight(&g, &many, &[1; 5]).unwrap();
        assert!((sol.total - 5.0 * br.get(0, 1)).abs() < 1e-9);
    }

    #[test]
    fn hindsight_dominates_random_candidates() {
        let mut r = rng(7);
        let g = random_game(3, 2, 3, 2, &mut r, ReturnMode::Deterministic).unwrap();
        let nus: Vec<MarkovPolicy> = (0..6).map(|_| random_policy(&g, true, &mut r)).collect();
        let initials = vec![0, 1, 0, 1, 1, 0];
        let sol = best_policy_in_hindsight(&g, &nus, &initials).unwrap();
        for _ in 0..50 {
            let mu = random_policy(&g, false, &mut r);
            let v: f64 = nus.iter().zip(&initials).map(|(nu, &s)| evaluate_pair(&g, &mu, nu).unwrap().get(0, s)).sum();
            assert!(sol.total >= v - 1e-12);
        }
    }

    #[test]
    fn hindsight_rejects_mismatched_inputs() {
        let g = MarkovGame::uniform_sizes(2, 2, 2, 2).unwrap();
        let nu = MarkovPolicy::uniform_min(&g);
        assert!(best_policy_in_hindsight(&g, &[nu.clone()], &[0, 1]).is_err());
        let wrong = MarkovPolicy::uniform(&[2, 2], &[3, 3]);
        assert!(best_policy_in_hindsight(&g, &[wrong], &[0]).is_err());
    }

    #[test]
    fn swapped_game_values_are_complements() {
        for seed in 0..10 {
            let g = random_game(3, 2, 3, 2, &mut rng(50 + seed), ReturnMode::Deterministic).unwrap();
            let v = minimax_values(&g, ORACLE_TOL).unwrap().values;
            let w = minimax_values(&g.swap_roles(), ORACLE_TOL).unwrap().values;
            for h in 0..3 {
                for s in 0..2 {
                    let expected = (3 - h) as f64 - v.get(h, s);
                    assert!((w.get(h, s) - expected).abs() <= 3.0 * ORACLE_TOL);
                }
            }
        }
    }

    #[test]
    fn raising_returns_never_lowers_values() {
        let mut r = rng(8);
        let g = random_game(3, 2, 2, 2, &mut r, ReturnMode::Deterministic).unwrap();
        let mut higher = g.clone();
        for h in 0..3 {
            for s in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let v = g.mean_return(h, s, a, b);
                        higher.set_return(h, s, a, b, (v + r.random::<f64>() * (1.0 - v)).min(1.0));
                    }
                }
            }
        }
        let v = minimax_values(&g, ORACLE_TOL).unwrap().values;
        let w = minimax_values(&higher, ORACLE_TOL).unwrap().values;
        for h in 0..3 {
            for s in 0..2 {
                assert!(w.get(h, s) >= v.get(h, s) - 3.0 * ORACLE_TOL);
            }
        }
    }

    #[test]
    fn pair_value_never_exceeds_best_response() {
        let mut r = rng(9);
        let g = random_game(3, 3, 2, 2, &mut r, ReturnMode::Deterministic).unwrap();
        let nu = random_policy(&g, true, &mut r);
        let (br, _) = best_response_value(&g, &nu).unwrap();
        for _ in 0..50 {
            let mu = random_policy(&g, false, &mut r);
            let v = evaluate_pair(&g, &mu, &nu).unwrap();
            for s in 0..3 {
                assert!(v.get(0, s) <= br.get(0, s) + 1e-12);
            }
        }
    }

    #[test]
    fn evaluate_pair_agrees_with_rollouts() {
        let mut r = rng(10);
        let g = random_game(3, 3, 2, 2, &mut r, ReturnMode::Bernoulli).unwrap();
        let mu = random_policy(&g, false, &mut r);
        let nu = random_policy(&g, true, &mut r);
        let exact = evaluate_pair(&g, &mu, &nu).unwrap().get(0, 0);
        let n = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let mut s = 0;
            let mut total = 0.0;
            for h in 0..3 {
                let a = mu.sample(h, s, &mut r);
                let b = nu.sample(h, s, &mut r);
                let (ret, next) = sample_step(&g, h, s, a, b, &mut r).unwrap();
                total += ret;
                s = next;
            }
            sum += total;
            sq += total * total;
        }
        let mean = sum / n as f64;
        let sd = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * sd, "{mean} vs {exact} (sd {sd})");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = MarkovGame::uniform_sizes(2, 2, 2, 3).unwrap();
        let mu = MarkovPolicy::uniform_max(&g);
        assert!(evaluate_pair(&g, &mu, &mu).is_err());
        assert!(best_response_value(&g, &mu).is_err());
    }
}
