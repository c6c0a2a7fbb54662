//! Nash equilibria of two-player zero-sum matrix games.
//!
//! The primary route is the classic LP reduction: shift the payoff matrix so
//! every entry is at least 1, then solve
//!
//! ```text
//! maximize 1'q  subject to  M q <= 1,  q >= 0
//! ```
//!
//! with a dense tableau simplex (Bland's rule, so no cycling). The column
//! player's strategy is `q / 1'q`; the row player's strategy is read off the
//! slack reduced costs, which are the dual variables. Every answer is
//! returned with a duality-gap certificate computed on the original matrix.
//! If the gap misses the tolerance (numerical trouble only), multiplicative
//! weights self-play is run as a fallback and the better certificate wins.

use serde::{Deserialize, Serialize};

use crate::error::SolverError;

/// Default gap tolerance for ground-truth oracles.
pub const ORACLE_TOL: f64 = 1e-9;
/// Default gap tolerance for the per-step solve inside Q-OL.
pub const LEARNER_TOL: f64 = 1e-6;

const PIVOT_EPS: f64 = 1e-12;
const MW_ITERATIONS: usize = 20_000;

/// Dense payoff matrix; entries are payoffs to the row (max) player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGame {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixGame {
    /// Row-major constructor. Rejects empty or non-finite matrices.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, SolverError> {
        if rows == 0 || cols == 0 {
            return Err(SolverError::Empty);
        }
        if data.len() != rows * cols {
            return Err(SolverError::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, SolverError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(SolverError::Dimension {
                expected: cols,
                got: bad.len(),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `-M^T`: the same game seen from the column player.
    pub fn negated_transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(-self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    /// `alpha * M + beta`.
    pub fn affine(&self, alpha: f64, beta: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| alpha * v + beta).collect(),
        }
    }

    /// `(M y)_a` for every row.
    pub fn row_payoffs(&self, y: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(y).map(|(m, p)| m * p).sum())
            .collect()
    }

    /// `(x^T M)_b` for every column.
    pub fn col_payoffs(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &p) in self.data.chunks(self.cols).zip(x) {
            if p != 0.0 {
                for (o, m) in out.iter_mut().zip(row) {
                    *o += p * m;
                }
            }
        }
        out
    }

    /// `x^T M y`.
    pub fn mixed_value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.row_payoffs(y).iter().zip(x).map(|(v, p)| v * p).sum()
    }
}

/// A strategy pair with its duality gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashCertificate {
    pub row_strategy: Vec<f64>,
    pub col_strategy: Vec<f64>,
    /// Value estimate, always inside `[lower, upper]`.
    pub value: f64,
    /// `max_a (M y)_a - min_b (x^T M)_b`.
    pub gap: f64,
    /// `min_b (x^T M)_b`: what the row strategy guarantees.
    pub lower: f64,
    /// `max_a (M y)_a`: what the column strategy concedes.
    pub upper: f64,
    /// False when the gap exceeds the requested tolerance.
    pub converged: bool,
}

/// Builds the certificate for a given strategy pair.
pub fn certify(m: &MatrixGame, x: &[f64], y: &[f64], value_hint: f64, tol: f64) -> NashCertificate {
    let upper = max_of(&m.row_payoffs(y));
    let lower = min_of(&m.col_payoffs(x));
    let gap = upper - lower;
    NashCertificate {
        row_strategy: x.to_vec(),
        col_strategy: y.to_vec(),
        value: value_hint.clamp(lower.min(upper), upper.max(lower)),
        gap,
        lower,
        upper,
        converged: gap <= tol,
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Solves `m` to a duality gap of at most `tol`.
///
/// Deterministic for fixed input. A certificate with `converged == false`
/// is returned (never an error) when the tolerance is not met.
pub fn solve_zero_sum(m: &MatrixGame, tol: f64) -> Result<NashCertificate, SolverError> {
    solve_zero_sum_warm(m, tol, None)
}

/// As [`solve_zero_sum`], but first tries `warm` and returns it unchanged if
/// its gap on `m` is already within `tol`.
pub fn solve_zero_sum_warm(
    m: &MatrixGame,
    tol: f64,
    warm: Option<(&[f64], &[f64])>,
) -> Result<NashCertificate, SolverError> {
    if !(tol > 0.0) {
        return Err(SolverError::BadTolerance(tol));
    }
    if let Some((x, y)) = warm {
        if x.len() == m.rows && y.len() == m.cols {
            let cert = certify(m, x, y, m.mixed_value(x, y), tol);
            if cert.converged {
                return Ok(cert);
            }
        }
    }
    if m.rows == 1 || m.cols == 1 {
        return Ok(solve_degenerate(m, tol));
    }
    let mut best = simplex(m, tol);
    if !best.converged {
        let mw = multiplicative_weights(m, tol, MW_ITERATIONS);
        if mw.gap < best.gap {
            best = mw;
        }
    }
    Ok(best)
}

/// One row or one column: the single player just best-responds.
fn solve_degenerate(m: &MatrixGame, tol: f64) -> NashCertificate {
    if m.rows == 1 {
        let (b, v) = argmin(m.data());
        let mut y = vec![0.0; m.cols];
        y[b] = 1.0;
        certify(m, &[1.0], &y, v, tol)
    } else {
        let (a, v) = argmax(m.data());
        let mut x = vec![0.0; m.rows];
        x[a] = 1.0;
        certify(m, &x, &[1.0], v, tol)
    }
}

fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

fn argmin(v: &[f64]) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < best.1 {
            best = (i, x);
        }
    }
    best
}

fn simplex(m: &MatrixGame, tol: f64) -> NashCertificate {
    let (rows, cols) = (m.rows, m.cols);
    let min = min_of(m.data());
    let max = max_of(m.data());
    let scale = (max - min).max(1.0);
    // shifted and scaled payoffs in [1, 2]
    let shift = |v: f64| 1.0 + (v - min) / scale;

    let width = cols + rows + 1;
    let rhs = width - 1;
    let obj = rows;
    let mut t = vec![0.0; (rows + 1) * width];
    for i in 0..rows {
        for j in 0..cols {
            t[i * width + j] = shift(m.get(i, j));
        }
        t[i * width + cols + i] = 1.0;
        t[i * width + rhs] = 1.0;
    }
    for j in 0..cols {
        t[obj * width + j] = -1.0;
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();

    let max_iter = 10_000 + 50 * (rows + cols);
    for _ in 0..max_iter {
        let Some(enter) = (0..rhs).find(|&j| t[obj * width + j] < -PIVOT_EPS) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            let a = t[i * width + enter];
            if a > PIVOT_EPS {
                let ratio = t[i * width + rhs] / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        let tie = (ratio - best).abs() <= 1e-12 * best.abs().max(1.0);
                        if ratio < best && !tie || tie && basis[i] < basis[r] {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
        }
        // positive payoffs keep the LP bounded, so a leaving row always exists
        let Some((r, _)) = leave else { break };
        pivot(&mut t, width, rows + 1, r, enter);
        basis[r] = enter;
    }

    let mut q = vec![0.0; cols];
    for (i, &var) in basis.iter().enumerate() {
        if var < cols {
            q[var] = t[i * width + rhs].max(0.0);
        }
    }
    let p: Vec<f64> = (0..rows).map(|i| t[obj * width + cols + i].max(0.0)).collect();
    let total = t[obj * width + rhs];
    let y = normalize(q);
    let x = normalize(p);
    // game value of the shifted matrix is 1 / total
    let value = if total > 0.0 {
        (1.0 / total - 1.0) * scale + min
    } else {
        m.mixed_value(&x, &y)
    };
    certify(m, &x, &y, value, tol)
}

fn pivot(t: &mut [f64], width: usize, height: usize, r: usize, c: usize) {
    let pv = t[r * width + c];
    for v in &mut t[r * width..(r + 1) * width] {
        *v /= pv;
    }
    let pivot_row: Vec<f64> = t[r * width..(r + 1) * width].to_vec();
    for i in 0..height {
        if i == r {
            continue;
        }
        let factor = t[i * width + c];
        if factor != 0.0 {
            for (v, p) in t[i * width..(i + 1) * width].iter_mut().zip(&pivot_row) {
                *v -= factor * p;
            }
            t[i * width + c] = 0.0;
        }
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total > 0.0 {
        for x in &mut v {
            *x /= total;
        }
    } else {
        let n = v.len() as f64;
        v.iter_mut().for_each(|x| *x = 1.0 / n);
    }
    v
}

/// Hedge self-play with averaged strategies; returns the best certificate
/// seen at periodic checkpoints.
fn multiplicative_weights(m: &MatrixGame, tol: f64, iterations: usize) -> NashCertificate {
    let min = min_of(m.data());
    let range = (max_of(m.data()) - min).max(f64::MIN_POSITIVE);
    let unit = m.affine(1.0 / range, -min / range);
    let n = m.rows.max(m.cols) as f64;
    let eta = (8.0 * n.ln().max(1.0) / iterations as f64).sqrt();

    let mut row_cum = vec![0.0; m.rows];
    let mut col_cum = vec![0.0; m.cols];
    let mut x = vec![1.0 / m.rows as f64; m.rows];
    let mut y = vec![1.0 / m.cols as f64; m.cols];
    let mut x_avg = vec![0.0; m.rows];
    let mut y_avg = vec![0.0; m.cols];
    let mut best: Option<NashCertificate> = None;

    for it in 1..=iterations {
        for (a, v) in x_avg.iter_mut().zip(&x) {
            *a += v;
        }
        for (a, v) in y_avg.iter_mut().zip(&y) {
            *a += v;
        }
        let row_gain = unit.row_payoffs(&y);
        let col_gain = unit.col_payoffs(&x);
        for (c, g) in row_cum.iter_mut().zip(&row_gain) {
            *c += g;
        }
        for (c, g) in col_cum.iter_mut().zip(&col_gain) {
            *c -= g;
        }
        x = softmax(&row_cum, eta);
        y = softmax(&col_cum, eta);

        if it % 1000 == 0 || it == iterations {
            let xa = normalize(x_avg.clone());
            let ya = normalize(y_avg.clone());
            let cert = certify(m, &xa, &ya, m.mixed_value(&xa, &ya), tol);
            if best.as_ref().is_none_or(|b| cert.gap < b.gap) {
                best = Some(cert);
            }
        }
    }
    best.expect("at least one checkpoint")
}

fn softmax(scores: &[f64], eta: f64) -> Vec<f64> {
    let top = max_of(scores);
    normalize(scores.iter().map(|s| (eta * (s - top)).exp()).collect())
}

/// Best pure row against column mix `y`; ties go to the lowest index.
pub fn best_response_row(m: &MatrixGame, y: &[f64]) -> Result<(usize, f64), SolverError> {
    if y.len() != m.cols {
        return Err(SolverError::Dimension {
            expected: m.cols,
            got: y.len(),
        });
    }
    Ok(argmax(&m.row_payoffs(y)))
}

/// Best pure column (minimizing) against row mix `x`; ties go to the lowest index.
pub fn best_response_col(m: &MatrixGame, x: &[f64]) -> Result<(usize, f64), SolverError> {
    if x.len() != m.rows {
        return Err(SolverError::Dimension {
            expected: m.rows,
            got: x.len(),
        });
    }
    Ok(argmin(&m.col_payoffs(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn game(rows: &[Vec<f64>]) -> MatrixGame {
        MatrixGame::from_rows(rows).unwrap()
    }

    /// Value of a 2-row game by scanning the breakpoints of the concave
    /// piecewise-linear guarantee `p -> min_j (p M_0j + (1-p) M_1j)`.
    fn two_row_value(m: &MatrixGame) -> f64 {
        let guarantee = |p: f64| {
            (0..m.cols())
                .map(|j| p * m.get(0, j) + (1.0 - p) * m.get(1, j))
                .fold(f64::INFINITY, f64::min)
        };
        let mut candidates = vec![0.0, 1.0];
        for j in 0..m.cols() {
            for k in j + 1..m.cols() {
                let (dj, dk) = (m.get(0, j) - m.get(1, j), m.get(0, k) - m.get(1, k));
                if (dj - dk).abs() > 1e-15 {
                    let p = (m.get(1, k) - m.get(1, j)) / (dj - dk);
                    if (0.0..=1.0).contains(&p) {
                        candidates.push(p);
                    }
                }
            }
        }
        candidates.into_iter().map(guarantee).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn matching_pennies() {
        let c = solve_zero_sum(&game(&[vec![1.0, -1.0], vec![-1.0, 1.0]]), ORACLE_TOL).unwrap();
        assert!(c.converged);
        assert!(c.value.abs() < 1e-12);
        assert!(c.gap.abs() < 1e-12);
        for p in c.row_strategy.iter().chain(&c.col_strategy) {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_closed_form() {
        let c = solve_zero_sum(&game(&[vec![2.0, 1.0], vec![0.0, 3.0]]), ORACLE_TOL).unwrap();
        assert!((c.value - 1.5).abs() < 1e-9);
        assert!((c.row_strategy[0] - 0.75).abs() < 1e-9);
        assert!((c.row_strategy[1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn rock_paper_scissors() {
        let m = game(&[
            vec![0.0, -1.0, 1.0],
            vec![1.0, 0.0, -1.0],
            vec![-1.0, 1.0, 0.0],
        ]);
        let c = solve_zero_sum(&m, ORACLE_TOL).unwrap();
        assert!(c.value.abs() < 1e-12);
        for p in c.row_strategy.iter().chain(&c.col_strategy) {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn saddle_point_and_degenerate_shapes() {
        let c = solve_zero_sum(&game(&[vec![3.0, 5.0], vec![1.0, 4.0]]), ORACLE_TOL).unwrap();
        assert!((c.value - 3.0).abs() < 1e-12);
        let row = solve_zero_sum(&game(&[vec![0.4, 0.2, 0.9]]), ORACLE_TOL).unwrap();
        assert_eq!(row.value, 0.2);
        assert_eq!(row.col_strategy, vec![0.0, 1.0, 0.0]);
        let col = solve_zero_sum(&game(&[vec![0.4], vec![0.7]]), ORACLE_TOL).unwrap();
        assert_eq!(col.value, 0.7);
        let constant = solve_zero_sum(&game(&[vec![2.0, 2.0], vec![2.0, 2.0]]), ORACLE_TOL).unwrap();
        assert_eq!(constant.value, 2.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            MatrixGame::new(1, 2, vec![0.0, f64::NAN]).unwrap_err(),
            SolverError::NonFinite { row: 0, col: 1 }
        );
        assert_eq!(MatrixGame::new(0, 2, vec![]).unwrap_err(), SolverError::Empty);
        let m = game(&[vec![1.0]]);
        assert!(matches!(solve_zero_sum(&m, 0.0), Err(SolverError::BadTolerance(_))));
        assert!(best_response_row(&m, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn best_response_row_ties_and_point_masses() {
        let zero = game(&[vec![0.0; 3], vec![0.0; 3]]);
        assert_eq!(best_response_row(&zero, &[0.2, 0.3, 0.5]).unwrap(), (0, 0.0));
        let m = game(&[vec![1.0, 5.0], vec![2.0, 4.0], vec![3.0, 3.0]]);
        assert_eq!(best_response_row(&m, &[0.0, 1.0]).unwrap(), (0, 5.0));
        assert_eq!(best_response_row(&m, &[1.0, 0.0]).unwrap(), (2, 3.0));
        assert_eq!(best_response_col(&m, &[0.0, 0.0, 1.0]).unwrap(), (0, 3.0));
    }

    #[test]
    fn warm_start_is_reused_when_certified() {
        let m = game(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let warm = [0.5, 0.5];
        let c = solve_zero_sum_warm(&m, LEARNER_TOL, Some((&warm, &warm))).unwrap();
        assert_eq!(c.row_strategy, warm.to_vec());
        let stale = [1.0, 0.0];
        let c = solve_zero_sum_warm(&m, LEARNER_TOL, Some((&stale, &stale))).unwrap();
        assert!(c.gap <= LEARNER_TOL);
    }

    #[test]
    fn multiplicative_weights_approaches_the_value() {
        let m = game(&[vec![2.0, 1.0], vec![0.0, 3.0]]);
        let c = multiplicative_weights(&m, ORACLE_TOL, MW_ITERATIONS);
        assert!(c.gap < 0.05, "{}", c.gap);
        assert!((c.value - 1.5).abs() <= c.gap);
    }

    fn matrix_strategy() -> impl Strategy<Value = MatrixGame> {
        (1usize..=8, 1usize..=8).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-1.0f64..1.0, r * c)
                .prop_map(move |d| MatrixGame::new(r, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn certificates_are_tight(m in matrix_strategy()) {
            let c = solve_zero_sum(&m, ORACLE_TOL).unwrap();
            prop_assert!(c.converged);
            prop_assert!(c.gap >= -1e-12 && c.gap <= ORACLE_TOL);
            prop_assert!(c.lower - 1e-12 <= c.value && c.value <= c.upper + 1e-12);
            for s in [&c.row_strategy, &c.col_strategy] {
                prop_assert!(s.iter().all(|&p| p >= 0.0));
                prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn antisymmetry(m in matrix_strategy()) {
            let c = solve_zero_sum(&m, ORACLE_TOL).unwrap();
            let d = solve_zero_sum(&m.negated_transpose(), ORACLE_TOL).unwrap();
            prop_assert!((c.value + d.value).abs() <= 2.0 * ORACLE_TOL);
        }

        #[test]
        fn shift_scale_covariance(m in matrix_strategy(), alpha in 0.1f64..10.0, beta in -5.0f64..5.0) {
            let c = solve_zero_sum(&m, ORACLE_TOL).unwrap();
            let d = solve_zero_sum(&m.affine(alpha, beta), ORACLE_TOL).unwrap();
            prop_assert!((d.value - (alpha * c.value + beta)).abs() <= 2.0 * ORACLE_TOL * alpha.max(1.0));
        }

        #[test]
        fn two_row_games_match_breakpoint_scan(cols in 1usize..=3, data in proptest::collection::vec(-1.0f64..1.0, 6)) {
            let m = MatrixGame::new(2, cols, data[..2 * cols].to_vec()).unwrap();
            let c = solve_zero_sum(&m, ORACLE_TOL).unwrap();
            let v = two_row_value(&m);
            prop_assert!(c.lower <= v + 1e-12 && v <= c.upper + 1e-12);
            prop_assert!((c.value - v).abs() <= ORACLE_TOL);
        }

        #[test]
        fn best_response_matches_scan(data in proptest::collection::vec(-1.0f64..1.0, 16), w in proptest::collection::vec(0.01f64..1.0, 4)) {
            let m = MatrixGame::new(4, 4, data).unwrap();
            let total: f64 = w.iter().sum();
            let y: Vec<f64> = w.iter().map(|v| v / total).collect();
            let (row, value) = best_response_row(&m, &y).unwrap();
            let mut best = (0, f64::NEG_INFINITY);
            for i in 0..4 {
                let v: f64 = (0..4).map(|j| m.get(i, j) * y[j]).sum();
                if v > best.1 { best = (i, v); }
            }
            prop_assert_eq!(row, best.0);
            prop_assert!((value - best.1).abs() < 1e-12);
        }
    }
}
