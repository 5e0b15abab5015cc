//! Exact solver for finite two-player zero-sum matrix games.
//!
//! The row player maximizes. The payoff is mapped affinely into `[1, 2]` and
//! the column LP `max 1^T y  s.t.  A' y <= 1, y >= 0` is solved with a dense
//! primal simplex under Bland's rule. The row player's strategy is read from
//! the slack reduced costs of the optimal tableau (the dual solution).

use crate::error::{MarlError, Result};

/// Tolerance for strategies lying on the probability simplex.
pub const SIMPLEX_TOL: f64 = 1e-8;

const PIVOT_EPS: f64 = 1e-12;

/// Row-major payoff for the (maximizing) row player.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGame {
    rows: usize,
    cols: usize,
    payoff: Vec<f64>,
}

impl MatrixGame {
    pub fn new(rows: usize, cols: usize, payoff: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(MarlError::Argument("matrix game needs at least one row and column".into()));
        }
        if payoff.len() != rows * cols {
            return Err(MarlError::Dimension {
                expected: rows * cols,
                got: payoff.len(),
                context: "matrix game payoff",
            });
        }
        if let Some(v) = payoff.iter().find(|v| !v.is_finite()) {
            return Err(MarlError::Argument(format!("non-finite payoff entry {v}")));
        }
        Ok(Self { rows, cols, payoff })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MarlError::Argument("ragged payoff rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.payoff[a * self.cols + b]
    }

    pub fn payoff(&self) -> &[f64] {
        &self.payoff
    }

    /// The game seen by the column player as a maximizer: `-A^T`.
    pub fn negated_transpose(&self) -> MatrixGame {
        let payoff = (0..self.cols)
            .flat_map(|b| (0..self.rows).map(move |a| (a, b)))
            .map(|(a, b)| -self.at(a, b))
            .collect();
        MatrixGame {
            rows: self.cols,
            cols: self.rows,
            payoff,
        }
    }

    /// `sum_a x_a A[a][b]` for every column `b`.
    pub fn column_payoffs(&self, row_strategy: &[f64]) -> Vec<f64> {
        (0..self.cols)
            .map(|b| (0..self.rows).map(|a| row_strategy[a] * self.at(a, b)).sum())
            .collect()
    }

    /// `sum_b y_b A[a][b]` for every row `a`.
    pub fn row_payoffs(&self, col_strategy: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|a| (0..self.cols).map(|b| col_strategy[b] * self.at(a, b)).sum())
            .collect()
    }
}

/// Value and optimal mixed strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSolution {
    pub value: f64,
    pub row_strategy: Vec<f64>,
    pub col_strategy: Vec<f64>,
}

fn pivot(tableau: &mut [Vec<f64>], objective: &mut [f64], row: usize, col: usize) {
    let p = tableau[row][col];
    for v in tableau[row].iter_mut() {
        *v /= p;
    }
    let pivot_row = tableau[row].clone();
    for (r, line) in tableau.iter_mut().enumerate() {
        if r != row {
            let f = line[col];
            if f != 0.0 {
                for (v, pv) in line.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    let f = objective[col];
    if f != 0.0 {
        for (v, pv) in objective.iter_mut().zip(&pivot_row) {
            *v -= f * pv;
        }
    }
}

/// Solves the game exactly. Deterministic for a fixed matrix; in degenerate
/// games the strategies of the first optimal basis reached are returned.
pub fn solve_minimax(game: &MatrixGame) -> Result<GameSolution> {
    let (m, n) = (game.rows, game.cols);
    let lo = game.payoff.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = game.payoff.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(MarlError::Argument("non-finite payoff".into()));
    }
    let range = hi - lo;
    if range == 0.0 {
        let mut row_strategy = vec![0.0; m];
        let mut col_strategy = vec![0.0; n];
        row_strategy[0] = 1.0;
        col_strategy[0] = 1.0;
        return Ok(GameSolution {
            value: lo,
            row_strategy,
            col_strategy,
        });
    }

    // Columns: y_0..y_{n-1}, slack_0..slack_{m-1}, rhs.
    let width = n + m + 1;
    let mut tableau: Vec<Vec<f64>> = (0..m)
        .map(|a| {
            let mut line = vec![0.0; width];
            for b in 0..n {
                line[b] = (game.at(a, b) - lo) / range + 1.0;
            }
            line[n + a] = 1.0;
            line[width - 1] = 1.0;
            line
        })
        .collect();
    // Reduced costs c_j - c_B^T B^-1 a_j; the last entry tracks -objective.
    let mut objective = vec![0.0; width];
    objective[..n].iter_mut().for_each(|c| *c = 1.0);
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Bland's rule terminates; the cap only guards against floating-point surprises.
    let max_pivots = 50 * (n + m) * (n + m) + 100;
    let mut pivots = 0;
    while let Some(enter) = (0..n + m).find(|&j| objective[j] > PIVOT_EPS) {
        let mut leave: Option<usize> = None;
        for r in 0..m {
            let coef = tableau[r][enter];
            if coef > PIVOT_EPS {
                let ratio = tableau[r][width - 1] / coef;
                leave = match leave {
                    None => Some(r),
                    Some(best) => {
                        let best_ratio = tableau[best][width - 1] / tableau[best][enter];
                        if ratio < best_ratio - PIVOT_EPS
                            || ((ratio - best_ratio).abs() <= PIVOT_EPS && basis[r] < basis[best])
                        {
                            Some(r)
                        } else {
                            Some(best)
                        }
                    }
                };
            }
        }
        let leave = leave.ok_or_else(|| {
            MarlError::Argument("matrix game LP unbounded; payoff shift failed".into())
        })?;
        pivot(&mut tableau, &mut objective, leave, enter);
        basis[leave] = enter;
        pivots += 1;
        if pivots > max_pivots {
            return Err(MarlError::Argument("simplex pivot limit exceeded".into()));
        }
    }

    let mut y = vec![0.0; n];
    for (r, &var) in basis.iter().enumerate() {
        if var < n {
            y[var] = tableau[r][width - 1].max(0.0);
        }
    }
    let x: Vec<f64> = (0..m).map(|a| (-objective[n + a]).max(0.0)).collect();
    let y_sum: f64 = y.iter().sum();
    let x_sum: f64 = x.iter().sum();
    let value_shifted = 1.0 / y_sum;
    Ok(GameSolution {
        value: (value_shifted - 1.0) * range + lo,
        row_strategy: x.iter().map(|v| v / x_sum).collect(),
        col_strategy: y.iter().map(|v| v / y_sum).collect(),
    })
}

fn check_simplex(strategy: &[f64], len: usize) -> Result<()> {
    if strategy.len() != len {
        return Err(MarlError::Dimension {
            expected: len,
            got: strategy.len(),
            context: "mixed strategy",
        });
    }
    let total: f64 = strategy.iter().sum();
    if strategy.iter().any(|&p| !(p >= -SIMPLEX_TOL)) || (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(MarlError::Argument(format!(
            "strategy is not on the probability simplex (sum {total})"
        )));
    }
    Ok(())
}

/// Payoff the row strategy guarantees against a best-responding column player.
pub fn best_response_value(game: &MatrixGame, row_strategy: &[f64]) -> Result<f64> {
    check_simplex(row_strategy, game.rows)?;
    Ok(game
        .column_payoffs(row_strategy)
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

/// Payoff the column strategy concedes to a best-responding row player.
pub fn best_response_value_col(game: &MatrixGame, col_strategy: &[f64]) -> Result<f64> {
    check_simplex(col_strategy, game.cols)?;
    Ok(game
        .row_payoffs(col_strategy)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matching_pennies() {
        let g = MatrixGame::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let s = solve_minimax(&g).unwrap();
        assert!(close(s.value, 0.0, 1e-12));
        for p in s.row_strategy.iter().chain(&s.col_strategy) {
            assert!(close(*p, 0.5, 1e-12));
        }
    }

    #[test]
    fn two_by_two_mixed() {
        let g = MatrixGame::from_rows(&[vec![3.0, 1.0], vec![0.0, 2.0]]).unwrap();
        let s = solve_minimax(&g).unwrap();
        assert!(close(s.value, 1.5, 1e-12));
        assert!(close(s.row_strategy[0], 0.5, 1e-12));
        assert!(close(s.col_strategy[0], 0.25, 1e-12));
        assert!(close(s.col_strategy[1], 0.75, 1e-12));
    }

    #[test]
    fn pure_saddle_and_constant_games() {
        let g = MatrixGame::from_rows(&[vec![4.0, 5.0], vec![1.0, 0.0]]).unwrap();
        let s = solve_minimax(&g).unwrap();
        assert!(close(s.value, 4.0, 1e-12));
        assert!(close(s.row_strategy[0], 1.0, 1e-12));
        assert!(close(s.col_strategy[0], 1.0, 1e-12));

        let flat = MatrixGame::new(2, 3, vec![0.0; 6]).unwrap();
        assert_eq!(solve_minimax(&flat).unwrap().value, 0.0);
    }

    #[test]
    fn best_responses() {
        let g = MatrixGame::from_rows(&[vec![3.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(best_response_value(&g, &[1.0, 0.0]).unwrap(), 1.0);
        assert!(best_response_value(&g, &[0.7, 0.7]).is_err());
        assert!(close(best_response_value_col(&g, &[0.25, 0.75]).unwrap(), 1.5, 1e-15));
    }

    #[test]
    fn rejects_nan() {
        assert!(MatrixGame::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(MatrixGame::new(1, 1, vec![f64::INFINITY]).is_err());
    }
}
