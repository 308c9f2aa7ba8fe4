//! Small dense two-phase primal simplex for equality-form linear programs:
//! minimize `c'x` subject to `Ax = b`, `x >= 0`.
//!
//! Desk-scale verification solver (tens of rows and columns), not a
//! production LP code. Bland's rule keeps it cycle-free and deterministic.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimplexError {
    #[error("linear program is infeasible (phase-1 optimum {0:.3e} > 0)")]
    Infeasible(f64),
    #[error("pivot limit exceeded")]
    PivotLimit,
    #[error("dimension mismatch between A, b, c")]
    Dimensions,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub cost: f64,
    pub x: Vec<f64>,
}

const PIVOT_EPS: f64 = 1e-11;

struct Tableau {
    rows: usize,
    cols: usize, // structural + artificial columns
    /// rows x (cols + 1); the last column is the right-hand side.
    a: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * (self.cols + 1) + c]
    }

    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.a[r * (self.cols + 1) + c]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.cols + 1;
        let scale = self.at(row, col);
        for c in 0..width {
            *self.at_mut(row, c) /= scale;
        }
        for r in 0..self.rows {
            if r == row {
                continue;
            }
            let factor = self.at(r, col);
            if factor == 0.0 {
                continue;
            }
            for c in 0..width {
                let v = self.at(row, c);
                *self.at_mut(r, c) -= factor * v;
            }
        }
        self.basis[row] = col;
    }

    /// Minimizes `costs` over the current basic feasible tableau with
    /// Bland's rule. `allowed` masks columns that may enter the basis.
    fn optimize(&mut self, costs: &[f64], allowed: &[bool]) -> Result<f64, SimplexError> {
        let max_pivots = 50_000;
        for _ in 0..max_pivots {
            // reduced costs from the basis multipliers
            let mut y = vec![0.0; self.rows];
            for (r, &b) in self.basis.iter().enumerate() {
                y[r] = costs[b];
            }
            let mut entering = None;
            for c in 0..self.cols {
                if !allowed[c] || self.basis.contains(&c) {
                    continue;
                }
                let mut reduced = costs[c];
                for r in 0..self.rows {
                    reduced -= y[r] * self.at(r, c);
                }
                if reduced < -1e-9 {
                    entering = Some(c);
                    break; // Bland: smallest eligible index
                }
            }
            let Some(col) = entering else {
                let mut cost = 0.0;
                for (r, &b) in self.basis.iter().enumerate() {
                    cost += costs[b] * self.at(r, self.cols);
                }
                return Ok(cost);
            };
            // ratio test, ties resolved by smallest basis variable (Bland)
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, col);
                if a > PIVOT_EPS {
                    let ratio = self.at(r, self.cols) / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - 1e-12
                                || (ratio < lratio + 1e-12 && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                // costs here are bounded below by construction; treat an
                // unbounded ray as a numerical failure
                return Err(SimplexError::PivotLimit);
            };
            self.pivot(row, col);
        }
        Err(SimplexError::PivotLimit)
    }
}

/// Solves `min c'x : Ax = b, x >= 0` where `a` is row-major `rows x cols`.
pub fn solve_equality_lp(
    a: &[f64],
    b: &[f64],
    c: &[f64],
    rows: usize,
    cols: usize,
) -> Result<LpSolution, SimplexError> {
    if a.len() != rows * cols || b.len() != rows || c.len() != cols {
        return Err(SimplexError::Dimensions);
    }
    let total = cols + rows; // structural + one artificial per row
    let width = total + 1;
    let mut t = Tableau {
        rows,
        cols: total,
        a: vec![0.0; rows * width],
        basis: (cols..total).collect(),
    };
    for r in 0..rows {
        let flip = if b[r] < 0.0 { -1.0 } else { 1.0 };
        for col in 0..cols {
            *t.at_mut(r, col) = flip * a[r * cols + col];
        }
        *t.at_mut(r, cols + r) = 1.0;
        *t.at_mut(r, total) = flip * b[r];
    }

    // phase 1: drive the artificials to zero
    let mut phase1 = vec![0.0; total];
    for k in cols..total {
        phase1[k] = 1.0;
    }
    let all = vec![true; total];
    let infeasibility = t.optimize(&phase1, &all)?;
    if infeasibility > 1e-8 {
        return Err(SimplexError::Infeasible(infeasibility));
    }
    // pivot out any artificial still basic at level zero
    for r in 0..rows {
        if t.basis[r] >= cols {
            if let Some(col) = (0..cols).find(|&c| t.at(r, c).abs() > PIVOT_EPS) {
                t.pivot(r, col);
            }
        }
    }

    // phase 2: original objective, artificials locked out
    let mut phase2 = vec![0.0; total];
    phase2[..cols].copy_from_slice(c);
    let mut allowed = vec![true; total];
    for flag in allowed.iter_mut().skip(cols) {
        *flag = false;
    }
    let cost = t.optimize(&phase2, &allowed)?;

    let mut x = vec![0.0; cols];
    for (r, &bcol) in t.basis.iter().enumerate() {
        if bcol < cols {
            x[bcol] = t.at(r, t.cols);
        }
    }
    Ok(LpSolution { cost, x })
}
