//! Dense two-phase tableau simplex for the node relaxations of the big-M
//! branch-and-bound.
//!
//! Problems are tiny (tens of rows and columns), so a textbook tableau with
//! Bland's anti-cycling rule is both fast enough and deterministic. Variables
//! are non-negative; rows are inequalities `A_ub x <= b_ub` plus equalities
//! `A_eq x = b_eq`; the objective is maximised.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct LinearProgram {
    /// Maximise `objective . x`.
    pub objective: DVector<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

const TOL: f64 = 1e-9;

#[derive(Clone, Copy, PartialEq)]
enum RowKind {
    Le,
    Ge,
    Eq,
}

pub(crate) fn solve(lp: &LinearProgram) -> LpOutcome {
    let n = lp.objective.len();
    let m_ub = lp.b_ub.len();
    let m_eq = lp.b_eq.len();
    let m = m_ub + m_eq;
    debug_assert_eq!(lp.a_ub.ncols().max(n), n);
    debug_assert!(m_eq == 0 || lp.a_eq.ncols() == n);

    // Collect rows with non-negative right-hand sides.
    let mut rows: Vec<(Vec<f64>, f64, RowKind)> = Vec::with_capacity(m);
    for i in 0..m_ub {
        let mut coeffs: Vec<f64> = (0..n).map(|j| lp.a_ub[(i, j)]).collect();
        let mut rhs = lp.b_ub[i];
        let mut kind = RowKind::Le;
        if rhs < 0.0 {
            coeffs.iter_mut().for_each(|c| *c = -*c);
            rhs = -rhs;
            kind = RowKind::Ge;
        }
        rows.push((coeffs, rhs, kind));
    }
    for i in 0..m_eq {
        let mut coeffs: Vec<f64> = (0..n).map(|j| lp.a_eq[(i, j)]).collect();
        let mut rhs = lp.b_eq[i];
        if rhs < 0.0 {
            coeffs.iter_mut().for_each(|c| *c = -*c);
            rhs = -rhs;
        }
        rows.push((coeffs, rhs, RowKind::Eq));
    }

    // Column layout: structural | slack/surplus | artificial.
    let n_slack = m_ub;
    let n_art = rows
        .iter()
        .filter(|(_, _, k)| !matches!(k, RowKind::Le))
        .count();
    let total = n + n_slack + n_art;

    let mut t = DMatrix::zeros(m, total + 1);
    let mut basis = vec![0usize; m];
    let mut art_idx = 0;
    for (i, (coeffs, rhs, kind)) in rows.iter().enumerate() {
        for (j, &c) in coeffs.iter().enumerate() {
            t[(i, j)] = c;
        }
        t[(i, total)] = *rhs;
        match kind {
            RowKind::Le => {
                t[(i, n + i)] = 1.0;
                basis[i] = n + i;
            }
            RowKind::Ge => {
                t[(i, n + i)] = -1.0;
                t[(i, n + n_slack + art_idx)] = 1.0;
                basis[i] = n + n_slack + art_idx;
                art_idx += 1;
            }
            RowKind::Eq => {
                t[(i, n + n_slack + art_idx)] = 1.0;
                basis[i] = n + n_slack + art_idx;
                art_idx += 1;
            }
        }
    }

    // Phase 1: minimise the artificial sum.
    if n_art > 0 {
        let mut cost = vec![0.0; total + 1];
        for j in n + n_slack..total {
            cost[j] = 1.0;
        }
        for i in 0..m {
            if basis[i] >= n + n_slack {
                for j in 0..=total {
                    cost[j] -= t[(i, j)];
                }
            }
        }
        if !pivot_to_optimum(&mut t, &mut basis, &mut cost, total) {
            // Phase 1 is bounded below by zero; unboundedness cannot happen.
            return LpOutcome::Infeasible;
        }
        let value = -cost[total];
        if value > 1e-7 {
            return LpOutcome::Infeasible;
        }
        // Pivot remaining artificials out of the basis or drop their rows.
        for i in 0..m {
            if basis[i] >= n + n_slack {
                let mut pivoted = false;
                for j in 0..n + n_slack {
                    if t[(i, j)].abs() > TOL {
                        pivot(&mut t, &mut basis, i, j, &mut [0.0; 0]);
                        pivoted = true;
                        break;
                    }
                }
                if !pivoted {
                    // Redundant row; zero it so it never constrains again.
                    for j in 0..=total {
                        t[(i, j)] = 0.0;
                    }
                }
            }
        }
        // Erase artificial columns.
        for i in 0..m {
            for j in n + n_slack..total {
                t[(i, j)] = 0.0;
            }
        }
    }

    // Phase 2: minimise -objective.
    let mut cost = vec![0.0; total + 1];
    for j in 0..n {
        cost[j] = -lp.objective[j];
    }
    for i in 0..m {
        let b = basis[i];
        if cost[b].abs() > 0.0 {
            let factor = cost[b];
            for j in 0..=total {
                cost[j] -= factor * t[(i, j)];
            }
        }
    }
    if !pivot_to_optimum(&mut t, &mut basis, &mut cost, total) {
        return LpOutcome::Unbounded;
    }

    let mut x = DVector::zeros(n);
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = t[(i, total)];
        }
    }
    let value = lp.objective.dot(&x);
    LpOutcome::Optimal { x, value }
}

/// Bland-rule simplex iterations until optimal. Returns false on
/// unboundedness.
fn pivot_to_optimum(
    t: &mut DMatrix<f64>,
    basis: &mut [usize],
    cost: &mut [f64],
    total: usize,
) -> bool {
    let m = basis.len();
    loop {
        // Entering: lowest-index column with a negative reduced cost.
        let entering = (0..total).find(|&j| cost[j] < -TOL);
        let Some(j) = entering else {
            return true;
        };
        // Leaving: minimum ratio, ties to the lowest basic index.
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = t[(i, j)];
            if a > TOL {
                let ratio = t[(i, total)] / a;
                let better = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - TOL || (ratio < lr + TOL && basis[i] < basis[li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((i, _)) = leave else {
            return false;
        };
        pivot(t, basis, i, j, cost);
    }
}

fn pivot(t: &mut DMatrix<f64>, basis: &mut [usize], row: usize, col: usize, cost: &mut [f64]) {
    let total = t.ncols() - 1;
    let p = t[(row, col)];
    for j in 0..=total {
        t[(row, j)] /= p;
    }
    for i in 0..t.nrows() {
        if i != row {
            let f = t[(i, col)];
            if f != 0.0 {
                for j in 0..=total {
                    t[(i, j)] -= f * t[(row, j)];
                }
            }
        }
    }
    if !cost.is_empty() {
        let f = cost[col];
        if f != 0.0 {
            for j in 0..=total {
                cost[j] -= f * t[(row, j)];
            }
        }
    }
    basis[row] = col;
}
