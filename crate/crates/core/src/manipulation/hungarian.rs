//! Minimum-cost assignment by the potential-based shortest augmenting path
//! method, `O(n^2 m)` for an `n x m` cost matrix with `n <= m`.

use nalgebra::DMatrix;

/// Assigns each row to a distinct column so the summed cost is minimal.
/// Returns the column picked for each row. Requires `nrows <= ncols`.
///
/// Deterministic: among equal-cost assignments the scan order of columns
/// decides, so identical inputs always produce identical outputs.
pub fn assign(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let m = cost.ncols();
    assert!(n <= m, "assignment needs at least as many columns as rows");
    assert!(
        cost.iter().all(|c| c.is_finite()),
        "assignment costs must be finite"
    );
    // Row and column potentials; p[j] is the row matched to column j
    // (1-indexed, 0 means free). Column 0 is a virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // Walk the augmenting path backwards, flipping matches.
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            result[p[j] - 1] = j - 1;
        }
    }
    result
}

/// Total cost of an assignment returned by [`assign`].
pub fn total_cost(cost: &DMatrix<f64>, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum()
}
