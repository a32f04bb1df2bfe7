//! Minimum-cost perfect matching on a square cost matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DancerAssignment {
    /// `permutation[i]` is the next-chunk dancer matched to current dancer `i`.
    pub permutation: Vec<usize>,
    pub cost: f64,
}

/// `Σ_i cost[i][perm[i]]`, summed in row order.
pub fn assignment_cost(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

fn check(cost: &[Vec<f64>]) -> Result<usize> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::BadMatrix("empty".into()));
    }
    for (i, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(Error::BadMatrix(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::BadMatrix(format!("entry {v} in row {i}")));
        }
    }
    Ok(n)
}

/// Shortest-augmenting-path Hungarian method with row/column potentials,
/// O(n³).
pub fn match_dancers_hungarian(cost: &[Vec<f64>]) -> Result<DancerAssignment> {
    let n = check(cost)?;
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut permutation = vec![0; n];
    for j in 1..=n {
        permutation[row_of[j] - 1] = j - 1;
    }
    let cost_total = assignment_cost(cost, &permutation);
    Ok(DancerAssignment {
        permutation,
        cost: cost_total,
    })
}
