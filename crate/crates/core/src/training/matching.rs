use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assignment of ground-truth rooms to predicted query rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `assignment[i]` is the query row matched to ground-truth room `i`.
    pub assignment: Vec<usize>,
    pub total_cost: f64,
}

/// Summed L1 distance between index-aligned vertices of two `n × 2`
/// coordinate rows.
pub fn pair_cost(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() % 2 != 0 {
        return Err(Error::Shape(format!(
            "pair_cost over {} and {} coordinates",
            pred.len(),
            gt.len()
        )));
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| (a - b).abs()).sum())
}

/// Minimum-cost assignment of every row to a distinct column of a
/// `rows × cols` cost matrix (`rows <= cols`). Returns the column of each
/// row.
pub fn hungarian(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    assert!(rows <= cols, "hungarian needs rows <= cols");
    assert_eq!(cost.len(), rows * cols);
    if rows == 0 {
        return Vec::new();
    }
    // Shortest augmenting paths with potentials; 1-based with a virtual
    // column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
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
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; rows];
    for j in 1..=cols {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Matches ground-truth rooms (rows of `n × 2` normalized coordinates) to
/// the `m` predicted rows of `pred` (`m × n × 2`).
pub fn match_rooms(pred: &[f64], m: usize, n: usize, gt: &[Vec<f64>]) -> Result<MatchResult> {
    if gt.len() > m {
        return Err(Error::Capacity {
            what: "ground-truth rooms",
            got: gt.len(),
            limit: m,
        });
    }
    if pred.len() != m * n * 2 {
        return Err(Error::Shape(format!("{} prediction values for {m} x {n} queries", pred.len())));
    }
    let mut cost = Vec::with_capacity(gt.len() * m);
    for g in gt {
        for r in 0..m {
            cost.push(pair_cost(&pred[r * n * 2..(r + 1) * n * 2], g)?);
        }
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numeric("non-finite matching cost".into()));
    }
    let assignment = hungarian(&cost, gt.len(), m);
    let total_cost = assignment.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum();
    Ok(MatchResult { assignment, total_cost })
}
