use serde::{Deserialize, Serialize};

use crate::{Result, TrainError};

/// Query ↔ ground-truth pairs; queries not listed are negatives.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(query, gt)` sorted by query index.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of the matched costs, accumulated in `pairs` order.
    pub total: f64,
}

impl MatchResult {
    pub fn gt_of(&self, query: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == query).map(|p| p.1)
    }

    pub fn query_of(&self, gt: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == gt).map(|p| p.0)
    }
}

/// Minimum-cost assignment on a rectangular `n × m` matrix (Kuhn–Munkres with
/// potentials, O(min² · max)). Exactly `min(n, m)` pairs are returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<MatchResult> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != m) {
        return Err(TrainError::Assignment("ragged cost matrix".into()));
    }
    if let Some((i, j)) = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).find(|&(i, j)| !cost[i][j].is_finite()) {
        return Err(TrainError::Assignment(format!("non-finite cost {} at ({i}, {j})", cost[i][j])));
    }
    if n == 0 || m == 0 {
        return Ok(MatchResult::default());
    }
    // rows must not outnumber columns
    let transposed = n > m;
    let (rows, cols) = if transposed { (m, n) } else { (n, m) };
    let a = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };

    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    // p[j]: row (1-based) assigned to column j; way[j]: previous column on the augmenting path
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut pairs: Vec<(usize, usize)> = (1..=cols)
        .filter(|&j| p[j] != 0)
        .map(|j| if transposed { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) })
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
    Ok(MatchResult { pairs, total })
}
