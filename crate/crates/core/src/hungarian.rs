//! Minimum-cost bipartite assignment (Kuhn-Munkres with potentials,
//! shortest-augmenting-path form, O(n^3)). Rectangular inputs are padded to
//! square with a constant larger than any achievable total, so real pairs are
//! never displaced by padding.

use miniseg_tensor::Tensor;

use crate::error::{Error, Result};

/// Injective pred-to-gt matching: exactly `min(N, G)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// (prediction index, ground-truth index), sorted by prediction index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_preds: Vec<usize>,
}

impl Assignment {
    pub fn gt_for_pred(&self, pred: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|(p, _)| *p == pred)
            .map(|(_, g)| *g)
    }
}

/// Solve the assignment problem on an `[N, G]` cost matrix.
pub fn hungarian(costs: &Tensor) -> Result<Assignment> {
    if costs.rank() != 2 {
        return Err(Error::Input(format!(
            "cost matrix must be rank 2, got {:?}",
            costs.shape()
        )));
    }
    if !costs.all_finite() {
        return Err(Error::Input("cost matrix contains non-finite entries".into()));
    }
    let (n, g) = (costs.shape()[0], costs.shape()[1]);
    let side = n.max(g);
    let max_abs = costs
        .data()
        .iter()
        .fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    let pad = max_abs * (n + g) as f64 + 1.0;

    let mut square = vec![pad; side * side];
    for i in 0..n {
        for j in 0..g {
            square[i * side + j] = costs.data()[i * g + j];
        }
    }

    let row_of_col = solve_square(&square, side);

    let mut pairs = Vec::with_capacity(n.min(g));
    for (col, &row) in row_of_col.iter().enumerate() {
        if row < n && col < g {
            pairs.push((row, col));
        }
    }
    pairs.sort_unstable();
    let matched: std::collections::BTreeSet<usize> = pairs.iter().map(|&(p, _)| p).collect();
    let unmatched_preds = (0..n).filter(|p| !matched.contains(p)).collect();
    Ok(Assignment {
        pairs,
        unmatched_preds,
    })
}

/// Square min-cost assignment; returns `row_of_col`.
fn solve_square(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-indexed potentials; p[j] is the row matched to column j (0 = none).
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
            for j in 0..=n {
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

    let mut row_of_col = vec![usize::MAX; n];
    for j in 1..=n {
        row_of_col[j - 1] = p[j] - 1;
    }
    row_of_col
}

/// Total cost of an assignment, summed in prediction-index order so oracle
/// comparisons see one canonical rounding.
pub fn assignment_cost(costs: &Tensor, pairs: &[(usize, usize)]) -> f64 {
    let g = costs.shape()[1];
    pairs
        .iter()
        .map(|&(i, j)| costs.data()[i * g + j])
        .sum()
}
