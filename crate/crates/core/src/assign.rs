//! Rectangular linear-sum assignment.
//!
//! The inner solver is the shortest-augmenting-path Hungarian method with
//! row/column potentials, O(n^2 m) for an n x m problem with n <= m. On top
//! of it, ties between optimal matchings are broken towards the
//! lexicographically smallest `row_to_col`, with "unmatched" ordered after
//! every column, so results never depend on solver internals.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Maximize,
    Minimize,
}

/// An injective partial map from rows to columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub row_to_col: Vec<Option<usize>>,
    /// Sum of the selected weights, accumulated in row order.
    pub total_weight: f64,
}

impl Assignment {
    pub fn col_to_row(&self, cols: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; cols];
        for (r, c) in self.pairs() {
            out[c] = Some(r);
        }
        out
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }

    pub fn len(&self) -> usize {
        self.pairs().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Optimal assignment covering `min(rows, cols)` pairs.
pub fn solve_assignment(weights: &Array2<f64>, objective: Objective) -> Result<Assignment> {
    let (rows, cols) = weights.dim();
    if let Some(((r, c), v)) = weights.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "assignment weight at ({r}, {c}) is not finite: {v}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            row_to_col: vec![None; rows],
            total_weight: 0.0,
        });
    }

    let cost = match objective {
        Objective::Minimize => weights.clone(),
        Objective::Maximize => weights.mapv(|w| -w),
    };
    let target = rows.min(cols);
    let all_rows: Vec<usize> = (0..rows).collect();
    let all_cols: Vec<usize> = (0..cols).collect();
    let (best, mut current) = min_cost(&cost, &all_rows, &all_cols);

    let scale = cost.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-10 * scale * target as f64;

    let mut free: BTreeSet<usize> = all_cols.iter().copied().collect();
    let mut fixed_cost = 0.0;
    let mut matched = 0usize;

    for r in 0..rows {
        let rest: Vec<usize> = (r + 1..rows).collect();
        let candidates = free.iter().copied().map(Some).chain(std::iter::once(None));
        let mut chosen = None;
        for cand in candidates {
            if cand == current[r] {
                chosen = Some(cand);
                break;
            }
            let sub_cols: Vec<usize> = free.iter().copied().filter(|&c| Some(c) != cand).collect();
            let covered = matched + cand.is_some() as usize + rest.len().min(sub_cols.len());
            if covered != target {
                continue;
            }
            let (sub_cost, sub_map) = min_cost(&cost, &rest, &sub_cols);
            let here = cand.map_or(0.0, |c| cost[[r, c]]);
            if fixed_cost + here + sub_cost <= best + tol {
                current[r] = cand;
                current[r + 1..].copy_from_slice(&sub_map);
                chosen = Some(cand);
                break;
            }
        }
        let chosen = chosen.expect("current assignment is always a feasible candidate");
        if let Some(c) = chosen {
            free.remove(&c);
            fixed_cost += cost[[r, c]];
            matched += 1;
        }
    }

    let total_weight = current
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| weights[[r, c]]))
        .sum();
    Ok(Assignment {
        row_to_col: current,
        total_weight,
    })
}

/// Minimum-cost matching of `rows` into `cols` (indices into `cost`).
/// Returns the cost and, per entry of `rows`, the matched column.
fn min_cost(cost: &Array2<f64>, rows: &[usize], cols: &[usize]) -> (f64, Vec<Option<usize>>) {
    if rows.is_empty() || cols.is_empty() {
        return (0.0, vec![None; rows.len()]);
    }
    let mut map = vec![None; rows.len()];
    if rows.len() <= cols.len() {
        let owner = hungarian(rows.len(), cols.len(), |i, j| cost[[rows[i], cols[j]]]);
        for (j, i) in owner.into_iter().enumerate() {
            if let Some(i) = i {
                map[i] = Some(cols[j]);
            }
        }
    } else {
        let owner = hungarian(cols.len(), rows.len(), |i, j| cost[[rows[j], cols[i]]]);
        for (j, i) in owner.into_iter().enumerate() {
            if let Some(i) = i {
                map[j] = Some(cols[i]);
            }
        }
    }
    let total = rows
        .iter()
        .zip(&map)
        .filter_map(|(&r, c)| c.map(|c| cost[[r, c]]))
        .sum();
    (total, map)
}

/// Classic potentials-based Hungarian method for `n <= m`.
/// Returns, for each column, the row assigned to it.
fn hungarian(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    // 1-based internally; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
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
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    (1..=m).map(|j| (p[j] != 0).then(|| p[j] - 1)).collect()
}
