//! Minimum-cost bipartite assignment between predictions and ground truth.
//!
//! Realizes the matched / unmatched indicator used by the tandem losses: one
//! shared matching is computed on the fused detections and reused for both
//! heads. The solver is the classic potential-based shortest augmenting path
//! algorithm (O(n^2 m) for n ground truths over m queries) and is checked
//! against exhaustive permutation enumeration in the test suite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::giou;
use crate::model::Detection;
use crate::world::GtObject;

/// Bipartite prediction-to-ground-truth mapping.
///
/// `pairs` is injective in both coordinates; together with
/// `unmatched_queries` it covers all queries exactly once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchAssignment {
    /// `(query_index, gt_index)` pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_queries: Vec<usize>,
}

impl MatchAssignment {
    pub fn matched_query_of_gt(&self, gt: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(_, g)| g == gt).map(|&(q, _)| q)
    }

    pub fn gt_of_query(&self, query: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(q, _)| q == query).map(|&(_, g)| g)
    }
}

/// Pairwise matching cost weights (shared with the base loss weights).
#[derive(Debug, Clone, Copy)]
pub struct CostWeights {
    pub w_cls: f64,
    pub w_l1: f64,
    pub w_giou: f64,
}

/// Builds the cost matrix `cost[g][q]` for ground truth g against query q:
/// `w_cls * (1 - prob_q[class_g]) + w_l1 * L1(box_q, box_g) + w_giou * (1 - GIoU)`.
pub fn match_costs(detections: &[Detection], gt: &[GtObject], w: &CostWeights) -> Vec<Vec<f64>> {
    gt.iter()
        .map(|g| {
            detections
                .iter()
                .map(|d| {
                    w.w_cls * (1.0 - d.class_probs[g.class_id])
                        + w.w_l1 * d.bbox.l1_distance(&g.bbox)
                        + w.w_giou * (1.0 - giou(&d.bbox, &g.bbox))
                })
                .collect()
        })
        .collect()
}

/// Minimum-cost assignment of every row (ground truth) to a distinct column
/// (query). Requires `rows <= cols`. Returns `assigned[row] = col`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) {
        return Err(Error::Shape("ragged cost matrix".into()));
    }
    if n > m {
        return Err(Error::Config(format!(
            "more ground truths ({n}) than queries ({m})"
        )));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Data("non-finite matching cost".into()));
    }

    // 1-indexed potentials; p[j] = row assigned to column j.
    let inf = f64::INFINITY;
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; m + 1];
    let mut p = vec![0_usize; m + 1];
    let mut way = vec![0_usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0_usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0_usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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

    let mut assigned = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] > 0 {
            assigned[p[j] - 1] = j - 1;
        }
    }
    debug_assert!(assigned.iter().all(|&c| c != usize::MAX));
    Ok(assigned)
}

/// Matches fused detections against ground truth, minimizing the summed
/// pairwise cost. Every ground truth is matched; remaining queries are
/// reported unmatched.
pub fn hungarian_match(
    detections: &[Detection],
    gt: &[GtObject],
    weights: &CostWeights,
) -> Result<MatchAssignment> {
    if gt.len() > detections.len() {
        return Err(Error::Config(format!(
            "more ground truths ({}) than queries ({})",
            gt.len(),
            detections.len()
        )));
    }
    let cost = match_costs(detections, gt, weights);
    let assigned = min_cost_assignment(&cost)?;
    let mut pairs: Vec<(usize, usize)> = assigned
        .iter()
        .enumerate()
        .map(|(g, &q)| (q, g))
        .collect();
    pairs.sort_unstable();
    let matched: std::collections::HashSet<usize> = pairs.iter().map(|&(q, _)| q).collect();
    let unmatched_queries = (0..detections.len()).filter(|q| !matched.contains(q)).collect();
    Ok(MatchAssignment {
        pairs,
        unmatched_queries,
    })
}

/// Exhaustive minimum over all row-to-column injections; oracle for tests.
pub fn brute_force_assignment_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    if n == 0 {
        return 0.0;
    }
    let m = cost[0].len();
    let mut cols: Vec<usize> = (0..m).collect();
    let mut best = f64::INFINITY;
    permute_prefix(&mut cols, 0, n, &mut |prefix| {
        let total: f64 = prefix.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
        if total < best {
            best = total;
        }
    });
    best
}

fn permute_prefix(cols: &mut Vec<usize>, depth: usize, n: usize, f: &mut impl FnMut(&[usize])) {
    if depth == n {
        f(&cols[..n]);
        return;
    }
    for i in depth..cols.len() {
        cols.swap(depth, i);
        permute_prefix(cols, depth + 1, n, f);
        cols.swap(depth, i);
    }
}
