//! Minimum-cost assignment (Kuhn-Munkres with potentials) and one-to-one
//! event matching built on it.

use crate::gating::EventInterval;

/// Solves the rectangular assignment problem for `cost` (`rows <= cols`),
/// returning the column assigned to each row.
///
/// This is the shortest-augmenting-path form of the Hungarian method,
/// `O(rows^2 * cols)`.
pub fn assign_min_cost(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "assignment needs rows <= cols");
    assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");

    // 1-based potentials and matching; column 0 is a virtual start.
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0;
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
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
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
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if row_of[j] != 0 {
            out[row_of[j] - 1] = j - 1;
        }
    }
    out
}

/// A one-to-one matching between ground-truth and detected events.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    /// `(gt index, det index)`, sorted by gt index.
    pub pairs: Vec<(usize, usize)>,
    pub total_overlap: u64,
}

impl Matching {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Matches events one-to-one. A pair is eligible when the two intervals
/// share at least `min_overlap` frames (and at least one). Among
/// maximum-cardinality matchings, the one with the largest total overlap is
/// returned.
pub fn hungarian_match(gt: &[EventInterval], det: &[EventInterval], min_overlap: u64) -> Matching {
    if gt.is_empty() || det.is_empty() {
        return Matching::default();
    }
    let min_overlap = min_overlap.max(1);
    let overlap = |i: usize, j: usize| {
        let o = gt[i].overlap(&det[j]);
        if o >= min_overlap {
            o
        } else {
            0
        }
    };
    let eligible_sum: u64 = (0..gt.len())
        .flat_map(|i| (0..det.len()).map(move |j| (i, j)))
        .map(|(i, j)| overlap(i, j))
        .sum();
    // Each matched pair is worth more than all overlap combined, so
    // cardinality dominates and overlap breaks ties.
    let bonus = eligible_sum as i64 + 1;
    let pair_cost = |i: usize, j: usize| match overlap(i, j) {
        0 => 0,
        o => -(bonus + o as i64),
    };

    let transpose = gt.len() > det.len();
    let (rows, cols) = if transpose {
        (det.len(), gt.len())
    } else {
        (gt.len(), det.len())
    };
    let cost: Vec<Vec<i64>> = (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| if transpose { pair_cost(c, r) } else { pair_cost(r, c) })
                .collect()
        })
        .collect();
    let assignment = assign_min_cost(&cost);

    let mut pairs: Vec<(usize, usize)> = assignment
        .into_iter()
        .enumerate()
        .map(|(r, c)| if transpose { (c, r) } else { (r, c) })
        .filter(|&(i, j)| overlap(i, j) > 0)
        .collect();
    pairs.sort_unstable();
    let total_overlap = pairs.iter().map(|&(i, j)| overlap(i, j)).sum();
    Matching {
        pairs,
        total_overlap,
    }
}
