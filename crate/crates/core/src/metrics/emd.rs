use super::kdtree::dist2;
use super::MetricsError;
use crate::geometry::PointCloud;

/// Largest cloud size solved exactly; larger inputs use the auction method.
pub const EXACT_EMD_LIMIT: usize = 512;

/// `assignment[i]` is the column matched to row `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub assignment: Vec<usize>,
    pub cost: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EmdMethod {
    Exact,
    /// Result is within `n * epsilon` of the optimum.
    Auction { epsilon: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmdResult {
    pub value: f64,
    pub method: EmdMethod,
    pub assignment: Vec<usize>,
}

/// Minimum-cost perfect matching of a square cost matrix (row-major `n x n`).
///
/// Shortest augmenting paths with row/column potentials, O(n^3).
pub fn hungarian(cost: &[f64], n: usize) -> Assignment {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Assignment {
            assignment: Vec::new(),
            cost: 0.0,
        };
    }
    let c = |i: usize, j: usize| cost[(i - 1) * n + (j - 1)];
    // 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0, j) - u[i0] - v[j];
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
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    // sum in row order so the value does not depend on solver internals
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Assignment {
        assignment,
        cost: total,
    }
}

/// Forward auction with epsilon scaling for a minimum-cost assignment.
/// The final cost is within `n * epsilon` of optimal.
pub fn auction_assignment(cost: &[f64], n: usize, epsilon: f64) -> Assignment {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    assert!(epsilon > 0.0, "epsilon must be positive");
    if n == 0 {
        return Assignment {
            assignment: Vec::new(),
            cost: 0.0,
        };
    }
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    let mut prices = vec![0.0; n];
    let mut eps = (max_cost / 4.0).max(epsilon);
    let mut owner = vec![usize::MAX; n];
    let mut assigned = vec![usize::MAX; n];
    loop {
        owner.fill(usize::MAX);
        assigned.fill(usize::MAX);
        let mut queue: std::collections::VecDeque<usize> = (0..n).collect();
        while let Some(i) = queue.pop_front() {
            // value of object j to person i is -cost - price
            let row = &cost[i * n..(i + 1) * n];
            let (mut best_j, mut best, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (j, (&c, &p)) in row.iter().zip(&prices).enumerate() {
                let val = -c - p;
                if val > best {
                    second = best;
                    best = val;
                    best_j = j;
                } else if val > second {
                    second = val;
                }
            }
            let increment = if second.is_finite() { best - second + eps } else { eps };
            prices[best_j] += increment;
            if owner[best_j] != usize::MAX {
                let prev = owner[best_j];
                assigned[prev] = usize::MAX;
                queue.push_back(prev);
            }
            owner[best_j] = i;
            assigned[i] = best_j;
        }
        if eps <= epsilon {
            break;
        }
        eps = (eps / 5.0).max(epsilon);
    }
    let total = assigned
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Assignment {
        assignment: assigned,
        cost: total,
    }
}

fn cost_matrix(a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<f64> {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| dist2(x, y).sqrt()))
        .collect()
}

pub fn emd(a: &PointCloud, b: &PointCloud) -> Result<f64, MetricsError> {
    emd_with(a.points(), b.points(), None).map(|r| r.value)
}

/// Earth mover's distance with unit masses. Exact up to
/// [`EXACT_EMD_LIMIT`] points; above that the auction method runs with
/// `epsilon` (default `1e-6 * max_cost / n`).
pub fn emd_with(
    a: &[[f64; 3]],
    b: &[[f64; 3]],
    epsilon: Option<f64>,
) -> Result<EmdResult, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::SizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty("emd needs nonempty clouds"));
    }
    let n = a.len();
    let cost = cost_matrix(a, b);
    if n <= EXACT_EMD_LIMIT && epsilon.is_none() {
        let r = hungarian(&cost, n);
        return Ok(EmdResult {
            value: r.cost,
            method: EmdMethod::Exact,
            assignment: r.assignment,
        });
    }
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    let eps = epsilon.unwrap_or(1e-6 * max_cost.max(1e-12) / n as f64);
    let r = auction_assignment(&cost, n, eps);
    Ok(EmdResult {
        value: r.cost,
        method: EmdMethod::Auction { epsilon: eps },
        assignment: r.assignment,
    })
}
