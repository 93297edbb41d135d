use super::kdtree::{dist2, KdTree};
use super::MetricsError;
use crate::geometry::PointCloud;

/// Distance used inside the Chamfer sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ChamferMode {
    /// `||x - y||_2`
    #[default]
    L2,
    /// `||x - y||_2^2`
    Squared,
}

impl ChamferMode {
    fn apply(self, d2: f64) -> f64 {
        match self {
            ChamferMode::L2 => d2.sqrt(),
            ChamferMode::Squared => d2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChamferMode::L2 => "l2",
            ChamferMode::Squared => "squared",
        }
    }
}

const BRUTE_FORCE_LIMIT: usize = 48;

/// For every query point, the index of and squared distance to its nearest
/// reference point (lowest index on ties).
pub fn nearest_neighbors(query: &[[f64; 3]], reference: &[[f64; 3]]) -> Vec<(usize, f64)> {
    if reference.len() <= BRUTE_FORCE_LIMIT {
        query
            .iter()
            .map(|q| {
                let mut best = (0, f64::INFINITY);
                for (i, r) in reference.iter().enumerate() {
                    let d = dist2(q, r);
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                best
            })
            .collect()
    } else {
        let tree = KdTree::build(reference);
        query
            .iter()
            .map(|q| tree.nearest(q).expect("nonempty reference"))
            .collect()
    }
}

pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    chamfer_with(a.points(), b.points(), ChamferMode::L2).expect("point clouds are nonempty")
}

/// Sum of nearest-neighbor distances from `a` to `b` plus from `b` to `a`.
pub fn chamfer_with(a: &[[f64; 3]], b: &[[f64; 3]], mode: ChamferMode) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty("chamfer needs two nonempty clouds"));
    }
    let ab: f64 = nearest_neighbors(a, b).iter().map(|&(_, d)| mode.apply(d)).sum();
    let ba: f64 = nearest_neighbors(b, a).iter().map(|&(_, d)| mode.apply(d)).sum();
    Ok(ab + ba)
}

/// Chamfer value and its gradient w.r.t. every coordinate of `a`.
///
/// Under [`ChamferMode::L2`] a coincident pair contributes zero gradient.
pub fn chamfer_with_grad(
    a: &[[f64; 3]],
    b: &[[f64; 3]],
    mode: ChamferMode,
) -> Result<(f64, Vec<[f64; 3]>), MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty("chamfer needs two nonempty clouds"));
    }
    let mut grad = vec![[0.0; 3]; a.len()];
    let pair_grad = |x: &[f64; 3], y: &[f64; 3], d2: f64| -> [f64; 3] {
        match mode {
            ChamferMode::L2 => {
                if d2 == 0.0 {
                    [0.0; 3]
                } else {
                    let d = d2.sqrt();
                    std::array::from_fn(|k| (x[k] - y[k]) / d)
                }
            }
            ChamferMode::Squared => std::array::from_fn(|k| 2.0 * (x[k] - y[k])),
        }
    };
    let mut ab = 0.0;
    for (i, (j, d2)) in nearest_neighbors(a, b).into_iter().enumerate() {
        ab += mode.apply(d2);
        let g = pair_grad(&a[i], &b[j], d2);
        for k in 0..3 {
            grad[i][k] += g[k];
        }
    }
    let mut ba = 0.0;
    for (j, (i, d2)) in nearest_neighbors(b, a).into_iter().enumerate() {
        ba += mode.apply(d2);
        let g = pair_grad(&a[i], &b[j], d2);
        for k in 0..3 {
            grad[i][k] += g[k];
        }
    }
    Ok((ab + ba, grad))
}

pub fn chamfer_grad(a: &PointCloud, b: &PointCloud) -> Vec<[f64; 3]> {
    chamfer_with_grad(a.points(), b.points(), ChamferMode::L2)
        .expect("point clouds are nonempty")
        .1
}
