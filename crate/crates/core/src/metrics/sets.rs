use rayon::prelude::*;

use super::chamfer::{chamfer_with, ChamferMode};
use super::MetricsError;
use crate::geometry::PointCloud;

pub const DEFAULT_JSD_GRID: usize = 28;

/// `out[i][j] = CD(a[i], b[j])`. Pairs are evaluated in parallel; each entry
/// is independent, so the matrix does not depend on scheduling.
pub fn pairwise_chamfer(a: &[PointCloud], b: &[PointCloud], mode: ChamferMode) -> Vec<Vec<f64>> {
    a.par_iter()
        .map(|x| {
            b.iter()
                .map(|y| chamfer_with(x.points(), y.points(), mode).expect("nonempty clouds"))
                .collect()
        })
        .collect()
}

/// Voxel occupancy over `grid^3` cells spanning `[-1, 1]^3`, normalized to sum
/// to one. Coordinates outside the cube are clamped into the border cells.
pub fn occupancy_histogram(clouds: &[PointCloud], grid: usize) -> Vec<f64> {
    let mut counts = vec![0u64; grid * grid * grid];
    let cell = |v: f64| -> usize {
        let c = ((v + 1.0) * 0.5 * grid as f64).floor();
        c.clamp(0.0, (grid - 1) as f64) as usize
    };
    let mut total = 0u64;
    for pc in clouds {
        for p in pc.points() {
            counts[(cell(p[0]) * grid + cell(p[1])) * grid + cell(p[2])] += 1;
            total += 1;
        }
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Jensen-Shannon divergence (natural log) between the voxel occupancies of
/// two collections.
pub fn jsd(a: &[PointCloud], b: &[PointCloud], grid: usize) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty("jsd needs two nonempty sets"));
    }
    if grid < 2 {
        return Err(MetricsError::BadGrid(grid));
    }
    let p = occupancy_histogram(a, grid);
    let q = occupancy_histogram(b, grid);
    let mut kl_pm = 0.0;
    let mut kl_qm = 0.0;
    for (&pi, &qi) in p.iter().zip(&q) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            kl_pm += pi * (pi / m).ln();
        }
        if qi > 0.0 {
            kl_qm += qi * (qi / m).ln();
        }
    }
    Ok((0.5 * kl_pm + 0.5 * kl_qm).max(0.0))
}

fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v < row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of reference clouds `b` that are the nearest (by Chamfer
/// distance) neighbor of at least one cloud in `a`.
pub fn coverage(a: &[PointCloud], b: &[PointCloud], mode: ChamferMode) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty("coverage needs two nonempty sets"));
    }
    Ok(coverage_from_matrix(&pairwise_chamfer(a, b, mode), b.len()))
}

pub(crate) fn coverage_from_matrix(dist: &[Vec<f64>], n_ref: usize) -> f64 {
    let mut hit = vec![false; n_ref];
    for row in dist {
        hit[argmin(row)] = true;
    }
    hit.iter().filter(|&&h| h).count() as f64 / n_ref as f64
}

/// Mean over reference clouds `b` of the smallest Chamfer distance to any
/// cloud in `a`.
pub fn mmd(a: &[PointCloud], b: &[PointCloud], mode: ChamferMode) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty("mmd needs two nonempty sets"));
    }
    Ok(mmd_from_matrix(&pairwise_chamfer(a, b, mode), b.len()))
}

pub(crate) fn mmd_from_matrix(dist: &[Vec<f64>], n_ref: usize) -> f64 {
    let total: f64 = (0..n_ref)
        .map(|j| dist.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .sum();
    total / n_ref as f64
}
