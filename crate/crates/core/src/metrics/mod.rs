//! Permutation-invariant distances between point clouds and set-level
//! evaluation metrics over collections of clouds.

mod chamfer;
mod emd;
mod kdtree;
mod report;
mod sets;

use thiserror::Error;

pub use chamfer::{chamfer, chamfer_grad, chamfer_with, chamfer_with_grad, nearest_neighbors, ChamferMode};
pub use emd::{auction_assignment, emd, emd_with, hungarian, Assignment, EmdMethod, EmdResult, EXACT_EMD_LIMIT};
pub use kdtree::KdTree;
pub use report::{LossStats, MetricsReport, TABLE_COLUMNS};
pub use sets::{coverage, jsd, mmd, occupancy_histogram, pairwise_chamfer, DEFAULT_JSD_GRID};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("EMD needs equal sizes, got {0} and {1}")]
    SizeMismatch(usize, usize),
    #[error("JSD grid must be at least 2, got {0}")]
    BadGrid(usize),
    #[error("malformed report: {0}")]
    BadReport(String),
}
