use std::cmp::Ordering;

use super::GeometryError;
use crate::numeric::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Axis3 {
    #[default]
    X,
    Y,
    Z,
}

impl Axis3 {
    pub fn index(self) -> usize {
        match self {
            Axis3::X => 0,
            Axis3::Y => 1,
            Axis3::Z => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis3::X => "x",
            Axis3::Y => "y",
            Axis3::Z => "z",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Some(Axis3::X),
            "y" => Some(Axis3::Y),
            "z" => Some(Axis3::Z),
            _ => None,
        }
    }
}

/// An unordered set of 3-D surface samples stored as rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), 3, self.points.iter().flatten().copied().collect())
            .expect("n x 3")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, GeometryError> {
        if !t.len().is_multiple_of(3) {
            return Err(GeometryError::InvalidParams(format!(
                "tensor with {} values is not a list of 3-D points",
                t.len()
            )));
        }
        Self::from_flat(t.data())
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self, GeometryError> {
        Self::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    pub fn max_radius(&self) -> f64 {
        self.points
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Translate to zero centroid and scale so the farthest point sits on the
    /// unit sphere.
    pub fn normalize(&self) -> Result<Self, GeometryError> {
        let c = self.centroid();
        let centered: Vec<[f64; 3]> = self
            .points
            .iter()
            .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
            .collect();
        let r = centered
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max);
        if r == 0.0 {
            return Err(GeometryError::ZeroExtent);
        }
        Self::new(centered.into_iter().map(|p| p.map(|v| v / r)).collect())
    }

    /// Stable sort by the chosen coordinate, ties broken by the following
    /// axes in cyclic order (X: y then z; Y: z then x; Z: x then y).
    pub fn sort_along_axis(&self, axis: Axis3) -> Self {
        let order = self.sort_order(axis);
        Self {
            points: order.iter().map(|&i| self.points[i]).collect(),
        }
    }

    /// Permutation that sorts the cloud along `axis`.
    pub fn sort_order(&self, axis: Axis3) -> Vec<usize> {
        let a = axis.index();
        let keys = [a, (a + 1) % 3, (a + 2) % 3];
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&i, &j| compare_points(&self.points[i], &self.points[j], &keys));
        idx
    }

    pub fn is_sorted_along(&self, axis: Axis3) -> bool {
        let a = axis.index();
        let keys = [a, (a + 1) % 3, (a + 2) % 3];
        self.points
            .windows(2)
            .all(|w| compare_points(&w[0], &w[1], &keys) != Ordering::Greater)
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            points: order.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn translated(&self, by: [f64; 3]) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + by[0], p[1] + by[1], p[2] + by[2]])
                .collect(),
        }
    }

    /// Contiguous sub-range of rows.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            points: self.points[range].to_vec(),
        }
    }

    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}

fn compare_points(p: &[f64; 3], q: &[f64; 3], keys: &[usize; 3]) -> Ordering {
    keys.iter()
        .map(|&k| p[k].total_cmp(&q[k]))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}
