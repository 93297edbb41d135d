use rand::Rng;

use super::{GeometryError, Mesh, PointCloud};
use crate::rng::{stream, streams};

/// Draw `n` points uniformly over the mesh surface.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud, GeometryError> {
    sample_surface_with_faces(mesh, n, seed).map(|(pc, _)| pc)
}

/// Like [`sample_surface`], also returning the face each sample landed on.
///
/// A face is picked with probability proportional to its area, then a point
/// inside it with weights `(1 - u, u (1 - r2), u r2)` where `u = sqrt(r1)`.
pub fn sample_surface_with_faces(
    mesh: &Mesh,
    n: usize,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>), GeometryError> {
    if n == 0 {
        return Err(GeometryError::InvalidParams("sample count must be at least 1".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.faces().len());
    let mut total = 0.0;
    for f in 0..mesh.faces().len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if total <= 0.0 {
        return Err(GeometryError::Degenerate);
    }

    let mut rng = stream(seed, streams::SURFACE);
    let mut points = Vec::with_capacity(n);
    let mut faces = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        // first face whose cumulative area exceeds the target; zero-area faces
        // can never be selected
        let face = cdf.partition_point(|&c| c <= target).min(cdf.len() - 1);
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let u = r1.sqrt();
        let w = [1.0 - u, u * (1.0 - r2), u * r2];
        let [a, b, c] = mesh.triangle(face);
        points.push(std::array::from_fn(|k| w[0] * a[k] + w[1] * b[k] + w[2] * c[k]));
        faces.push(face);
    }
    Ok((PointCloud::new(points)?, faces))
}
