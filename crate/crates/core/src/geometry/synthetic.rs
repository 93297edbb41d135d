use std::f64::consts::PI;

use rand::Rng;

use super::{sample_surface, GeometryError, Mesh, PointCloud};
use crate::rng::{stream, streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Sphere,
    Box,
    Cylinder,
    Cross,
}

impl ShapeKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sphere" => Some(Self::Sphere),
            "box" => Some(Self::Box),
            "cylinder" => Some(Self::Cylinder),
            "cross" => Some(Self::Cross),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Box => "box",
            Self::Cylinder => "cylinder",
            Self::Cross => "cross",
        }
    }

    pub fn default_shape(self) -> Shape {
        match self {
            Self::Sphere => Shape::Sphere { radius: 1.0 },
            Self::Box => Shape::Box { size: [1.0, 1.0, 1.0] },
            Self::Cylinder => Shape::Cylinder {
                radius: 0.5,
                height: 1.5,
            },
            Self::Cross => Shape::Cross {
                body: [2.0, 0.3, 0.3],
                wing: [0.2, 1.6, 0.05],
            },
        }
    }

    /// Default shape with every dimension scaled by an independent factor in
    /// `[1 - amount, 1 + amount]`.
    pub fn jittered(self, rng: &mut impl Rng, amount: f64) -> Shape {
        let mut j = || 1.0 + amount * (2.0 * rng.random::<f64>() - 1.0);
        match self.default_shape() {
            Shape::Sphere { radius } => Shape::Sphere { radius: radius * j() },
            Shape::Box { size } => Shape::Box {
                size: size.map(|s| s * j()),
            },
            Shape::Cylinder { radius, height } => Shape::Cylinder {
                radius: radius * j(),
                height: height * j(),
            },
            Shape::Cross { body, wing } => Shape::Cross {
                body: body.map(|s| s * j()),
                wing: wing.map(|s| s * j()),
            },
        }
    }
}

/// Parametric stand-in shapes, all centered at the origin. `Cross` is two
/// axis-aligned boxes sharing a center (a fuselage along x and a wing along y).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Cross { body: [f64; 3], wing: [f64; 3] },
}

pub fn synthetic_shape(shape: &Shape, resolution: usize) -> Result<Mesh, GeometryError> {
    let positive = |v: f64, what: &str| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(GeometryError::InvalidParams(format!("{what} must be positive, got {v}")))
        }
    };
    match *shape {
        Shape::Sphere { radius } => {
            positive(radius, "radius")?;
            need_resolution(resolution)?;
            Ok(uv_sphere(radius, resolution))
        }
        Shape::Box { size } => {
            for s in size {
                positive(s, "box side")?;
            }
            Ok(cuboid(size))
        }
        Shape::Cylinder { radius, height } => {
            positive(radius, "radius")?;
            positive(height, "height")?;
            need_resolution(resolution)?;
            Ok(cylinder(radius, height, resolution))
        }
        Shape::Cross { body, wing } => {
            for s in body.iter().chain(&wing) {
                positive(*s, "cross extent")?;
            }
            Ok(cuboid(body).merged(&cuboid(wing)))
        }
    }
}

/// Tessellation used for curved synthetic shapes in datasets.
pub const DATASET_RESOLUTION: usize = 48;

/// Relative per-dimension jitter of dataset shapes.
pub const DATASET_JITTER: f64 = 0.1;

/// `n_shapes` clouds of `kind`, each sampled from an independently jittered
/// shape after [`Mesh::normalized`]. Shape parameters come from the `JITTER`
/// stream of `seed`, and each shape's surface draws use a seed taken from
/// that stream too.
pub fn synthetic_dataset(
    kind: ShapeKind,
    n_shapes: usize,
    n_points: usize,
    seed: u64,
) -> Result<Vec<PointCloud>, GeometryError> {
    let mut rng = stream(seed, streams::JITTER);
    (0..n_shapes)
        .map(|_| {
            let shape = kind.jittered(&mut rng, DATASET_JITTER);
            let surface_seed: u64 = rng.random();
            let mesh = synthetic_shape(&shape, DATASET_RESOLUTION)?;
            sample_surface(&mesh.normalized()?, n_points, surface_seed)
        })
        .collect()
}

fn need_resolution(res: usize) -> Result<(), GeometryError> {
    if res < 3 {
        Err(GeometryError::InvalidParams(format!("resolution must be at least 3, got {res}")))
    } else {
        Ok(())
    }
}

fn cuboid(size: [f64; 3]) -> Mesh {
    let h = size.map(|s| 0.5 * s);
    let vertices: Vec<[f64; 3]> = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { -h[0] } else { h[0] },
                if i & 2 == 0 { -h[1] } else { h[1] },
                if i & 4 == 0 { -h[2] } else { h[2] },
            ]
        })
        .collect();
    // outward-facing quads
    let quads = [
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    Mesh::new(vertices, faces).expect("valid cuboid")
}

fn uv_sphere(r: f64, res: usize) -> Mesh {
    let stacks = res;
    let slices = 2 * res;
    let mut vertices = vec![[0.0, 0.0, r]];
    for i in 1..stacks {
        let theta = PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let phi = 2.0 * PI * j as f64 / slices as f64;
            vertices.push([
                r * theta.sin() * phi.cos(),
                r * theta.sin() * phi.sin(),
                r * theta.cos(),
            ]);
        }
    }
    vertices.push([0.0, 0.0, -r]);
    let south = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + j % slices;
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(1, j), ring(1, j + 1)]);
        faces.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    Mesh::new(vertices, faces).expect("valid sphere")
}

fn cylinder(r: f64, height: f64, res: usize) -> Mesh {
    let hz = 0.5 * height;
    let mut vertices = Vec::with_capacity(2 * res + 2);
    for z in [-hz, hz] {
        for j in 0..res {
            let phi = 2.0 * PI * j as f64 / res as f64;
            vertices.push([r * phi.cos(), r * phi.sin(), z]);
        }
    }
    vertices.push([0.0, 0.0, -hz]);
    vertices.push([0.0, 0.0, hz]);
    let (bottom, top) = (2 * res, 2 * res + 1);
    let mut faces = Vec::new();
    for j in 0..res {
        let k = (j + 1) % res;
        faces.push([j, k, res + k]);
        faces.push([j, res + k, res + j]);
        faces.push([bottom, k, j]);
        faces.push([top, res + j, res + k]);
    }
    Mesh::new(vertices, faces).expect("valid cylinder")
}
