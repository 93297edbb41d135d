use std::path::Path;

use super::GeometryError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
}

impl MeshFormat {
    /// Guess from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "off" => Some(MeshFormat::Off),
            "obj" => Some(MeshFormat::Obj),
            _ => None,
        }
    }
}

/// Indexed triangle mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        if faces.is_empty() {
            return Err(GeometryError::EmptyMesh);
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        for (f, face) in faces.iter().enumerate() {
            if let Some(&index) = face.iter().find(|&&i| i >= vertices.len()) {
                return Err(GeometryError::BadIndex {
                    face: f,
                    index,
                    count: vertices.len(),
                });
            }
        }
        let mesh = Self { vertices, faces };
        if mesh.total_area() <= 0.0 {
            return Err(GeometryError::Degenerate);
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn triangle(&self, face: usize) -> [[f64; 3]; 3] {
        self.faces[face].map(|i| self.vertices[i])
    }

    /// Twice-area normal (unnormalized).
    pub fn face_normal(&self, face: usize) -> [f64; 3] {
        let [a, b, c] = self.triangle(face);
        cross(sub(b, a), sub(c, a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let n = self.face_normal(face);
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Append another mesh's triangles (no boolean union).
    pub fn merged(&self, other: &Mesh) -> Mesh {
        let offset = self.vertices.len();
        let mut vertices = self.vertices.clone();
        vertices.extend_from_slice(&other.vertices);
        let mut faces = self.faces.clone();
        faces.extend(other.faces.iter().map(|f| f.map(|i| i + offset)));
        Mesh { vertices, faces }
    }

    /// Area-weighted mean of the surface, i.e. the expected centroid of a
    /// uniform surface sample.
    pub fn surface_centroid(&self) -> Result<[f64; 3], GeometryError> {
        let mut acc = [0.0; 3];
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            let area = self.face_area(f);
            let [a, b, c] = self.triangle(f);
            for k in 0..3 {
                acc[k] += area * (a[k] + b[k] + c[k]) / 3.0;
            }
            total += area;
        }
        if total <= 0.0 {
            return Err(GeometryError::Degenerate);
        }
        Ok(acc.map(|v| v / total))
    }

    /// Translate the surface centroid to the origin and scale so the farthest
    /// face vertex sits on the unit sphere. Unlike normalizing a sampled
    /// cloud, this is free of sampling noise.
    pub fn normalized(&self) -> Result<Mesh, GeometryError> {
        let c = self.surface_centroid()?;
        let r = self
            .faces
            .iter()
            .flatten()
            .map(|&i| {
                let d = sub(self.vertices[i], c);
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            })
            .fold(0.0, f64::max);
        let vertices = self.vertices.iter().map(|&v| sub(v, c).map(|x| x / r)).collect();
        Ok(Mesh {
            vertices,
            faces: self.faces.clone(),
        })
    }

    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<Mesh, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::io(path, e))?;
    match format {
        MeshFormat::Off => parse_off(&text),
        MeshFormat::Obj => parse_obj(&text),
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T, GeometryError> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("cannot parse `{tok}`")))
}

fn fan(poly: &[usize]) -> impl Iterator<Item = [usize; 3]> + '_ {
    (1..poly.len() - 1).map(move |i| [poly[0], poly[i], poly[i + 1]])
}

/// Object File Format. Polygons are fan-triangulated.
pub fn parse_off(text: &str) -> Result<Mesh, GeometryError> {
    // (line number, tokens) for every non-empty line, comments stripped
    let mut lines = text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
    });

    let (ln, mut toks) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if toks[0] != "OFF" {
        // some writers glue the counts to the header: "OFF8 6 0"
        match toks[0].strip_prefix("OFF") {
            Some(rest) if !rest.is_empty() => toks[0] = rest,
            _ => return Err(parse_err(ln, "missing OFF header")),
        }
    } else {
        toks.remove(0);
    }
    let (ln, counts) = if toks.is_empty() {
        lines.next().ok_or_else(|| parse_err(ln, "missing counts line"))?
    } else {
        (ln, toks)
    };
    if counts.len() < 2 {
        return Err(parse_err(ln, "expected vertex and face counts"));
    }
    let nv: usize = parse_num(counts[0], ln)?;
    let nf: usize = parse_num(counts[1], ln)?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, toks) = lines
            .next()
            .ok_or_else(|| parse_err(ln, "unexpected end of file in vertex list"))?;
        if toks.len() < 3 {
            return Err(parse_err(ln, "vertex needs 3 coordinates"));
        }
        vertices.push([
            parse_num(toks[0], ln)?,
            parse_num(toks[1], ln)?,
            parse_num(toks[2], ln)?,
        ]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, toks) = lines
            .next()
            .ok_or_else(|| parse_err(ln, "unexpected end of file in face list"))?;
        let k: usize = parse_num(toks[0], ln)?;
        if k < 3 || toks.len() < k + 1 {
            return Err(parse_err(ln, format!("face declares {k} vertices")));
        }
        let poly = toks[1..=k]
            .iter()
            .map(|t| parse_num::<usize>(t, ln))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(&bad) = poly.iter().find(|&&i| i >= nv) {
            return Err(parse_err(ln, format!("vertex index {bad} out of range")));
        }
        faces.extend(fan(&poly));
    }
    Mesh::new(vertices, faces)
}

/// Wavefront OBJ; only `v` and `f` records are used. Indices are 1-based,
/// negative indices count back from the last vertex.
pub fn parse_obj(text: &str) -> Result<Mesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let coords: Vec<&str> = toks.collect();
                if coords.len() < 3 {
                    return Err(parse_err(ln, "vertex needs 3 coordinates"));
                }
                vertices.push([
                    parse_num(coords[0], ln)?,
                    parse_num(coords[1], ln)?,
                    parse_num(coords[2], ln)?,
                ]);
            }
            Some("f") => {
                let mut poly = Vec::new();
                for t in toks {
                    let idx: i64 = parse_num(t.split('/').next().unwrap_or(""), ln)?;
                    let resolved = match idx {
                        0 => return Err(parse_err(ln, "OBJ indices are 1-based")),
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(parse_err(ln, format!("vertex index {idx} out of range")));
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(parse_err(ln, "face needs at least 3 vertices"));
                }
                faces.extend(fan(&poly));
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}
