use std::fmt::Write as _;
use std::path::Path;

use super::{GeometryError, PointCloud};

/// Parse whitespace-separated `x y z` rows. Blank lines and `#` comments are
/// skipped.
pub fn parse_xyz(text: &str) -> Result<PointCloud, GeometryError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(GeometryError::Parse {
                line: i + 1,
                msg: format!("expected 3 coordinates, found {}", toks.len()),
            });
        }
        let mut p = [0.0f64; 3];
        for (k, t) in toks.iter().enumerate() {
            p[k] = t.parse().map_err(|_| GeometryError::Parse {
                line: i + 1,
                msg: format!("cannot parse `{t}`"),
            })?;
            if !p[k].is_finite() {
                return Err(GeometryError::Parse {
                    line: i + 1,
                    msg: "non-finite coordinate".into(),
                });
            }
        }
        points.push(p);
    }
    PointCloud::new(points)
}

pub fn read_xyz(path: &Path) -> Result<PointCloud, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::io(path, e))?;
    parse_xyz(&text)
}

/// Shortest representation that parses back to the identical `f64`.
pub fn xyz_string(pc: &PointCloud) -> String {
    let mut out = String::with_capacity(pc.len() * 64);
    for p in pc.points() {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    out
}

pub fn write_xyz(pc: &PointCloud, path: &Path) -> Result<(), GeometryError> {
    std::fs::write(path, xyz_string(pc)).map_err(|e| GeometryError::io(path, e))
}

/// ASCII PLY with a single `vertex` element.
pub fn write_ply(pc: &PointCloud, path: &Path) -> Result<(), GeometryError> {
    let mut out = String::new();
    out += "ply\nformat ascii 1.0\n";
    let _ = writeln!(out, "element vertex {}", pc.len());
    out += "property float x\nproperty float y\nproperty float z\nend_header\n";
    out += &xyz_string(pc);
    std::fs::write(path, out).map_err(|e| GeometryError::io(path, e))
}
