//! Orthographic SVG scatter plots of point clouds.

use std::fmt::Write as _;

use pointgen::geometry::PointCloud;

/// Half-width of the square viewport in cloud coordinates.
pub const VIEWPORT: f64 = 1.1;
/// Side of one panel in SVG user units.
pub const PANEL: f64 = 240.0;
const LABEL_HEIGHT: f64 = 20.0;
const MARKER_RADIUS: f64 = 1.2;

/// Projection planes, as `(name, horizontal axis, vertical axis)`.
pub const PLANES: [(&str, usize, usize); 3] = [("XY", 0, 1), ("XZ", 0, 2), ("YZ", 1, 2)];

/// Panel-local position of `(u, v)`; `v` grows upwards.
pub fn to_panel(u: f64, v: f64) -> (f64, f64) {
    let scale = PANEL / (2.0 * VIEWPORT);
    ((u + VIEWPORT) * scale, (VIEWPORT - v) * scale)
}

/// Three side-by-side panels (XY, XZ, YZ) over the fixed viewport
/// `[-1.1, 1.1]²`. Points outside the viewport are left out.
pub fn render_svg(cloud: &PointCloud, title: &str) -> String {
    let width = 3.0 * PANEL;
    let height = PANEL + LABEL_HEIGHT;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    for (i, (name, a, b)) in PLANES.iter().enumerate() {
        let x0 = i as f64 * PANEL;
        let _ = writeln!(out, r#"<g class="panel" id="{name}" transform="translate({x0},{LABEL_HEIGHT})">"#);
        let _ = writeln!(
            out,
            r##"<rect x="0" y="0" width="{PANEL}" height="{PANEL}" fill="#ffffff" stroke="#888888"/>"##
        );
        let _ = writeln!(out, r#"<text x="4" y="-6" font-size="12">{name}</text>"#);
        for p in cloud.points() {
            let (u, v) = (p[*a], p[*b]);
            if u.abs() > VIEWPORT || v.abs() > VIEWPORT {
                continue;
            }
            let (x, y) = to_panel(u, v);
            let _ = writeln!(out, r##"<circle cx="{x:.3}" cy="{y:.3}" r="{MARKER_RADIUS}" fill="#1f4e79"/>"##);
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
