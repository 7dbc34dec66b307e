//! SVG plots of an element field over `[-1, 1]^2` with contour polylines.
//!
//! Triangles are drawn as `<polygon>`, the frame as `<rect>`/`<line>`, and
//! every contour polyline as exactly one `<path>`.

use std::fmt::Write as _;

use crate::analysis::Polyline;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;

fn to_px(p: [f64; 2]) -> (f64, f64) {
    let s = (SIZE - 2.0 * MARGIN) / 2.0;
    (MARGIN + (p[0] + 1.0) * s, MARGIN + (1.0 - p[1]) * s)
}

/// Diverging blue-white-red map of `t` in `[-1, 1]`.
pub fn colour(t: f64) -> (u8, u8, u8) {
    let t = if t.is_finite() { t.clamp(-1.0, 1.0) } else { 0.0 };
    let c = |x: f64| (255.0 * x).round() as u8;
    if t < 0.0 {
        (c(1.0 + t), c(1.0 + t), 255)
    } else {
        (255, c(1.0 - t), c(1.0 - t))
    }
}

pub struct SvgPlot<'a> {
    pub title: String,
    pub mesh: &'a TriMesh,
    /// Element values, coloured symmetrically on `[-range, range]`.
    pub element_values: &'a [f64],
    pub range: f64,
    pub contours: &'a [Polyline],
}

impl SvgPlot<'_> {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        );
        let _ = writeln!(s, "<title>{}</title>", escape(&self.title));
        let _ = writeln!(s, "<g>");
        let range = if self.range > 0.0 { self.range } else { 1.0 };
        for (k, tri) in self.mesh.triangles().iter().enumerate() {
            let (r, g, b) = colour(self.element_values[k] / range);
            let pts: Vec<String> = tri
                .iter()
                .map(|&v| {
                    let (x, y) = to_px(self.mesh.vertex(v));
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(s, r#"<polygon points="{}" fill="rgb({r},{g},{b})" stroke="rgb({r},{g},{b})" stroke-width="0.4"/>"#, pts.join(" "));
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, r#"<g fill="none" stroke="black" stroke-width="0.8">"#);
        for line in self.contours {
            let mut d = String::new();
            for (i, p) in line.points.iter().enumerate() {
                let (x, y) = to_px(*p);
                let _ = write!(d, "{}{x:.3},{y:.3}", if i == 0 { "M" } else { " L" });
            }
            if line.closed {
                d.push_str(" Z");
            }
            let _ = writeln!(s, r#"<path data-level="{}" d="{d}"/>"#, line.level);
        }
        let _ = writeln!(s, "</g>");
        let (x0, y0) = to_px([-1.0, 1.0]);
        let (x1, y1) = to_px([1.0, -1.0]);
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y1 - y0
        );
        for t in [-1.0, 0.0, 1.0] {
            let (tx, _) = to_px([t, -1.0]);
            let (_, ty) = to_px([-1.0, t]);
            let _ = writeln!(s, r#"<line x1="{tx}" y1="{y1}" x2="{tx}" y2="{}" stroke="black"/>"#, y1 + 5.0);
            let _ = writeln!(s, r#"<line x1="{}" y1="{ty}" x2="{x0}" y2="{ty}" stroke="black"/>"#, x0 - 5.0);
            let _ = writeln!(s, r#"<text x="{tx}" y="{}" font-size="12" text-anchor="middle">{t}</text>"#, y1 + 20.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{t}</text>"#, x0 - 8.0, ty + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, SIZE / 2.0, escape(&self.title));
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
