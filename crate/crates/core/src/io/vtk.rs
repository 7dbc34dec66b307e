//! Legacy ASCII VTK unstructured grids of triangles (cell type 5).

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const TRIANGLE: u8 = 5;

/// A named scalar array attached to points or cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalars {
    pub name: String,
    pub values: Vec<f64>,
}

impl Scalars {
    pub fn new(name: &str, values: Vec<f64>) -> Self {
        Scalars { name: name.to_string(), values }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VtkGrid {
    pub title: String,
    pub points: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
    pub point_data: Vec<Scalars>,
    pub cell_data: Vec<Scalars>,
}

fn num(x: f64) -> String {
    // VTK readers reject inf/nan tokens in ASCII mode
    if x.is_finite() { format!("{x:?}") } else { "0.0".into() }
}

impl VtkGrid {
    pub fn to_ascii(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# vtk DataFile Version 3.0");
        let _ = writeln!(s, "{}", self.title.replace('\n', " "));
        let _ = writeln!(s, "ASCII");
        let _ = writeln!(s, "DATASET UNSTRUCTURED_GRID");
        let _ = writeln!(s, "POINTS {} double", self.points.len());
        for p in &self.points {
            let _ = writeln!(s, "{} {} {}", num(p[0]), num(p[1]), num(p[2]));
        }
        let _ = writeln!(s, "CELLS {} {}", self.triangles.len(), 4 * self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "CELL_TYPES {}", self.triangles.len());
        for _ in &self.triangles {
            let _ = writeln!(s, "{TRIANGLE}");
        }
        let section = |s: &mut String, header: &str, count: usize, arrays: &[Scalars]| {
            if arrays.is_empty() {
                return;
            }
            let _ = writeln!(s, "{header} {count}");
            for a in arrays {
                let _ = writeln!(s, "SCALARS {} double 1", a.name.replace(char::is_whitespace, "_"));
                let _ = writeln!(s, "LOOKUP_TABLE default");
                for v in &a.values {
                    let _ = writeln!(s, "{}", num(*v));
                }
            }
        };
        section(&mut s, "POINT_DATA", self.points.len(), &self.point_data);
        section(&mut s, "CELL_DATA", self.triangles.len(), &self.cell_data);
        s
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        for a in self.point_data.iter().filter(|a| a.values.len() != self.points.len()) {
            return Err(Error::invalid(format!("point array {} has the wrong length", a.name)));
        }
        for a in self.cell_data.iter().filter(|a| a.values.len() != self.triangles.len()) {
            return Err(Error::invalid(format!("cell array {} has the wrong length", a.name)));
        }
        std::fs::write(path, self.to_ascii()).map_err(|e| Error::io(path, e))
    }

    /// Strict reader for the subset written by [`VtkGrid::to_ascii`].
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |d: String| Error::format("vtk", d);
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("unexpected end of file, expected {what}")));
        if next("version line")? != "# vtk DataFile Version 3.0" {
            return Err(bad("bad version line".into()));
        }
        let title = next("title")?.to_string();
        if next("ASCII")? != "ASCII" || next("DATASET")? != "DATASET UNSTRUCTURED_GRID" {
            return Err(bad("expected ASCII UNSTRUCTURED_GRID".into()));
        }
        let count = |line: &str, key: &str, extra: Option<&str>| -> Result<usize> {
            let tok: Vec<&str> = line.split_whitespace().collect();
            let ok = tok.first() == Some(&key) && tok.len() == 2 + usize::from(extra.is_some()) && extra.is_none_or(|e| tok.get(2) == Some(&e));
            if !ok {
                return Err(bad(format!("expected {key} header, found {line:?}")));
            }
            tok[1].parse().map_err(|_| bad(format!("bad count in {line:?}")))
        };
        let floats = |line: &str, n: usize| -> Result<Vec<f64>> {
            let v: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let v = v.map_err(|_| bad(format!("bad numbers {line:?}")))?;
            if v.len() != n {
                return Err(bad(format!("expected {n} numbers in {line:?}")));
            }
            Ok(v)
        };
        let np = count(next("POINTS")?, "POINTS", Some("double"))?;
        let mut points = Vec::with_capacity(np);
        for _ in 0..np {
            let v = floats(next("point")?, 3)?;
            points.push([v[0], v[1], v[2]]);
        }
        let cells_line = next("CELLS")?;
        let tok: Vec<&str> = cells_line.split_whitespace().collect();
        if tok.len() != 3 || tok[0] != "CELLS" {
            return Err(bad(format!("expected CELLS header, found {cells_line:?}")));
        }
        let nc: usize = tok[1].parse().map_err(|_| bad("bad cell count".into()))?;
        let size: usize = tok[2].parse().map_err(|_| bad("bad cell list size".into()))?;
        if size != 4 * nc {
            return Err(bad("cell list size must be 4 per triangle".into()));
        }
        let mut triangles = Vec::with_capacity(nc);
        for _ in 0..nc {
            let v: Vec<usize> = next("cell")?.split_whitespace().map(|t| t.parse().map_err(|_| bad("bad index".into()))).collect::<Result<_>>()?;
            if v.len() != 4 || v[0] != 3 || v[1..].iter().any(|&i| i >= np) {
                return Err(bad(format!("bad triangle {v:?}")));
            }
            triangles.push([v[1], v[2], v[3]]);
        }
        if count(next("CELL_TYPES")?, "CELL_TYPES", None)? != nc {
            return Err(bad("CELL_TYPES count mismatch".into()));
        }
        for _ in 0..nc {
            if next("cell type")?.trim() != TRIANGLE.to_string() {
                return Err(bad("only triangles are supported".into()));
            }
        }
        let mut grid = VtkGrid { title, points, triangles, point_data: Vec::new(), cell_data: Vec::new() };
        let mut current: Option<(bool, usize)> = None;
        while let Some(line) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            if line.starts_with("POINT_DATA") {
                current = Some((true, count(line, "POINT_DATA", None)?));
                if current.unwrap().1 != np {
                    return Err(bad("POINT_DATA count mismatch".into()));
                }
                continue;
            }
            if line.starts_with("CELL_DATA") {
                current = Some((false, count(line, "CELL_DATA", None)?));
                if current.unwrap().1 != nc {
                    return Err(bad("CELL_DATA count mismatch".into()));
                }
                continue;
            }
            let (on_points, n) = current.ok_or_else(|| bad(format!("data outside a section: {line:?}")))?;
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 4 || tok[0] != "SCALARS" || tok[2] != "double" || tok[3] != "1" {
                return Err(bad(format!("expected SCALARS header, found {line:?}")));
            }
            if lines.next() != Some("LOOKUP_TABLE default") {
                return Err(bad("missing LOOKUP_TABLE".into()));
            }
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(floats(lines.next().ok_or_else(|| bad("truncated scalars".into()))?, 1)?[0]);
            }
            let s = Scalars::new(tok[1], values);
            if on_points { grid.point_data.push(s) } else { grid.cell_data.push(s) }
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let grid = VtkGrid {
            title: "unit".into(),
            points: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.5], [0.0, 1.0, -0.25]],
            triangles: vec![[0, 1, 2]],
            point_data: vec![Scalars::new("u1", vec![0.1, 0.2, 1.0 / 3.0])],
            cell_data: vec![Scalars::new("det", vec![-0.75])],
        };
        let text = grid.to_ascii();
        assert!(text.contains("CELL_TYPES 1\n5\n"));
        assert_eq!(VtkGrid::parse(&text).unwrap(), grid);
        assert!(VtkGrid::parse(&text.replace("CELLS 1 4", "CELLS 1 5")).is_err());
        assert!(VtkGrid::parse(&text.replace("POINT_DATA 3", "POINT_DATA 2")).is_err());
    }
}
