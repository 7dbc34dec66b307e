//! Triangulations of the square (-1, 1)^2.
//!
//! Meshes are immutable after construction. The structured family splits an
//! `m x m` grid of squares along the bottom-left to top-right diagonal; the
//! general constructor accepts any conforming triangle soup that tiles a
//! subset of the square and is mostly used by tests.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Tolerance used to decide whether a vertex sits on the boundary of the square.
pub const BOUNDARY_TOL: f64 = 1e-12;

pub type Point = [f64; 2];

/// Area and constant hat-function gradients of one P1 element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    pub grad_basis: [[f64; 2]; 3],
}

impl ElementGeometry {
    /// Geometry of the triangle with the given counterclockwise corners.
    ///
    /// Fails with [`Error::MeshCorruption`] (element index `usize::MAX`) when the
    /// signed area is not positive.
    pub fn from_points(p: [Point; 3]) -> Result<Self> {
        Self::for_element(p, usize::MAX)
    }

    fn for_element(p: [Point; 3], element: usize) -> Result<Self> {
        let [p0, p1, p2] = p;
        let twice_area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let area = 0.5 * twice_area;
        if !(area > 0.0) {
            return Err(Error::MeshCorruption { element, area });
        }
        let inv = 1.0 / twice_area;
        let grad_basis = [
            [(p1[1] - p2[1]) * inv, (p2[0] - p1[0]) * inv],
            [(p2[1] - p0[1]) * inv, (p0[0] - p2[0]) * inv],
            [(p0[1] - p1[1]) * inv, (p1[0] - p0[0]) * inv],
        ];
        Ok(ElementGeometry { area, grad_basis })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    boundary_vertices: Vec<usize>,
    geometry: Vec<ElementGeometry>,
    diameters: Vec<f64>,
    h_max: f64,
    h_min: f64,
    mu: f64,
    structured: Option<usize>,
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn on_square_boundary(p: Point) -> bool {
    (p[0].abs().max(p[1].abs()) - 1.0).abs() <= BOUNDARY_TOL
}

impl TriMesh {
    /// Builds a mesh from raw vertices and counterclockwise triangles.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        Self::build(vertices, triangles, None)
    }

    fn build(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, structured: Option<usize>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::invalid("mesh has no triangles"));
        }
        let nv = vertices.len();
        let mut geometry = Vec::with_capacity(triangles.len());
        let mut diameters = Vec::with_capacity(triangles.len());
        let mut mu = f64::INFINITY;
        for (k, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::invalid(format!("triangle {k} references a missing vertex")));
            }
            let p = tri.map(|v| vertices[v]);
            let geo = ElementGeometry::for_element(p, k)?;
            let edges = [dist(p[0], p[1]), dist(p[1], p[2]), dist(p[2], p[0])];
            let h = edges.iter().cloned().fold(0.0, f64::max);
            // inradius = 2|K| / perimeter
            let rho = 2.0 * geo.area / edges.iter().sum::<f64>();
            mu = mu.min(rho / h);
            geometry.push(geo);
            diameters.push(h);
        }
        let h_max = diameters.iter().cloned().fold(0.0, f64::max);
        let h_min = diameters.iter().cloned().fold(f64::INFINITY, f64::min);
        let boundary: Vec<bool> = vertices.iter().map(|&p| on_square_boundary(p)).collect();
        let boundary_vertices = (0..nv).filter(|&v| boundary[v]).collect();
        Ok(TriMesh {
            vertices,
            triangles,
            boundary,
            boundary_vertices,
            geometry,
            diameters,
            h_max,
            h_min,
            mu,
            structured,
        })
    }

    /// Structured mesh of `2 m^2` right triangles on (-1, 1)^2.
    ///
    /// Vertex `(i, j)` sits at `(-1 + 2i/m, -1 + 2j/m)` with index `j (m + 1) + i`;
    /// grid cell `(i, j)` owns elements `2 (j m + i)` (below the diagonal) and
    /// `2 (j m + i) + 1` (above it).
    pub fn structured(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("mesh resolution m must be at least 1"));
        }
        let coord = |i: usize| (2.0 * i as f64 - m as f64) / m as f64;
        let mut vertices = Vec::with_capacity((m + 1) * (m + 1));
        for j in 0..=m {
            for i in 0..=m {
                vertices.push([coord(i), coord(j)]);
            }
        }
        let idx = |i: usize, j: usize| j * (m + 1) + i;
        let mut triangles = Vec::with_capacity(2 * m * m);
        for j in 0..m {
            for i in 0..m {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        Self::build(vertices, triangles, Some(m))
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> Point {
        self.vertices[v]
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, k: usize) -> [usize; 3] {
        self.triangles[k]
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    /// Sorted indices of the vertices on the boundary of the square.
    pub fn boundary_vertices(&self) -> &[usize] {
        &self.boundary_vertices
    }

    pub fn geometry(&self, k: usize) -> &ElementGeometry {
        &self.geometry[k]
    }

    /// Area and basis gradients of element `k`.
    pub fn element_geometry(&self, k: usize) -> Result<ElementGeometry> {
        let tri = self
            .triangles
            .get(k)
            .ok_or_else(|| Error::invalid(format!("element index {k} out of range")))?;
        ElementGeometry::for_element(tri.map(|v| self.vertices[v]), k)
    }

    pub fn diameter(&self, k: usize) -> f64 {
        self.diameters[k]
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    /// Shape regularity constant `min_K rho_K / h_K`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Grid resolution for structured meshes.
    pub fn resolution(&self) -> Option<usize> {
        self.structured
    }

    pub fn total_area(&self) -> f64 {
        self.geometry.iter().map(|g| g.area).sum()
    }

    pub fn barycenter(&self, k: usize) -> Point {
        let [a, b, c] = self.triangles[k].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Number of triangles sharing each undirected edge, keyed by `(min, max)` vertex pair.
    pub fn edge_multiplicity(&self) -> HashMap<(usize, usize), usize> {
        let mut count = HashMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        count
    }

    /// Elements adjacent to each vertex.
    pub fn vertex_elements(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (k, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                adj[v].push(k);
            }
        }
        adj
    }

    /// Sorted vertex neighbours (including the vertex itself).
    pub fn vertex_neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = (0..self.vertices.len()).map(|v| vec![v]).collect();
        for tri in &self.triangles {
            for &a in tri {
                for &b in tri {
                    adj[a].push(b);
                }
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Checks the conformity conditions: each interior edge is shared by two
    /// triangles, each boundary edge by one, and triangles do not overlap
    /// (total area equals the area of the square).
    pub fn check_admissible(&self) -> Result<()> {
        for ((a, b), n) in self.edge_multiplicity() {
            let on_boundary = self.boundary[a] && self.boundary[b] && {
                let (pa, pb) = (self.vertices[a], self.vertices[b]);
                let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
                on_square_boundary(mid)
            };
            let expected = if on_boundary { 1 } else { 2 };
            if n != expected {
                return Err(Error::invalid(format!(
                    "edge ({a}, {b}) shared by {n} triangles, expected {expected}"
                )));
            }
        }
        let area = self.total_area();
        if (area - 4.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("total area {area} differs from 4")));
        }
        Ok(())
    }

    /// Locates an element containing `p`, together with its barycentric coordinates.
    pub fn locate(&self, p: Point) -> Result<(usize, [f64; 3])> {
        let tol = BOUNDARY_TOL;
        if !(p[0].abs() <= 1.0 + tol && p[1].abs() <= 1.0 + tol) {
            return Err(Error::OutOfDomain(p[0], p[1]));
        }
        let k = match self.structured {
            Some(m) => {
                let cell = |t: f64| (((t + 1.0) * 0.5 * m as f64).floor().max(0.0) as usize).min(m - 1);
                let (i, j) = (cell(p[0]), cell(p[1]));
                let base = 2 * (j * m + i);
                let lower = self.barycentric(base, p);
                if lower.iter().all(|&l| l >= -1e-12) {
                    return Ok((base, lower));
                }
                base + 1
            }
            None => {
                let mut best = (usize::MAX, f64::NEG_INFINITY);
                for k in 0..self.triangles.len() {
                    let lam = self.barycentric(k, p);
                    let worst = lam.iter().cloned().fold(f64::INFINITY, f64::min);
                    if worst > best.1 {
                        best = (k, worst);
                    }
                    if worst >= 0.0 {
                        break;
                    }
                }
                if best.1 < -1e-9 {
                    return Err(Error::OutOfDomain(p[0], p[1]));
                }
                best.0
            }
        };
        Ok((k, self.barycentric(k, p)))
    }

    /// Barycentric coordinates of `p` with respect to element `k`.
    pub fn barycentric(&self, k: usize, p: Point) -> [f64; 3] {
        let tri = self.triangles[k];
        let geo = &self.geometry[k];
        let mut lam = [0.0; 3];
        for (a, l) in lam.iter_mut().enumerate() {
            let v = self.vertices[tri[a]];
            // lambda_a is affine, equal to 1 at its own vertex
            let g = geo.grad_basis[a];
            *l = 1.0 + g[0] * (p[0] - v[0]) + g[1] * (p[1] - v[1]);
        }
        lam
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_mesh() {
        let mesh = TriMesh::structured(1).unwrap();
        assert_eq!(mesh.num_vertices(), 4);
        assert_eq!(mesh.num_elements(), 2);
        assert!((mesh.total_area() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn counts_for_m2() {
        let mesh = TriMesh::structured(2).unwrap();
        assert_eq!(mesh.num_vertices(), 9);
        assert_eq!(mesh.num_elements(), 8);
        assert_eq!(mesh.boundary_vertices().len(), 8);
        assert!(!mesh.is_boundary(4));
    }

    #[test]
    fn zero_resolution_rejected() {
        assert!(matches!(TriMesh::structured(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn shape_regularity_is_resolution_independent() {
        // right isosceles triangle with legs L: rho = L (2 - sqrt2) / 2, h = L sqrt2
        let expected = (2.0 - 2f64.sqrt()) / 2.0 / 2f64.sqrt();
        let m2 = TriMesh::structured(2).unwrap();
        let m64 = TriMesh::structured(64).unwrap();
        assert!((m2.mu() - expected).abs() < 1e-14);
        assert!((m64.mu() - m2.mu()).abs() < 1e-14);
        assert!((m64.h_max() - 2.0 * 2f64.sqrt() / 64.0).abs() < 1e-15);
        assert!((m64.h_max() - 0.04419).abs() < 1e-5);
        // quasiuniform: all diameters coincide
        assert!((m64.h_max() / m64.h_min() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reference_element() {
        let geo = ElementGeometry::from_points([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(geo.area, 0.5);
        assert_eq!(geo.grad_basis, [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn clockwise_element_is_corrupt() {
        let err = ElementGeometry::from_points([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::MeshCorruption { .. }));
        let err = TriMesh::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], vec![[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, Error::MeshCorruption { element: 0, .. }));
    }

    #[test]
    fn element_invariants() {
        for m in [1, 3, 8, 17] {
            let mesh = TriMesh::structured(m).unwrap();
            mesh.check_admissible().unwrap();
            for k in 0..mesh.num_elements() {
                let geo = mesh.element_geometry(k).unwrap();
                assert!((geo.area - 2.0 / (m * m) as f64).abs() < 1e-14);
                for c in 0..2 {
                    let s: f64 = geo.grad_basis.iter().map(|g| g[c]).sum();
                    assert!(s.abs() < 1e-14 * m as f64);
                }
            }
            for v in 0..mesh.num_vertices() {
                let p = mesh.vertex(v);
                let expect = (p[0].abs().max(p[1].abs()) - 1.0).abs() <= 1e-12;
                assert_eq!(mesh.is_boundary(v), expect);
            }
        }
    }

    #[test]
    fn locate_structured() {
        let mesh = TriMesh::structured(4).unwrap();
        for p in [[0.3, -0.7], [-1.0, -1.0], [1.0, 1.0], [0.0, 0.0], [-0.99, 0.98], [0.5, 0.25]] {
            let (k, lam) = mesh.locate(p).unwrap();
            assert!(lam.iter().all(|&l| l >= -1e-12), "{p:?} -> {k} {lam:?}");
            assert!((lam.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
        assert!(matches!(mesh.locate([1.1, 0.0]), Err(Error::OutOfDomain(..))));
    }
}
