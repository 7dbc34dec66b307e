//! Continuous piecewise-linear vector fields on a [`TriMesh`].

use std::sync::Arc;

use nalgebra::Matrix3x2;

use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh};
use crate::quadrature::{gauss_legendre, triangle_rule_deg5};
use crate::sparse::{pcg, CsrMatrix, PcgStatus};

/// Largest target dimension handled by [`Gradient`].
pub const MAX_COMPONENTS: usize = 3;

/// Gradient matrix `DU` of an `R^N`-valued map of two variables (`N x 2`).
///
/// Row `alpha` holds `(D_x U_alpha, D_y U_alpha)`; rows beyond `n` are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gradient {
    n: usize,
    rows: [[f64; 2]; MAX_COMPONENTS],
}

impl Gradient {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=MAX_COMPONENTS).contains(&n), "unsupported target dimension {n}");
        Gradient { n, rows: [[0.0; 2]; MAX_COMPONENTS] }
    }

    pub fn from_rows(rows: &[[f64; 2]]) -> Self {
        let mut g = Self::zeros(rows.len());
        g.rows[..rows.len()].copy_from_slice(rows);
        g
    }

    /// Builds a gradient from its two columns `D_x U` and `D_y U`.
    pub fn from_columns(dx: &[f64], dy: &[f64]) -> Self {
        let mut g = Self::zeros(dx.len());
        for a in 0..dx.len() {
            g.rows[a] = [dx[a], dy[a]];
        }
        g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.rows[..self.n]
    }

    pub fn get(&self, alpha: usize, i: usize) -> f64 {
        self.rows[alpha][i]
    }

    pub fn set(&mut self, alpha: usize, i: usize, v: f64) {
        self.rows[alpha][i] = v;
    }

    pub fn add(&mut self, alpha: usize, i: usize, v: f64) {
        self.rows[alpha][i] += v;
    }

    pub fn column(&self, i: usize) -> [f64; MAX_COMPONENTS] {
        [self.rows[0][i], self.rows[1][i], self.rows[2][i]]
    }

    /// Frobenius inner product `A : B`.
    pub fn frobenius_dot(&self, other: &Gradient) -> f64 {
        self.rows().iter().zip(other.rows()).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.frobenius_dot(self)
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for r in &mut self.rows {
            r[0] *= s;
            r[1] *= s;
        }
        self
    }

    /// Determinant, defined only for square (`N = 2`) gradients.
    pub fn det(&self) -> Option<f64> {
        (self.n == 2).then(|| self.rows[0][0] * self.rows[1][1] - self.rows[0][1] * self.rows[1][0])
    }

    /// Zero-padded 3x2 copy for small dense linear algebra.
    pub fn to_matrix(&self) -> Matrix3x2<f64> {
        Matrix3x2::new(
            self.rows[0][0],
            self.rows[0][1],
            self.rows[1][0],
            self.rows[1][1],
            self.rows[2][0],
            self.rows[2][1],
        )
    }

    /// Singular values in decreasing order.
    pub fn singular_values(&self) -> [f64; 2] {
        let sv = self.to_matrix().singular_values();
        let (a, b) = (sv[0], sv[1]);
        if a >= b { [a, b] } else { [b, a] }
    }

    pub fn is_finite(&self) -> bool {
        self.rows().iter().all(|r| r[0].is_finite() && r[1].is_finite())
    }
}

/// Nodal coefficients of a continuous piecewise-linear map `U: Omega -> R^N`.
///
/// Values are stored vertex-major, component-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    mesh: Arc<TriMesh>,
    n: usize,
    values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(mesh: Arc<TriMesh>, n: usize) -> Self {
        assert!((1..=MAX_COMPONENTS).contains(&n), "unsupported target dimension {n}");
        let values = vec![0.0; mesh.num_vertices() * n];
        VectorField { mesh, n, values }
    }

    pub fn from_values(mesh: Arc<TriMesh>, n: usize, values: Vec<f64>) -> Result<Self> {
        if !(1..=MAX_COMPONENTS).contains(&n) {
            return Err(Error::invalid(format!("unsupported target dimension {n}")));
        }
        if values.len() != mesh.num_vertices() * n {
            return Err(Error::invalid(format!(
                "expected {} nodal values, got {}",
                mesh.num_vertices() * n,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            let p = mesh.vertex(i / n);
            return Err(Error::Evaluation { vertex: i / n, x: p[0], y: p[1] });
        }
        Ok(VectorField { mesh, n, values })
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn n_components(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn nodal(&self, v: usize) -> &[f64] {
        &self.values[v * self.n..(v + 1) * self.n]
    }

    pub fn nodal_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.values[v * self.n..(v + 1) * self.n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Constant gradient of the field on element `k`.
    pub fn element_gradient(&self, k: usize) -> Gradient {
        let tri = self.mesh.triangle(k);
        let geo = self.mesh.geometry(k);
        let mut g = Gradient::zeros(self.n);
        for (local, &v) in tri.iter().enumerate() {
            let gb = geo.grad_basis[local];
            for (alpha, u) in self.nodal(v).iter().enumerate() {
                g.add(alpha, 0, u * gb[0]);
                g.add(alpha, 1, u * gb[1]);
            }
        }
        g
    }

    /// Gradients of all elements.
    pub fn gradients(&self) -> Vec<Gradient> {
        (0..self.mesh.num_elements()).map(|k| self.element_gradient(k)).collect()
    }

    /// Point value by barycentric interpolation in the containing element.
    pub fn evaluate(&self, p: Point) -> Result<Vec<f64>> {
        let (k, lam) = self.mesh.locate(p)?;
        Ok(self.evaluate_in(k, lam))
    }

    /// Value at barycentric coordinates `lam` of element `k`.
    pub fn evaluate_in(&self, k: usize, lam: [f64; 3]) -> Vec<f64> {
        let tri = self.mesh.triangle(k);
        let mut out = vec![0.0; self.n];
        for (l, &v) in lam.iter().zip(&tri) {
            for (o, u) in out.iter_mut().zip(self.nodal(v)) {
                *o += l * u;
            }
        }
        out
    }

    /// Maximum nodal distance (Euclidean in `R^N`) to another field on the same mesh.
    pub fn sup_distance(&self, other: &VectorField) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        self.values
            .chunks(self.n)
            .zip(other.values.chunks(self.n))
            .map(|(a, b)| a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Overwrites the boundary nodal values (ordered as [`TriMesh::boundary_vertices`]).
    pub fn set_boundary(&mut self, boundary_values: &[f64]) {
        let n = self.n;
        let mesh = Arc::clone(&self.mesh);
        for (i, &v) in mesh.boundary_vertices().iter().enumerate() {
            self.nodal_mut(v).copy_from_slice(&boundary_values[i * n..(i + 1) * n]);
        }
    }

    pub fn boundary_values(&self) -> Vec<f64> {
        self.mesh.boundary_vertices().iter().flat_map(|&v| self.nodal(v).to_vec()).collect()
    }

    /// L2 norm of `U - f` using a degree-5 rule on every element.
    pub fn l2_error(&self, f: impl Fn(Point) -> Vec<f64>) -> f64 {
        let rule = triangle_rule_deg5();
        let mut total = 0.0;
        for k in 0..self.mesh.num_elements() {
            let tri = self.mesh.triangle(k);
            let pts = tri.map(|v| self.mesh.vertex(v));
            let area = self.mesh.geometry(k).area;
            for (lam, w) in &rule {
                let x = [
                    lam[0] * pts[0][0] + lam[1] * pts[1][0] + lam[2] * pts[2][0],
                    lam[0] * pts[0][1] + lam[1] * pts[1][1] + lam[2] * pts[2][1],
                ];
                let u = self.evaluate_in(k, *lam);
                let e: f64 = u.iter().zip(f(x)).map(|(a, b)| (a - b) * (a - b)).sum();
                total += w * area * e;
            }
        }
        total.sqrt()
    }
}

/// Nodal interpolant of `f` (which must fill `N` components).
pub fn interpolate(mesh: &Arc<TriMesh>, n: usize, f: impl Fn(Point) -> Vec<f64>) -> Result<VectorField> {
    try_interpolate(mesh, n, |p| Ok(f(p)))
}

/// Nodal interpolant of a fallible map.
pub fn try_interpolate(mesh: &Arc<TriMesh>, n: usize, f: impl Fn(Point) -> Result<Vec<f64>>) -> Result<VectorField> {
    let mut field = VectorField::zeros(Arc::clone(mesh), n);
    for v in 0..mesh.num_vertices() {
        let p = mesh.vertex(v);
        let val = f(p)?;
        if val.len() != n {
            return Err(Error::invalid(format!("map returned {} components, expected {n}", val.len())));
        }
        if val.iter().any(|x| !x.is_finite()) {
            return Err(Error::Evaluation { vertex: v, x: p[0], y: p[1] });
        }
        field.nodal_mut(v).copy_from_slice(&val);
    }
    Ok(field)
}

/// Edges of the boundary polygon as vertex pairs.
pub fn boundary_edges(mesh: &TriMesh) -> Vec<(usize, usize)> {
    let mult = mesh.edge_multiplicity();
    let mut edges: Vec<_> = mult
        .into_iter()
        .filter(|&((a, b), count)| count == 1 && mesh.is_boundary(a) && mesh.is_boundary(b))
        .map(|(e, _)| e)
        .collect();
    edges.sort_unstable();
    edges
}

/// L2(boundary) projection of `g` onto traces of P1 fields.
///
/// Returns `N` values per boundary vertex, ordered as
/// [`TriMesh::boundary_vertices`]. The load vector uses a 6-point
/// Gauss-Legendre rule per boundary edge.
pub fn l2_project_boundary(
    mesh: &TriMesh,
    n: usize,
    g: impl Fn(Point) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let bverts = mesh.boundary_vertices();
    let mut local = vec![usize::MAX; mesh.num_vertices()];
    for (i, &v) in bverts.iter().enumerate() {
        local[v] = i;
    }
    let nb = bverts.len();
    let edges = boundary_edges(mesh);
    let mut pattern: Vec<Vec<usize>> = (0..nb).map(|i| vec![i]).collect();
    for &(a, b) in &edges {
        let (ia, ib) = (local[a], local[b]);
        pattern[ia].push(ib);
        pattern[ib].push(ia);
    }
    let mut mass = CsrMatrix::from_pattern(pattern);
    let mut rhs = vec![0.0; nb * n];
    let (nodes, weights) = gauss_legendre(6);
    for &(a, b) in &edges {
        let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
        let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
        let (ia, ib) = (local[a], local[b]);
        mass.add(ia, ia, len / 3.0);
        mass.add(ib, ib, len / 3.0);
        mass.add(ia, ib, len / 6.0);
        mass.add(ib, ia, len / 6.0);
        for (t, w) in nodes.iter().zip(&weights) {
            let s = 0.5 * (t + 1.0);
            let x = [pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])];
            let val = g(x)?;
            if val.len() != n || val.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation { vertex: a, x: x[0], y: x[1] });
            }
            let jw = 0.5 * w * len;
            for alpha in 0..n {
                rhs[ia * n + alpha] += jw * (1.0 - s) * val[alpha];
                rhs[ib * n + alpha] += jw * s * val[alpha];
            }
        }
    }
    let mut out = vec![0.0; nb * n];
    solve_per_component(&mass, &rhs, n, &mut out, "boundary mass matrix")?;
    Ok(out)
}

/// Full-domain L2 projection of `v` onto the P1 space.
pub fn l2_project(mesh: &Arc<TriMesh>, n: usize, v: impl Fn(Point) -> Vec<f64>) -> Result<VectorField> {
    let nv = mesh.num_vertices();
    let mut mass = CsrMatrix::from_pattern(mesh.vertex_neighbours());
    let mut rhs = vec![0.0; nv * n];
    let rule = triangle_rule_deg5();
    for k in 0..mesh.num_elements() {
        let tri = mesh.triangle(k);
        let area = mesh.geometry(k).area;
        let pts = tri.map(|v| mesh.vertex(v));
        for a in 0..3 {
            for b in 0..3 {
                let m = if a == b { area / 6.0 } else { area / 12.0 };
                mass.add(tri[a], tri[b], m);
            }
        }
        for (lam, w) in &rule {
            let x = [
                lam[0] * pts[0][0] + lam[1] * pts[1][0] + lam[2] * pts[2][0],
                lam[0] * pts[0][1] + lam[1] * pts[1][1] + lam[2] * pts[2][1],
            ];
            let val = v(x);
            for a in 0..3 {
                for alpha in 0..n {
                    rhs[tri[a] * n + alpha] += w * area * lam[a] * val[alpha];
                }
            }
        }
    }
    let mut out = vec![0.0; nv * n];
    solve_per_component(&mass, &rhs, n, &mut out, "mass matrix")?;
    VectorField::from_values(Arc::clone(mesh), n, out)
}

fn solve_per_component(mass: &CsrMatrix, rhs: &[f64], n: usize, out: &mut [f64], what: &str) -> Result<()> {
    let size = mass.n();
    for alpha in 0..n {
        let b: Vec<f64> = (0..size).map(|i| rhs[i * n + alpha]).collect();
        let res = pcg(mass, &b, 1e-15, 10 * size + 100, None);
        match res.status {
            PcgStatus::Converged => {}
            other => return Err(Error::LinearSolver(format!("{what} solve failed: {other:?}"))),
        }
        for i in 0..size {
            out[i * n + alpha] = res.x[i];
        }
    }
    Ok(())
}
