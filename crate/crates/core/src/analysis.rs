//! Post-processing of solved fields: determinants, rank phases, contours,
//! projections onto the orthogonal complement of the range, recovered second
//! derivatives and the two parts of the infinity-Laplace residual.

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::fespace::{Gradient, VectorField};
use crate::mesh::{Point, TriMesh};

/// Default rank threshold, equal to the contour increment of the det plots.
pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_RANK_TOL: f64 = 1e-8;
/// Shift applied to a contour level that coincides with a nodal value.
pub const LEVEL_PERTURBATION: f64 = 1e-13;

/// Area-weighted average of adjacent element gradients at every vertex.
pub fn recover_nodal_gradient(field: &VectorField) -> Vec<Gradient> {
    let mesh = field.mesh();
    let n = field.n_components();
    let mut acc = vec![Gradient::zeros(n); mesh.num_vertices()];
    let mut weight = vec![0.0; mesh.num_vertices()];
    for k in 0..mesh.num_elements() {
        let g = field.element_gradient(k);
        let area = mesh.geometry(k).area;
        for &v in &mesh.triangle(k) {
            for a in 0..n {
                acc[v].add(a, 0, area * g.get(a, 0));
                acc[v].add(a, 1, area * g.get(a, 1));
            }
            weight[v] += area;
        }
    }
    acc.into_iter().zip(weight).map(|(g, w)| g.scaled(1.0 / w)).collect()
}

/// Area-weighted average of an element-constant scalar at every vertex.
pub fn nodal_average(mesh: &TriMesh, per_element: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; mesh.num_vertices()];
    let mut weight = vec![0.0; mesh.num_vertices()];
    for (k, &val) in per_element.iter().enumerate() {
        let area = mesh.geometry(k).area;
        for &v in &mesh.triangle(k) {
            acc[v] += area * val;
            weight[v] += area;
        }
    }
    acc.iter().zip(&weight).map(|(a, w)| a / w).collect()
}

/// Element-constant `det DU`; `None` unless `N = 2`.
pub fn det_field(field: &VectorField) -> Option<Vec<f64>> {
    (field.n_components() == 2).then(|| field.gradients().iter().map(|g| g.det().unwrap()).collect())
}

/// Nodal scalar used for contour plots: averaged `det DU` for `N = 2`,
/// averaged `sigma_1 sigma_2` otherwise.
pub fn nodal_det(field: &VectorField) -> Vec<f64> {
    let per_element = det_field(field).unwrap_or_else(|| {
        field.gradients().iter().map(|g| {
            let s = g.singular_values();
            s[0] * s[1]
        }).collect()
    });
    nodal_average(field.mesh(), &per_element)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RankClass {
    Rank0 = 0,
    Rank1 = 1,
    Rank2 = 2,
}

/// Numerical rank: singular values above `tau * max(1, sigma_max)`.
pub fn numerical_rank(sigma: [f64; 2], tau: f64) -> RankClass {
    let cut = tau * sigma[0].max(1.0);
    match sigma.iter().filter(|&&s| s > cut).count() {
        0 => RankClass::Rank0,
        1 => RankClass::Rank1,
        _ => RankClass::Rank2,
    }
}

/// A contour polyline of a nodal scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub level: f64,
    pub points: Vec<Point>,
    pub closed: bool,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        let seg = |a: &Point, b: &Point| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let open: f64 = self.points.windows(2).map(|w| seg(&w[0], &w[1])).sum();
        match (self.closed, self.points.first(), self.points.last()) {
            (true, Some(a), Some(b)) => open + seg(b, a),
            _ => open,
        }
    }
}

/// Element-wise phase diagnostics of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    /// `det DU` per element (`N = 2` only).
    pub det: Option<Vec<f64>>,
    /// Frobenius norm `|DU|` per element.
    pub norm: Vec<f64>,
    pub singular_values: Vec<[f64; 2]>,
    pub rank: Vec<RankClass>,
    pub omega1_area: f64,
    pub omega2_area: f64,
    pub contours: Vec<Polyline>,
    pub tau: f64,
}

/// Classifies every element by numerical rank of `DU` (without contours).
pub fn rank_classify(field: &VectorField, tau: f64) -> PhaseField {
    let mesh = field.mesh();
    let grads = field.gradients();
    let singular_values: Vec<[f64; 2]> = grads.par_iter().map(Gradient::singular_values).collect();
    let rank: Vec<RankClass> = singular_values.iter().map(|&s| numerical_rank(s, tau)).collect();
    let (mut omega1_area, mut omega2_area) = (0.0, 0.0);
    for (k, r) in rank.iter().enumerate() {
        let area = mesh.geometry(k).area;
        if *r == RankClass::Rank2 {
            omega2_area += area;
        } else {
            omega1_area += area;
        }
    }
    PhaseField {
        det: det_field(field),
        norm: grads.iter().map(|g| g.frobenius_sq().sqrt()).collect(),
        singular_values,
        rank,
        omega1_area,
        omega2_area,
        contours: Vec::new(),
        tau,
    }
}

/// [`rank_classify`] plus contours of [`nodal_det`] at `levels`.
pub fn phase_field(field: &VectorField, tau: f64, levels: &[f64]) -> PhaseField {
    let mut phases = rank_classify(field, tau);
    phases.contours = contour_extract(field.mesh(), &nodal_det(field), levels);
    phases
}

/// Levels `start, start + step, ..., <= stop` without accumulated round-off.
///
/// When `1 / step` is an integer `q` the levels are the correctly rounded
/// fractions `k / q`.
pub fn level_range(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as i64;
    let q = (1.0 / step).round();
    let k0 = (start * q).round();
    if (q * step - 1.0).abs() < 1e-12 && (k0 - start * q).abs() < 1e-9 {
        (0..=count).map(|i| (k0 + i as f64) / q).collect()
    } else {
        (0..=count).map(|i| start + i as f64 * step).collect()
    }
}

/// Level sets of a piecewise-linear nodal field by marching triangles.
///
/// Each level yields zero or more polylines; crossing points on a shared
/// edge are computed once, so neighbouring segments join exactly.
pub fn contour_extract(mesh: &TriMesh, values: &[f64], levels: &[f64]) -> Vec<Polyline> {
    assert_eq!(values.len(), mesh.num_vertices(), "one value per vertex expected");
    let mut out = Vec::new();
    for &level in levels {
        let mut c = level;
        while values.contains(&c) {
            c += LEVEL_PERTURBATION * c.abs().max(1.0);
        }
        // segments keyed by canonical edges
        let mut adjacency: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
        for tri in mesh.triangles() {
            let above: Vec<bool> = tri.iter().map(|&v| values[v] > c).collect();
            let mut cut = Vec::with_capacity(2);
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                if above[e] != above[(e + 1) % 3] {
                    cut.push((a.min(b), a.max(b)));
                }
            }
            if let [e0, e1] = cut[..] {
                adjacency.entry(e0).or_default().push(e1);
                adjacency.entry(e1).or_default().push(e0);
            }
        }
        let point = |(a, b): (usize, usize)| -> Point {
            let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
            let t = (c - values[a]) / (values[b] - values[a]);
            [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
        };
        let mut visited: HashSet<(usize, usize)> = HashSet::new();
        let walk = |start: (usize, usize), visited: &mut HashSet<(usize, usize)>| -> (Vec<(usize, usize)>, bool) {
            let mut chain = vec![start];
            visited.insert(start);
            let mut current = start;
            loop {
                let next = adjacency[&current].iter().copied().find(|e| !visited.contains(e));
                match next {
                    Some(e) => {
                        visited.insert(e);
                        chain.push(e);
                        current = e;
                    }
                    None => {
                        let closed = chain.len() > 2 && adjacency[&current].contains(&start);
                        return (chain, closed);
                    }
                }
            }
        };
        let ends: Vec<(usize, usize)> = adjacency.iter().filter(|(_, n)| n.len() == 1).map(|(e, _)| *e).collect();
        for e in ends {
            if !visited.contains(&e) {
                let (chain, _) = walk(e, &mut visited);
                out.push(Polyline { level, points: chain.into_iter().map(point).collect(), closed: false });
            }
        }
        let keys: Vec<(usize, usize)> = adjacency.keys().copied().collect();
        for e in keys {
            if !visited.contains(&e) {
                let (chain, closed) = walk(e, &mut visited);
                out.push(Polyline { level, points: chain.into_iter().map(point).collect(), closed });
            }
        }
    }
    out
}

/// Projection `I - Q Q^T` onto the orthogonal complement of the range of `g`,
/// where `Q` spans the singular directions above `rank_tol * sigma_max`.
pub fn ortho_projection(g: &Gradient, rank_tol: f64) -> DMatrix<f64> {
    let n = g.n();
    let svd = g.to_matrix().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let mut p = DMatrix::<f64>::identity(n, n);
    if smax == 0.0 {
        return p;
    }
    let retained: Vec<usize> = (0..2).filter(|&j| svd.singular_values[j] > rank_tol * smax).collect();
    if retained.len() == n {
        return DMatrix::zeros(n, n);
    }
    for j in retained {
        for a in 0..n {
            for b in 0..n {
                p[(a, b)] -= u[(a, j)] * u[(b, j)];
            }
        }
    }
    p
}

/// Element-constant second derivatives `D2[alpha][i][j]`, symmetrized in `i, j`.
pub type Hessian = [[[f64; 2]; 2]; 3];

/// Gradient of the recovered (P1) gradient on every element.
pub fn recovered_hessians(field: &VectorField, nodal: &[Gradient]) -> Vec<Hessian> {
    let mesh = field.mesh();
    let n = field.n_components();
    (0..mesh.num_elements())
        .map(|k| {
            let tri = mesh.triangle(k);
            let gb = mesh.geometry(k).grad_basis;
            let mut h = [[[0.0; 2]; 2]; 3];
            for a in 0..n {
                for i in 0..2 {
                    for j in 0..2 {
                        h[a][i][j] = (0..3).map(|c| nodal[tri[c]].get(a, i) * gb[c][j]).sum();
                    }
                }
                let off = 0.5 * (h[a][0][1] + h[a][1][0]);
                h[a][0][1] = off;
                h[a][1][0] = off;
            }
            h
        })
        .collect()
}

/// Per-element tangential `|Du (x) Du : D2u|` and normal `||Du|^2 [Du]^perp Lap u|` residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct InfinityResiduals {
    pub tangential: Vec<f64>,
    pub normal: Vec<f64>,
}

/// Max, interior max (elements without boundary vertices) and L2 norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualNorms {
    pub max: f64,
    pub interior_max: f64,
    pub l2: f64,
}

impl InfinityResiduals {
    pub fn norms(&self, mesh: &TriMesh) -> (ResidualNorms, ResidualNorms) {
        (summarize(mesh, &self.tangential), summarize(mesh, &self.normal))
    }
}

fn summarize(mesh: &TriMesh, values: &[f64]) -> ResidualNorms {
    let mut out = ResidualNorms { max: 0.0, interior_max: 0.0, l2: 0.0 };
    for (k, &r) in values.iter().enumerate() {
        out.max = out.max.max(r);
        if mesh.triangle(k).iter().all(|&v| !mesh.is_boundary(v)) {
            out.interior_max = out.interior_max.max(r);
        }
        out.l2 += r * r * mesh.geometry(k).area;
    }
    out.l2 = out.l2.sqrt();
    out
}

/// Both parts of the infinity-Laplace residual from recovered derivatives.
pub fn infinity_residuals(field: &VectorField) -> InfinityResiduals {
    let mesh = field.mesh();
    let n = field.n_components();
    let nodal = recover_nodal_gradient(field);
    let hess = recovered_hessians(field, &nodal);
    let (tangential, normal) = (0..mesh.num_elements())
        .into_par_iter()
        .map(|k| {
            let tri = mesh.triangle(k);
            let mut du = Gradient::zeros(n);
            for &v in &tri {
                for a in 0..n {
                    du.add(a, 0, nodal[v].get(a, 0) / 3.0);
                    du.add(a, 1, nodal[v].get(a, 1) / 3.0);
                }
            }
            let h = &hess[k];
            // (Du (x) Du : D2u)_alpha = D_i u_alpha D_j u_beta D_ij u_beta
            let mut t = [0.0; 3];
            for (a, ta) in t.iter_mut().enumerate().take(n) {
                for b in 0..n {
                    for i in 0..2 {
                        for j in 0..2 {
                            *ta += du.get(a, i) * du.get(b, j) * h[b][i][j];
                        }
                    }
                }
            }
            let lap: Vec<f64> = (0..n).map(|b| h[b][0][0] + h[b][1][1]).collect();
            let proj = ortho_projection(&du, DEFAULT_RANK_TOL);
            let scale = du.frobenius_sq();
            let normal: f64 = (0..n)
                .map(|a| {
                    let v: f64 = (0..n).map(|b| proj[(a, b)] * lap[b]).sum();
                    (scale * v).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            (t.iter().map(|x| x * x).sum::<f64>().sqrt(), normal)
        })
        .unzip();
    InfinityResiduals { tangential, normal }
}

/// Angle in `[0, pi]` between `D_x U` and `D_y U`; `None` where a column vanishes.
pub fn angle_field(field: &VectorField) -> Vec<Option<f64>> {
    field
        .gradients()
        .iter()
        .map(|g| {
            let (cx, cy) = (g.column(0), g.column(1));
            let nx = cx.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = cy.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nx == 0.0 || ny == 0.0 {
                return None;
            }
            let c: f64 = cx.iter().zip(&cy).map(|(a, b)| a * b).sum::<f64>() / (nx * ny);
            Some(c.clamp(-1.0, 1.0).acos())
        })
        .collect()
}

/// Mean and standard deviation of the defined angles, weighted by area.
pub fn angle_statistics(mesh: &TriMesh, angles: &[Option<f64>]) -> Option<(f64, f64)> {
    let (mut w, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (k, a) in angles.iter().enumerate() {
        if let Some(a) = a {
            let area = mesh.geometry(k).area;
            w += area;
            s1 += area * a;
            s2 += area * a * a;
        }
    }
    (w > 0.0).then(|| {
        let mean = s1 / w;
        (mean, (s2 / w - mean * mean).max(0.0).sqrt())
    })
}

/// The mesh with vertices mapped through `U` (components beyond `N` are 0).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSurface {
    pub points: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

pub fn image_surface(field: &VectorField) -> ImageSurface {
    let mesh = field.mesh();
    let points = (0..mesh.num_vertices())
        .map(|v| {
            let mut p = [0.0; 3];
            for (dst, src) in p.iter_mut().zip(field.nodal(v)) {
                *dst = *src;
            }
            p
        })
        .collect();
    ImageSurface { points, triangles: mesh.triangles().to_vec() }
}

impl ImageSurface {
    /// Range of the third coordinate after removing its least-squares affine
    /// trend in the first two.
    pub fn vertical_extent(&self) -> f64 {
        let mut ata = nalgebra::Matrix3::<f64>::zeros();
        let mut atb = nalgebra::Vector3::<f64>::zeros();
        for p in &self.points {
            let row = nalgebra::Vector3::new(p[0], p[1], 1.0);
            ata += row * row.transpose();
            atb += row * p[2];
        }
        let coef = ata.lu().solve(&atb).unwrap_or_else(nalgebra::Vector3::zeros);
        let detrended = self.points.iter().map(|p| p[2] - coef[0] * p[0] - coef[1] * p[1] - coef[2]);
        let (lo, hi) = detrended.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| (lo.min(z), hi.max(z)));
        hi - lo
    }
}

/// `\int_Omega sigma_2(DU)`.
pub fn sigma2_integral(field: &VectorField) -> f64 {
    let mesh = field.mesh();
    field.gradients().iter().enumerate().map(|(k, g)| g.singular_values()[1] * mesh.geometry(k).area).sum()
}

/// Area-weighted mean of an element quantity over elements whose barycenter
/// lies in `[x0, x1] x [y0, y1]`.
pub fn box_mean(mesh: &TriMesh, per_element: &[f64], x: [f64; 2], y: [f64; 2]) -> Option<f64> {
    let (mut w, mut s) = (0.0, 0.0);
    for (k, v) in per_element.iter().enumerate() {
        let c = mesh.barycenter(k);
        if c[0] >= x[0] && c[0] <= x[1] && c[1] >= y[0] && c[1] <= y[1] {
            let area = mesh.geometry(k).area;
            w += area;
            s += area * v;
        }
    }
    (w > 0.0).then(|| s / w)
}

/// Evaluates a nodal scalar at a point by barycentric interpolation.
pub fn evaluate_nodal(mesh: &TriMesh, values: &[f64], p: Point) -> Option<f64> {
    let (k, lam) = mesh.locate(p).ok()?;
    let tri = mesh.triangle(k);
    Some((0..3).map(|c| lam[c] * values[tri[c]]).sum())
}
