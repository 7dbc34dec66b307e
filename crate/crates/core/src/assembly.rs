//! Residual and Jacobian of the Galerkin p-Laplace system.
//!
//! With `n_K = sqrt(|DU|_K|^2 + eps^2)` and `M = max_K n_K`, every element
//! weight is `w_K = (n_K / M)^(p - 2)`, which lies in `[0, 1]`. The assembled
//! residual is therefore `M^(2 - p)` times the plain Galerkin residual and the
//! Jacobian is scaled the same way: zeros and Newton directions are unchanged,
//! but nothing overflows at `p ~ 1000`.
//!
//! Degrees of freedom are the nodal values at interior vertices, numbered
//! vertex-major and component-minor. Boundary values enter through the field
//! itself, so the residual already contains the lifted Dirichlet data.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fespace::{Gradient, VectorField};
use crate::mesh::{Point, TriMesh};
use crate::quadrature::triangle_rule_deg5;
use crate::sparse::CsrMatrix;

/// Default regularization floor inside the gradient norm.
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// `sqrt(|G|_F^2 + eps^2)`.
pub fn regularized_norm(g: &Gradient, epsilon: f64) -> f64 {
    (g.frobenius_sq() + epsilon * epsilon).sqrt()
}

/// Numbering of the free (interior) degrees of freedom.
#[derive(Debug, Clone)]
pub struct DofMap {
    n: usize,
    free_index: Vec<Option<usize>>,
    free_vertices: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &TriMesh, n: usize) -> Self {
        let mut free_index = vec![None; mesh.num_vertices()];
        let mut free_vertices = Vec::new();
        for v in 0..mesh.num_vertices() {
            if !mesh.is_boundary(v) {
                free_index[v] = Some(free_vertices.len());
                free_vertices.push(v);
            }
        }
        DofMap { n, free_index, free_vertices }
    }

    pub fn n_components(&self) -> usize {
        self.n
    }

    pub fn num_free(&self) -> usize {
        self.free_vertices.len() * self.n
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free_vertices
    }

    pub fn dof(&self, v: usize, alpha: usize) -> Option<usize> {
        self.free_index[v].map(|i| i * self.n + alpha)
    }

    /// Copies the free nodal values of `field` into a dof vector.
    pub fn gather(&self, field: &VectorField) -> Vec<f64> {
        self.free_vertices.iter().flat_map(|&v| field.nodal(v).to_vec()).collect()
    }

    /// Adds `scale * x` to the free nodal values of `field`.
    pub fn scatter_add(&self, field: &mut VectorField, x: &[f64], scale: f64) {
        let n = self.n;
        for (i, &v) in self.free_vertices.iter().enumerate() {
            for (u, dx) in field.nodal_mut(v).iter_mut().zip(&x[i * n..(i + 1) * n]) {
                *u += scale * dx;
            }
        }
    }

    /// Field on the same mesh whose free values are `x` and boundary values are zero.
    pub fn to_field(&self, mesh: &Arc<TriMesh>, x: &[f64]) -> VectorField {
        let mut f = VectorField::zeros(Arc::clone(mesh), self.n);
        self.scatter_add(&mut f, x, 1.0);
        f
    }
}

/// Element-loop execution strategy.
///
/// Both modes produce bitwise identical results: the parallel mode only
/// evaluates element kernels concurrently and scatters them in element order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssemblyMode {
    #[default]
    Sequential,
    Parallel,
}

/// Optional body load `f`, only used for manufactured-solution tests.
pub type Load<'a> = &'a (dyn Fn(Point) -> Vec<f64> + Sync);

/// Normalized residual and Jacobian at one iterate.
#[derive(Debug, Clone)]
pub struct NonlinearSystem {
    pub p: f64,
    pub epsilon: f64,
    /// `M = max_K n_K`.
    pub scale_m: f64,
    pub residual: Vec<f64>,
    pub jacobian: CsrMatrix,
}

impl NonlinearSystem {
    pub fn residual_norm(&self) -> f64 {
        crate::sparse::norm(&self.residual)
    }
}

struct ElementKernel {
    grad: Gradient,
    weight: f64,
    // (p - 2) w / n^2, coefficient of the rank-one Jacobian term
    rank_one: f64,
}

/// Reusable assembler holding the dof numbering and the Jacobian pattern.
#[derive(Debug, Clone)]
pub struct Assembler {
    mesh: Arc<TriMesh>,
    dofs: DofMap,
    pattern: CsrMatrix,
    pub mode: AssemblyMode,
}

impl Assembler {
    pub fn new(mesh: &Arc<TriMesh>, n: usize) -> Self {
        let dofs = DofMap::new(mesh, n);
        let neighbours = mesh.vertex_neighbours();
        let mut rows = vec![Vec::new(); dofs.num_free()];
        for &a in dofs.free_vertices() {
            for &b in &neighbours[a] {
                if mesh.is_boundary(b) {
                    continue;
                }
                for alpha in 0..n {
                    let row = dofs.dof(a, alpha).unwrap();
                    rows[row].extend((0..n).map(|beta| dofs.dof(b, beta).unwrap()));
                }
            }
        }
        Assembler { mesh: Arc::clone(mesh), dofs, pattern: CsrMatrix::from_pattern(rows), mode: AssemblyMode::Sequential }
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    fn kernels(&self, field: &VectorField, p: f64, epsilon: f64) -> Result<(Vec<ElementKernel>, f64)> {
        let ne = self.mesh.num_elements();
        let grads: Vec<Gradient> = match self.mode {
            AssemblyMode::Sequential => (0..ne).map(|k| field.element_gradient(k)).collect(),
            AssemblyMode::Parallel => (0..ne).into_par_iter().map(|k| field.element_gradient(k)).collect(),
        };
        let mut norms = Vec::with_capacity(ne);
        for (k, g) in grads.iter().enumerate() {
            let nk = regularized_norm(g, epsilon);
            if !nk.is_finite() {
                return Err(Error::IterateCorruption(k));
            }
            norms.push(nk);
        }
        let mut scale_m = norms.iter().cloned().fold(0.0, f64::max);
        if scale_m == 0.0 {
            scale_m = 1.0;
        }
        let kernel = |(g, nk): (&Gradient, &f64)| {
            let weight = if p == 2.0 { 1.0 } else { (nk / scale_m).powf(p - 2.0) };
            let rank_one = if weight > 0.0 && p > 2.0 { (p - 2.0) * weight / (nk * nk) } else { 0.0 };
            ElementKernel { grad: *g, weight, rank_one }
        };
        let kernels = match self.mode {
            AssemblyMode::Sequential => grads.iter().zip(&norms).map(kernel).collect(),
            AssemblyMode::Parallel => grads.par_iter().zip(&norms).map(kernel).collect(),
        };
        Ok((kernels, scale_m))
    }

    /// Residual only.
    pub fn residual(&self, field: &VectorField, p: f64, epsilon: f64, load: Option<Load>) -> Result<(Vec<f64>, f64)> {
        let sys = self.assemble_impl(field, p, epsilon, load, false)?;
        Ok((sys.residual, sys.scale_m))
    }

    /// Residual and Jacobian of the normalized system at `field`.
    pub fn assemble(&self, field: &VectorField, p: f64, epsilon: f64, load: Option<Load>) -> Result<NonlinearSystem> {
        self.assemble_impl(field, p, epsilon, load, true)
    }

    fn assemble_impl(
        &self,
        field: &VectorField,
        p: f64,
        epsilon: f64,
        load: Option<Load>,
        with_jacobian: bool,
    ) -> Result<NonlinearSystem> {
        if !(p >= 2.0) || !p.is_finite() {
            return Err(Error::invalid(format!("exponent p = {p} must be finite and at least 2")));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::invalid("epsilon must be non-negative"));
        }
        if field.n_components() != self.dofs.n_components() || field.mesh().num_vertices() != self.mesh.num_vertices() {
            return Err(Error::invalid("field does not conform to the assembler's mesh"));
        }
        let n = self.dofs.n_components();
        let (kernels, scale_m) = self.kernels(field, p, epsilon)?;
        let mut residual = vec![0.0; self.dofs.num_free()];
        let mut jacobian = self.pattern.clone();
        for (k, ek) in kernels.iter().enumerate() {
            if ek.weight == 0.0 {
                continue;
            }
            let tri = self.mesh.triangle(k);
            let geo = self.mesh.geometry(k);
            let wa = ek.weight * geo.area;
            // projections DU_alpha . grad(phi_a)
            let mut proj = [[0.0; 3]; 3];
            for a in 0..3 {
                let gb = geo.grad_basis[a];
                for alpha in 0..n {
                    proj[a][alpha] = ek.grad.get(alpha, 0) * gb[0] + ek.grad.get(alpha, 1) * gb[1];
                }
            }
            for a in 0..3 {
                let Some(ia) = self.dofs.dof(tri[a], 0) else { continue };
                for alpha in 0..n {
                    residual[ia + alpha] += wa * proj[a][alpha];
                }
                if !with_jacobian {
                    continue;
                }
                let ga = geo.grad_basis[a];
                for b in 0..3 {
                    let Some(ib) = self.dofs.dof(tri[b], 0) else { continue };
                    let gb = geo.grad_basis[b];
                    let lap = wa * (ga[0] * gb[0] + ga[1] * gb[1]);
                    let r1 = ek.rank_one * geo.area;
                    for alpha in 0..n {
                        for beta in 0..n {
                            let mut v = r1 * proj[a][alpha] * proj[b][beta];
                            if alpha == beta {
                                v += lap;
                            }
                            jacobian.add(ia + alpha, ib + beta, v);
                        }
                    }
                }
            }
        }
        if let Some(f) = load {
            let factor = if p == 2.0 { 1.0 } else { (-(p - 2.0) * scale_m.ln()).exp() };
            let rule = triangle_rule_deg5();
            for k in 0..self.mesh.num_elements() {
                let tri = self.mesh.triangle(k);
                let pts = tri.map(|v| self.mesh.vertex(v));
                let area = self.mesh.geometry(k).area;
                for (lam, w) in &rule {
                    let x = [
                        lam[0] * pts[0][0] + lam[1] * pts[1][0] + lam[2] * pts[2][0],
                        lam[0] * pts[0][1] + lam[1] * pts[1][1] + lam[2] * pts[2][1],
                    ];
                    let fx = f(x);
                    for a in 0..3 {
                        let Some(ia) = self.dofs.dof(tri[a], 0) else { continue };
                        for alpha in 0..n {
                            residual[ia + alpha] -= factor * w * area * lam[a] * fx[alpha];
                        }
                    }
                }
            }
        }
        if let Some(i) = residual.iter().position(|r| !r.is_finite()) {
            return Err(Error::IterateCorruption(i));
        }
        Ok(NonlinearSystem { p, epsilon, scale_m, residual, jacobian })
    }
}

/// One-shot assembly of the normalized system at `field`.
pub fn assemble(field: &VectorField, p: f64, epsilon: f64) -> Result<NonlinearSystem> {
    Assembler::new(field.mesh(), field.n_components()).assemble(field, p, epsilon, None)
}

/// `log sum_K |K| n_K^p` and its p-th root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    pub log_energy: f64,
    pub energy_root: f64,
}

/// Discrete p-energy of `field`, evaluated in log space.
pub fn energy(field: &VectorField, p: f64, epsilon: f64) -> Result<Energy> {
    if !(p >= 2.0) {
        return Err(Error::invalid(format!("exponent p = {p} must be at least 2")));
    }
    let mesh = field.mesh();
    let terms: Vec<f64> = (0..mesh.num_elements())
        .map(|k| mesh.geometry(k).area.ln() + p * regularized_norm(&field.element_gradient(k), epsilon).ln())
        .collect();
    let log_energy = log_sum_exp(&terms);
    Ok(Energy { log_energy, energy_root: (log_energy / p).exp() })
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Accurate evaluation of `log E(V) - log E(U)` for trial iterates `V` near a
/// fixed reference `U`.
///
/// Each element contributes `|K| n_K^p expm1((p/2) log1p((n'^2 - n^2) / n^2))`
/// where `n'^2 - n^2 = (G' - G) : (G' + G)`; the subtraction never happens on
/// rounded energies, so tiny decreases stay visible.
#[derive(Debug, Clone)]
pub struct EnergyProbe {
    p: f64,
    epsilon: f64,
    grads: Vec<Gradient>,
    // log(|K| n_K^p) - log E
    rel_log_weight: Vec<f64>,
    norms_sq: Vec<f64>,
    pub log_energy: f64,
}

impl EnergyProbe {
    pub fn new(field: &VectorField, p: f64, epsilon: f64) -> Self {
        let mesh = field.mesh();
        let grads = field.gradients();
        let norms_sq: Vec<f64> = grads.iter().map(|g| g.frobenius_sq() + epsilon * epsilon).collect();
        let terms: Vec<f64> = (0..mesh.num_elements()).map(|k| mesh.geometry(k).area.ln() + 0.5 * p * norms_sq[k].ln()).collect();
        let log_energy = log_sum_exp(&terms);
        let rel_log_weight = terms.iter().map(|t| t - log_energy).collect();
        EnergyProbe { p, epsilon, grads, rel_log_weight, norms_sq, log_energy }
    }

    pub fn energy(&self) -> Energy {
        Energy { log_energy: self.log_energy, energy_root: (self.log_energy / self.p).exp() }
    }

    /// `log E(trial) - log E(reference)`.
    pub fn log_change(&self, trial: &VectorField) -> f64 {
        let mesh = trial.mesh();
        let mut ratio = 0.0;
        let mut direct = Vec::new();
        for k in 0..mesh.num_elements() {
            let g1 = trial.element_gradient(k);
            let g0 = &self.grads[k];
            let mut diff = 0.0;
            for (r1, r0) in g1.rows().iter().zip(g0.rows()) {
                diff += (r1[0] - r0[0]) * (r1[0] + r0[0]) + (r1[1] - r0[1]) * (r1[1] + r0[1]);
            }
            if self.norms_sq[k] > 0.0 {
                let growth = 0.5 * self.p * (diff / self.norms_sq[k]).ln_1p();
                if growth > 700.0 {
                    direct.push((k, g1));
                    continue;
                }
                ratio += self.rel_log_weight[k].exp() * growth.exp_m1();
            } else {
                direct.push((k, g1));
            }
        }
        if direct.is_empty() && ratio > -1.0 {
            return ratio.ln_1p();
        }
        // fall back to the plain difference of log energies
        let terms: Vec<f64> = (0..mesh.num_elements())
            .map(|k| mesh.geometry(k).area.ln() + self.p * regularized_norm(&trial.element_gradient(k), self.epsilon).ln())
            .collect();
        log_sum_exp(&terms) - self.log_energy
    }
}

/// Scalar P1 stiffness matrix over all vertices.
pub fn scalar_stiffness(mesh: &TriMesh) -> CsrMatrix {
    let mut a = CsrMatrix::from_pattern(mesh.vertex_neighbours());
    for k in 0..mesh.num_elements() {
        let tri = mesh.triangle(k);
        let geo = mesh.geometry(k);
        for i in 0..3 {
            for j in 0..3 {
                let (gi, gj) = (geo.grad_basis[i], geo.grad_basis[j]);
                a.add(tri[i], tri[j], geo.area * (gi[0] * gj[0] + gi[1] * gj[1]));
            }
        }
    }
    a
}

/// Scalar P1 mass matrix over all vertices.
pub fn scalar_mass(mesh: &TriMesh) -> CsrMatrix {
    let mut a = CsrMatrix::from_pattern(mesh.vertex_neighbours());
    for k in 0..mesh.num_elements() {
        let tri = mesh.triangle(k);
        let area = mesh.geometry(k).area;
        for i in 0..3 {
            for j in 0..3 {
                a.add(tri[i], tri[j], if i == j { area / 6.0 } else { area / 12.0 });
            }
        }
    }
    a
}
