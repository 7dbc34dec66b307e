#![allow(dead_code)]

use std::sync::Arc;

use infharm::analysis::{contour_extract, ortho_projection, DEFAULT_RANK_TOL};
use infharm::assembly::Assembler;
use infharm::fespace::{Gradient, VectorField};
use infharm::io::checkpoint::Checkpoint;
use infharm::mesh::TriMesh;
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::Rng;

/// A random `n x 2` gradient of rank 0, 1 or 2 (chosen by `kind % 3`).
pub fn random_gradient(rng: &mut StdRng, n: usize, kind: u32) -> Gradient {
    let mut rows = vec![[0.0; 2]; n];
    match kind % 3 {
        0 => {}
        1 => {
            let dir: [f64; 2] = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            for r in rows.iter_mut() {
                let s: f64 = rng.gen_range(-3.0..3.0);
                *r = [s * dir[0], s * dir[1]];
            }
        }
        _ => {
            for r in rows.iter_mut() {
                *r = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            }
        }
    }
    Gradient::from_rows(&rows)
}

/// Worst of `|P - P^T|`, `|P^2 - P|` and `|P G|` (max entry).
pub fn projection_defect(g: &Gradient) -> f64 {
    let p = ortho_projection(g, DEFAULT_RANK_TOL);
    let n = g.n();
    let gm = DMatrix::from_fn(n, 2, |a, i| g.get(a, i));
    let sym = (&p - p.transpose()).amax();
    let idem = (&p * &p - &p).amax();
    let annihilate = (&p * gm).amax();
    sym.max(idem).max(annihilate)
}

/// Field with affine boundary trace plus a smooth random interior bump.
pub fn random_field(rng: &mut StdRng, m: usize, n: usize) -> VectorField {
    let mesh = Arc::new(TriMesh::structured(m).unwrap());
    let mut f = VectorField::zeros(mesh.clone(), n);
    let coef: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    for v in 0..mesh.num_vertices() {
        let [x, y] = mesh.vertex(v);
        let bump = (1.0 - x * x) * (1.0 - y * y);
        for (a, c) in coef.iter().enumerate() {
            let noise: f64 = rng.gen_range(-0.3..0.3);
            f.nodal_mut(v)[a] = c[0] * x + c[1] * y + c[2] * x * y + bump * noise;
        }
    }
    f
}

/// Relative mismatch between `J d` and a central difference of the
/// unnormalized residual along a random free direction `d`.
pub fn jacobian_fd_mismatch(field: &VectorField, p: f64, rng: &mut StdRng) -> f64 {
    let asm = Assembler::new(field.mesh(), field.n_components());
    let eps = 1e-10;
    let sys = asm.assemble(field, p, eps, None).unwrap();
    let nfree = asm.dofs().num_free();
    let d: Vec<f64> = (0..nfree).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let jd = sys.jacobian.mul(&d);
    let h = 1e-6;
    let shifted = |s: f64| {
        let mut g = field.clone();
        asm.dofs().scatter_add(&mut g, &d, s);
        let (r, scale_m) = asm.residual(&g, p, eps, None).unwrap();
        // undo the normalization relative to the base point
        let ratio = if p == 2.0 { 1.0 } else { ((p - 2.0) * (scale_m.ln() - sys.scale_m.ln())).exp() };
        r.into_iter().map(|x| x * ratio).collect::<Vec<f64>>()
    };
    let (plus, minus) = (shifted(h), shifted(-h));
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..nfree {
        let fd = (plus[i] - minus[i]) / (2.0 * h);
        num += (fd - jd[i]).powi(2);
        den += jd[i].powi(2);
    }
    (num / den).sqrt()
}

/// Largest deviation of a contour vertex's interpolated value from its level.
pub fn contour_level_defect(mesh: &TriMesh, values: &[f64], levels: &[f64]) -> (f64, usize) {
    let lines = contour_extract(mesh, values, levels);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for line in &lines {
        for &pt in &line.points {
            let v = edge_value(mesh, values, pt).expect("contour vertex lies on a mesh edge");
            worst = worst.max((v - line.level).abs());
            count += 1;
        }
    }
    (worst, count)
}

/// Linear interpolation along the mesh edge containing `pt`.
fn edge_value(mesh: &TriMesh, values: &[f64], pt: [f64; 2]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for tri in mesh.triangles() {
        for e in 0..3 {
            let (a, b) = (tri[e], tri[(e + 1) % 3]);
            let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
            let d = [pb[0] - pa[0], pb[1] - pa[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let t = ((pt[0] - pa[0]) * d[0] + (pt[1] - pa[1]) * d[1]) / len2;
            if !(-1e-12..=1.0 + 1e-12).contains(&t) {
                continue;
            }
            let off = ((pa[0] + t * d[0] - pt[0]).powi(2) + (pa[1] + t * d[1] - pt[1]).powi(2)).sqrt();
            if best.is_none_or(|(o, _)| off < o) {
                best = Some((off, values[a] + t * (values[b] - values[a])));
            }
        }
    }
    best.filter(|(o, _)| *o < 1e-12).map(|(_, v)| v)
}

/// Writes and reads back a checkpoint; true when every value is bit-identical.
pub fn checkpoint_roundtrip(ckpt: &Checkpoint) -> bool {
    let mut buf = Vec::new();
    ckpt.write_to(&mut buf).unwrap();
    let back = Checkpoint::read_from(&mut &buf[..]).unwrap();
    let bits = |x: f64| x.to_bits();
    back.experiment == ckpt.experiment
        && back.n_components == ckpt.n_components
        && back.mesh_m == ckpt.mesh_m
        && back.newton_iterations == ckpt.newton_iterations
        && back.inserted == ckpt.inserted
        && [
            (back.p, ckpt.p),
            (back.final_residual, ckpt.final_residual),
            (back.log_energy, ckpt.log_energy),
            (back.energy_root, ckpt.energy_root),
            (back.lift_energy_root, ckpt.lift_energy_root),
        ]
        .iter()
        .all(|(a, b)| bits(*a) == bits(*b))
        && back.values.len() == ckpt.values.len()
        && back.values.iter().zip(&ckpt.values).all(|(a, b)| bits(*a) == bits(*b))
}
