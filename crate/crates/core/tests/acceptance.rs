//! End-to-end acceptance checks. Every test writes one PASS/FAIL line to
//! stderr (bypassing the test harness capture) before asserting.

mod common;

use std::io::Write as _;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use infharm::analysis::{box_mean, det_field, infinity_residuals, level_range, nodal_det, rank_classify, sigma2_integral};
use infharm::assembly::{Assembler, AssemblyMode};
use infharm::fespace::{interpolate, try_interpolate, VectorField};
use infharm::io::checkpoint::Checkpoint;
use infharm::mesh::TriMesh;
use infharm::problems::{ProblemId, ProblemSpec, DEFAULT_QUAD_TOL};
use infharm::solver::{continue_in_p, newton_solve, SolverConfig, StageRecord, DEFAULT_SCHEDULE};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {id:>2} [{verdict}] {name}: {detail}");
}

fn fmt_seq(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(", ")
}

struct Run {
    records: Vec<StageRecord>,
    fields: Vec<VectorField>,
    elapsed: Duration,
    /// Stages where a residual, Jacobian entry or nodal value was not finite.
    nonfinite: Vec<f64>,
}

impl Run {
    fn stage(&self, p: f64) -> (&StageRecord, &VectorField) {
        let i = self.records.iter().position(|r| r.p == p).unwrap_or_else(|| panic!("no stage at p = {p}"));
        (&self.records[i], &self.fields[i])
    }
}

fn solve_run(id: ProblemId, m: usize, schedule: &[f64]) -> Run {
    let problem = ProblemSpec::builtin(id, DEFAULT_QUAD_TOL).unwrap();
    let mesh = Arc::new(TriMesh::structured(m).unwrap());
    let config = SolverConfig { assembly_mode: AssemblyMode::Parallel, ..SolverConfig::with_schedule(schedule.to_vec()) };
    let assembler = Assembler::new(&mesh, problem.n);
    let mut records = Vec::new();
    let mut fields = Vec::new();
    let mut nonfinite = Vec::new();
    let start = Instant::now();
    continue_in_p(&problem, &mesh, &config, &mut |rec, field| {
        let sys = assembler.assemble(field, rec.p, config.epsilon, None)?;
        let finite = field.is_finite()
            && rec.final_residual.is_finite()
            && rec.energy_root.is_finite()
            && sys.residual.iter().all(|x| x.is_finite())
            && sys.jacobian.values().iter().all(|x| x.is_finite());
        if !finite {
            nonfinite.push(rec.p);
        }
        records.push(rec.clone());
        fields.push(field.clone());
        Ok(())
    })
    .unwrap_or_else(|e| panic!("{id} on m = {m} failed: {e}"));
    Run { records, fields, elapsed: start.elapsed(), nonfinite }
}

fn full_run(id: ProblemId) -> &'static Run {
    static MIXED2D: OnceLock<Run> = OnceLock::new();
    static MIXED3D: OnceLock<Run> = OnceLock::new();
    static RANK1: OnceLock<Run> = OnceLock::new();
    static TRIPLE: OnceLock<Run> = OnceLock::new();
    static BOX: OnceLock<Run> = OnceLock::new();
    let cell = match id {
        ProblemId::Mixed2d => &MIXED2D,
        ProblemId::Mixed3d => &MIXED3D,
        ProblemId::Rank1 => &RANK1,
        ProblemId::Triple => &TRIPLE,
        ProblemId::Box => &BOX,
        ProblemId::Custom => unreachable!(),
    };
    cell.get_or_init(|| solve_run(id, 64, &DEFAULT_SCHEDULE))
}

fn explicit_oracle(mesh: &Arc<TriMesh>) -> VectorField {
    let triple = ProblemSpec::builtin(ProblemId::Triple, DEFAULT_QUAD_TOL).unwrap();
    try_interpolate(mesh, 2, |p| triple.boundary_datum(p[0], p[1])).unwrap()
}

#[test]
fn c01_affine_exactness() {
    let mut rng = StdRng::seed_from_u64(1);
    let mesh = Arc::new(TriMesh::structured(16).unwrap());
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let a: [[f64; 2]; 2] = [[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]];
        let b: [f64; 2] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let g = move |p: [f64; 2]| vec![a[0][0] * p[0] + a[0][1] * p[1] + b[0], a[1][0] * p[0] + a[1][1] * p[1] + b[1]];
        let exact = interpolate(&mesh, 2, g).unwrap();
        let problem = ProblemSpec::analytic(2, g);
        let config = SolverConfig::with_schedule(vec![2.0, 64.0, 1024.0]);
        continue_in_p(&problem, &mesh, &config, &mut |_, field| {
            worst = worst.max(field.sup_distance(&exact));
            Ok(())
        })
        .unwrap();
        // also from a perturbed interior start at each exponent
        let assembler = Assembler::new(&mesh, 2);
        for p in [2.0, 64.0, 1024.0] {
            let mut start = exact.clone();
            for v in 0..mesh.num_vertices() {
                if !mesh.is_boundary(v) {
                    for c in start.nodal_mut(v) {
                        *c += rng.gen_range(-1e-3..1e-3);
                    }
                }
            }
            let (u, _) = newton_solve(&assembler, &start, p, &config).unwrap();
            worst = worst.max(u.sup_distance(&exact));
        }
    }
    let pass = worst <= 1e-9;
    report(1, "affine exactness on m = 16, p in {2, 64, 1024}", pass, &format!("max sup error {worst:.3e} (gate 1e-9)"));
    assert!(pass);
}

#[test]
fn c02_p2_manufactured_convergence() {
    let g = |p: [f64; 2]| vec![p[0] * p[0] - p[1] * p[1], p[0] * p[1]];
    let mut errors = Vec::new();
    for m in [8, 16, 32, 64] {
        let mesh = Arc::new(TriMesh::structured(m).unwrap());
        let state = continue_in_p(&ProblemSpec::analytic(2, g), &mesh, &SolverConfig::with_schedule(vec![2.0]), &mut |_, _| Ok(())).unwrap();
        errors.push(state.solution.l2_error(g));
    }
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = ratios.iter().all(|r| (3.6..=4.4).contains(r));
    report(2, "p = 2 L2 error ratios over m = 8..64", pass, &format!("errors [{}], ratios [{}] (gate [3.6, 4.4])", fmt_seq(&errors), fmt_seq(&ratios)));
    assert!(pass);
}

#[test]
fn c03_discrete_minimality() {
    let mut worst = f64::NEG_INFINITY;
    let mut at = String::new();
    let mut stages = 0;
    for id in [ProblemId::Mixed2d, ProblemId::Mixed3d, ProblemId::Rank1, ProblemId::Triple, ProblemId::Box] {
        for rec in &full_run(id).records {
            let excess = rec.energy_root - rec.lift_energy_root;
            if excess > worst {
                worst = excess;
                at = format!("{id} p = {}", rec.p);
            }
            stages += 1;
        }
    }
    let pass = worst <= 1e-12;
    report(3, "energy_root(U_p) <= energy_root(lift) + 1e-12", pass, &format!("{stages} stages, largest excess {worst:.3e} at {at}"));
    assert!(pass);
}

fn omega1_trend(id: ProblemId) -> Vec<f64> {
    let run = full_run(id);
    [2.0, 8.0, 64.0, 256.0].iter().map(|&p| rank_classify(run.stage(p).1, 0.05).omega1_area).collect()
}

#[test]
fn c04_mixed_omega1_decreases() {
    let areas = omega1_trend(ProblemId::Mixed2d);
    let pass = areas.windows(2).all(|w| w[1] < w[0]);
    report(4, "mixed2d omega1_area strictly decreasing over p = 2, 8, 64, 256", pass, &format!("areas [{}]", fmt_seq(&areas)));
    assert!(pass, "omega1 areas {areas:?}");
}

#[test]
fn c05_rank1_omega1_increases() {
    let areas = omega1_trend(ProblemId::Rank1);
    let pass = areas.windows(2).all(|w| w[1] > w[0]);
    report(5, "rank1 omega1_area strictly increasing over p = 2, 8, 64, 256", pass, &format!("areas [{}]", fmt_seq(&areas)));
    assert!(pass, "omega1 areas {areas:?}");
}

#[test]
fn c06_rank1_image_flattens() {
    let run = full_run(ProblemId::Rank1);
    let s2 = sigma2_integral(run.stage(2.0).1);
    let s256 = sigma2_integral(run.stage(256.0).1);
    let factor = s256 / s2;
    let pass = factor <= 0.5;
    report(6, "rank1 int sigma_2 at p = 256 <= half of p = 2", pass, &format!("{s256:.6} / {s2:.6} = {factor:.4}"));
    assert!(pass);
}

#[test]
fn c07_triple_oracle_convergence() {
    let run = full_run(ProblemId::Triple);
    let oracle = explicit_oracle(run.fields[0].mesh());
    let dists: Vec<f64> = [8.0, 64.0, 256.0, 512.0, 1024.0].iter().map(|&p| run.stage(p).1.sup_distance(&oracle)).collect();
    let pass = dists.windows(2).all(|w| w[1] <= w[0]) && *dists.last().unwrap() <= 0.05;
    report(7, "triple sup distance to explicit map non-increasing, final <= 0.05", pass, &format!("p = 8, 64, 256, 512, 1024: [{}]", fmt_seq(&dists)));
    assert!(pass);
}

#[test]
fn c08_triple_interface_geometry() {
    let run = full_run(ProblemId::Triple);
    let field = run.stage(1024.0).1;
    let det = det_field(field).unwrap();
    let abs: Vec<f64> = det.iter().map(|d| d.abs()).collect();
    let flat = box_mean(field.mesh(), &abs, [-0.9, -0.5], [-0.9, -0.5]).unwrap();
    let full = box_mean(field.mesh(), &det, [0.5, 0.9], [-0.9, -0.5]).unwrap();
    let pass = flat <= 0.02 && full >= 0.1;
    report(8, "triple p = 1024 box means of det", pass, &format!("mean |det| on (-0.9,-0.5)^2 = {flat:.5} (<= 0.02), mean det on (0.5,0.9)x(-0.9,-0.5) = {full:.5} (>= 0.1)"));
    assert!(pass);
}

fn decays(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0]) || xs.iter().all(|&x| x == 0.0)
}

#[test]
fn c09_explicit_map_residual_decay() {
    let mut tan = (Vec::new(), Vec::new());
    let mut nor = (Vec::new(), Vec::new());
    for m in [32, 64, 128] {
        let mesh = Arc::new(TriMesh::structured(m).unwrap());
        let field = explicit_oracle(&mesh);
        let (t, n) = infinity_residuals(&field).norms(&mesh);
        tan.0.push(t.max);
        tan.1.push(t.l2);
        nor.0.push(n.max);
        nor.1.push(n.l2);
    }
    let pass = decays(&tan.0) && decays(&tan.1) && decays(&nor.0) && decays(&nor.1);
    report(
        9,
        "infinity residuals of the explicit map over m = 32, 64, 128",
        pass,
        &format!("tangential max [{}] l2 [{}]; normal max [{}] l2 [{}]", fmt_seq(&tan.0), fmt_seq(&tan.1), fmt_seq(&nor.0), fmt_seq(&nor.1)),
    );
    assert!(pass);
}

#[test]
fn c10_numerics_safety() {
    let run = full_run(ProblemId::Mixed2d);
    let reached = run.records.last().map_or(0.0, |r| r.p);
    let pass = run.nonfinite.is_empty() && reached == 1024.0 && run.elapsed <= Duration::from_secs(600);
    report(
        10,
        "mixed2d to p = 1024 on m = 64 stays finite",
        pass,
        &format!("{} stages, reached p = {reached}, non-finite at {:?}, {:.1} s (<= 600 s)", run.records.len(), run.nonfinite, run.elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn c11_property_suites() {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut proj: f64 = 0.0;
    for i in 0..1000u32 {
        let g = common::random_gradient(&mut rng, 2 + (i as usize % 2), i);
        proj = proj.max(common::projection_defect(&g));
    }
    let mut jac: f64 = 0.0;
    for n in [2, 3] {
        let f = common::random_field(&mut rng, 6, n);
        for p in [2.0, 7.0, 64.0] {
            jac = jac.max(common::jacobian_fd_mismatch(&f, p, &mut rng));
        }
    }
    let levels = level_range(-1.0, 1.0, 0.05);
    let triple = full_run(ProblemId::Triple);
    let (field, rec) = (triple.stage(1024.0).1, triple.stage(1024.0).0);
    let (mut contour, mut vertices) = common::contour_level_defect(field.mesh(), &nodal_det(field), &levels);
    for _ in 0..20 {
        let mesh = TriMesh::structured(rng.gen_range(2..12)).unwrap();
        let values: Vec<f64> = (0..mesh.num_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (w, c) = common::contour_level_defect(&mesh, &values, &levels);
        contour = contour.max(w);
        vertices += c;
    }
    let mut roundtrip = common::checkpoint_roundtrip(&Checkpoint::from_stage("triple", 64, rec, field));
    for _ in 0..50 {
        let mut ckpt = Checkpoint::from_stage("triple", 64, rec, field);
        ckpt.values = (0..rng.gen_range(0..200)).map(|_| f64::from_bits(rng.gen())).collect();
        roundtrip &= common::checkpoint_roundtrip(&ckpt);
    }
    let pass = jac <= 1e-5 && proj <= 1e-10 && contour <= 1e-10 && roundtrip;
    report(
        11,
        "property suites",
        pass,
        &format!("Jacobian FD rel {jac:.2e} (<= 1e-5); projection defect {proj:.2e} over 1000 matrices (<= 1e-10); contour level defect {contour:.2e} over {vertices} vertices (<= 1e-10); checkpoint bit-exact {roundtrip}"),
    );
    assert!(pass);
}
