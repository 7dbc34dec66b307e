//! End-to-end pipelines behind the command-line subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::analysis::{
    angle_field, angle_statistics, image_surface, infinity_residuals, nodal_det, phase_field, sigma2_integral,
    InfinityResiduals, PhaseField, ResidualNorms,
};
use crate::error::{Error, Result};
use crate::fespace::{try_interpolate, VectorField};
use crate::io::checkpoint::Checkpoint;
use crate::io::config::{Emit, Overrides, RunConfig};
use crate::io::svg::SvgPlot;
use crate::io::vtk::{Scalars, VtkGrid};
use crate::mesh::TriMesh;
use crate::problems::{ProblemId, ProblemSpec};
use crate::solver::{continue_in_p, ContinuationState, SolverConfig, StageRecord};

/// Diagnostics of one solved exponent.
#[derive(Debug, Clone)]
pub struct StageAnalysis {
    pub phases: PhaseField,
    pub angles: Vec<Option<f64>>,
    pub residuals: InfinityResiduals,
    pub summary: StageSummary,
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub p: f64,
    pub inserted: bool,
    pub newton_iterations: usize,
    pub final_residual: f64,
    pub log_energy: f64,
    pub energy_root: f64,
    pub lift_energy_root: f64,
    pub omega1_area: f64,
    pub omega2_area: f64,
    pub sigma2_integral: f64,
    pub angle_mean: f64,
    pub angle_std: f64,
    pub tangential_max: f64,
    pub tangential_l2: f64,
    pub normal_max: f64,
    pub normal_l2: f64,
    pub image_vertical_extent: f64,
    /// Max nodal distance to the interpolated explicit map (explicit experiments only).
    pub oracle_sup: Option<f64>,
}

/// Analysis of a checkpointed stage; depends only on the checkpoint and config.
pub fn analyze_stage(ckpt: &Checkpoint, field: &VectorField, config: &RunConfig, oracle: Option<&VectorField>) -> StageAnalysis {
    let mesh = field.mesh();
    let phases = phase_field(field, config.tau, &config.contour_levels);
    let angles = angle_field(field);
    let residuals = infinity_residuals(field);
    let (tn, nn): (ResidualNorms, ResidualNorms) = residuals.norms(mesh);
    let (angle_mean, angle_std) = angle_statistics(mesh, &angles).unwrap_or((f64::NAN, f64::NAN));
    let summary = StageSummary {
        p: ckpt.p,
        inserted: ckpt.inserted,
        newton_iterations: ckpt.newton_iterations,
        final_residual: ckpt.final_residual,
        log_energy: ckpt.log_energy,
        energy_root: ckpt.energy_root,
        lift_energy_root: ckpt.lift_energy_root,
        omega1_area: phases.omega1_area,
        omega2_area: phases.omega2_area,
        sigma2_integral: sigma2_integral(field),
        angle_mean,
        angle_std,
        tangential_max: tn.max,
        tangential_l2: tn.l2,
        normal_max: nn.max,
        normal_l2: nn.l2,
        image_vertical_extent: if field.n_components() == 3 { image_surface(field).vertical_extent() } else { 0.0 },
        oracle_sup: oracle.map(|o| field.sup_distance(o)),
    };
    StageAnalysis { phases, angles, residuals, summary }
}

fn stem(experiment: &str, p: f64) -> String {
    format!("{experiment}_p{p}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(format!("csv {}", path.display()), e.to_string())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `x, y, U_1 .. U_N` per vertex.
pub fn write_solution_csv(path: &Path, field: &VectorField) -> Result<()> {
    let mesh = field.mesh();
    let mut header = vec!["x".to_string(), "y".to_string()];
    header.extend((1..=field.n_components()).map(|a| format!("u{a}")));
    write_rows(
        path,
        &header,
        (0..mesh.num_vertices()).map(|v| {
            let p = mesh.vertex(v);
            let mut row = vec![format!("{:?}", p[0]), format!("{:?}", p[1])];
            row.extend(field.nodal(v).iter().map(|u| format!("{u:?}")));
            row
        }),
    )
}

/// Per-element diagnostics.
pub fn write_element_csv(path: &Path, mesh: &TriMesh, a: &StageAnalysis) -> Result<()> {
    let header: Vec<String> = ["element", "x", "y", "det", "norm", "sigma1", "sigma2", "rank", "angle", "tangential", "normal"]
        .map(String::from)
        .to_vec();
    write_rows(
        path,
        &header,
        (0..mesh.num_elements()).map(|k| {
            let c = mesh.barycenter(k);
            let sv = a.phases.singular_values[k];
            vec![
                k.to_string(),
                format!("{:?}", c[0]),
                format!("{:?}", c[1]),
                opt(a.phases.det.as_ref().map(|d| d[k])),
                format!("{:?}", a.phases.norm[k]),
                format!("{:?}", sv[0]),
                format!("{:?}", sv[1]),
                (a.phases.rank[k] as u8).to_string(),
                opt(a.angles[k]),
                format!("{:?}", a.residuals.tangential[k]),
                format!("{:?}", a.residuals.normal[k]),
            ]
        }),
    )
}

pub fn write_summary_csv(path: &Path, rows: &[StageSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn domain_vtk(field: &VectorField, a: &StageAnalysis, title: String) -> VtkGrid {
    let mesh = field.mesh();
    let n = field.n_components();
    let mut point_data: Vec<Scalars> = (0..n)
        .map(|c| Scalars::new(&format!("u{}", c + 1), (0..mesh.num_vertices()).map(|v| field.nodal(v)[c]).collect()))
        .collect();
    point_data.push(Scalars::new("det_nodal", nodal_det(field)));
    let mut cell_data = Vec::new();
    if let Some(d) = &a.phases.det {
        cell_data.push(Scalars::new("det", d.clone()));
    }
    cell_data.push(Scalars::new("norm", a.phases.norm.clone()));
    cell_data.push(Scalars::new("sigma1", a.phases.singular_values.iter().map(|s| s[0]).collect()));
    cell_data.push(Scalars::new("sigma2", a.phases.singular_values.iter().map(|s| s[1]).collect()));
    cell_data.push(Scalars::new("rank", a.phases.rank.iter().map(|&r| r as u8 as f64).collect()));
    cell_data.push(Scalars::new("angle", a.angles.iter().map(|x| x.unwrap_or(-1.0)).collect()));
    cell_data.push(Scalars::new("tangential", a.residuals.tangential.clone()));
    cell_data.push(Scalars::new("normal", a.residuals.normal.clone()));
    VtkGrid {
        title,
        points: mesh.vertices().iter().map(|p| [p[0], p[1], 0.0]).collect(),
        triangles: mesh.triangles().to_vec(),
        point_data,
        cell_data,
    }
}

fn image_vtk(field: &VectorField, title: String) -> VtkGrid {
    let img = image_surface(field);
    let mesh = field.mesh();
    VtkGrid {
        title,
        point_data: vec![
            Scalars::new("x", mesh.vertices().iter().map(|p| p[0]).collect()),
            Scalars::new("y", mesh.vertices().iter().map(|p| p[1]).collect()),
        ],
        points: img.points,
        triangles: img.triangles,
        cell_data: Vec::new(),
    }
}

/// Writes every per-stage artifact except the checkpoint itself.
fn emit_stage(config: &RunConfig, ckpt: &Checkpoint, field: &VectorField, oracle: Option<&VectorField>) -> Result<StageAnalysis> {
    let analysis = analyze_stage(ckpt, field, config, oracle);
    let dir = &config.output_dir;
    let name = stem(&ckpt.experiment, ckpt.p);
    let mesh = field.mesh();
    if config.wants(Emit::Csv) {
        write_solution_csv(&dir.join(format!("{name}_solution.csv")), field)?;
        write_element_csv(&dir.join(format!("{name}_elements.csv")), mesh, &analysis)?;
    }
    if config.is_figure_stage(ckpt.p) {
        if config.wants(Emit::Svg) {
            let values = analysis.phases.det.clone().unwrap_or_else(|| analysis.phases.singular_values.iter().map(|s| s[0] * s[1]).collect());
            let label = if field.n_components() == 2 { "det DU" } else { "sigma1 sigma2" };
            SvgPlot {
                title: format!("{} {label}, p = {}", ckpt.experiment, ckpt.p),
                mesh,
                element_values: &values,
                range: values.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
                contours: &analysis.phases.contours,
            }
            .write(&dir.join(format!("{name}_det.svg")))?;
        }
        if config.wants(Emit::Vtk) {
            domain_vtk(field, &analysis, format!("{name} domain")).write(&dir.join(format!("{name}_domain.vtk")))?;
            image_vtk(field, format!("{name} image")).write(&dir.join(format!("{name}_image.vtk")))?;
        }
    }
    Ok(analysis)
}

fn oracle_field(problem: &ProblemSpec, mesh: &Arc<TriMesh>) -> Result<Option<VectorField>> {
    if problem.parametrisation().is_none() {
        return Ok(None);
    }
    try_interpolate(mesh, problem.n, |p| problem.boundary_datum(p[0], p[1])).map(Some)
}

#[derive(Debug, Serialize)]
struct ManifestStage {
    p: f64,
    inserted: bool,
    newton_iterations: usize,
    initial_residual: f64,
    final_residual: f64,
    log_energy: f64,
    energy_root: f64,
    lift_energy_root: f64,
    cg_iterations: usize,
    direct_solves: usize,
    cold_start_iterations: Option<usize>,
    seconds: f64,
    newton_log_energies: Vec<f64>,
    newton_step_lengths: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct Manifest {
    status: String,
    failed_stage: Option<f64>,
    failure: Option<String>,
    realized_schedule: Vec<f64>,
    mesh_vertices: usize,
    mesh_elements: usize,
    total_seconds: f64,
    config: Overrides,
    stage: Vec<ManifestStage>,
}

pub const MANIFEST: &str = "manifest.toml";
pub const SUMMARY: &str = "summary.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub struct RunReport {
    pub state: ContinuationState,
    pub summaries: Vec<StageSummary>,
    pub output_dir: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Continuation, per-stage checkpoints and analysis, summary and manifest.
///
/// On continuation failure the artifacts of converged stages and a manifest
/// naming the failed exponent are kept, and the error is returned.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let problem = config.problem()?;
    let mesh = Arc::new(TriMesh::structured(config.mesh_m)?);
    let dir = config.output_dir.clone();
    create_dir(&dir)?;
    if config.wants(Emit::Checkpoints) {
        create_dir(&dir.join(CHECKPOINT_DIR))?;
    }
    let oracle = oracle_field(&problem, &mesh)?;
    let experiment = config.experiment.to_string();
    let start = Instant::now();
    let mut last = Instant::now();
    let mut summaries = Vec::new();
    let mut stages = Vec::new();
    let result = continue_in_p(&problem, &mesh, &config.solver, &mut |record: &StageRecord, field| {
        let seconds = last.elapsed().as_secs_f64();
        let ckpt = Checkpoint::from_stage(&experiment, config.mesh_m, record, field);
        if config.wants(Emit::Checkpoints) {
            ckpt.write(&dir.join(CHECKPOINT_DIR).join(format!("{}.ckpt", stem(&experiment, record.p))))?;
        }
        let analysis = emit_stage(config, &ckpt, field, oracle.as_ref())?;
        summaries.push(analysis.summary);
        stages.push(manifest_stage(record, seconds));
        last = Instant::now();
        Ok(())
    });
    if config.wants(Emit::Csv) {
        write_summary_csv(&dir.join(SUMMARY), &summaries)?;
    }
    let (status, failed_stage, failure) = match &result {
        Ok(_) => ("converged".to_string(), None, None),
        Err(Error::ContinuationFailure { p, reason, .. }) => ("failed".to_string(), Some(*p), Some(reason.clone())),
        Err(e) => ("failed".to_string(), None, Some(e.to_string())),
    };
    let manifest = Manifest {
        status,
        failed_stage,
        failure,
        realized_schedule: stages.iter().map(|s| s.p).collect(),
        mesh_vertices: mesh.num_vertices(),
        mesh_elements: mesh.num_elements(),
        total_seconds: start.elapsed().as_secs_f64(),
        config: config.to_overrides(),
        stage: stages,
    };
    let path = dir.join(MANIFEST);
    let text = toml::to_string(&manifest).map_err(|e| Error::format("manifest", e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let state = result?;
    Ok(RunReport { state, summaries, output_dir: dir })
}

fn manifest_stage(r: &StageRecord, seconds: f64) -> ManifestStage {
    ManifestStage {
        p: r.p,
        inserted: r.inserted,
        newton_iterations: r.newton_iterations,
        initial_residual: r.newton.initial_residual,
        final_residual: r.final_residual,
        log_energy: r.log_energy,
        energy_root: r.energy_root,
        lift_energy_root: r.lift_energy_root,
        cg_iterations: r.cg_iterations,
        direct_solves: r.direct_solves,
        cold_start_iterations: r.cold_start_iterations,
        seconds,
        newton_log_energies: r.newton.log_energies.clone(),
        newton_step_lengths: r.newton.step_lengths.clone(),
    }
}

/// Checkpoints in `dir`, sorted by exponent.
pub fn read_checkpoints(dir: &Path) -> Result<Vec<Checkpoint>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "ckpt") {
            out.push(Checkpoint::read(&path)?);
        }
    }
    out.sort_by(|a, b| a.p.total_cmp(&b.p));
    Ok(out)
}

/// Re-runs the analysis from the checkpoints in `checkpoint_dir`, writing into
/// `config.output_dir`.
pub fn analyze(checkpoint_dir: &Path, config: &RunConfig) -> Result<Vec<StageSummary>> {
    let ckpts = read_checkpoints(checkpoint_dir)?;
    let first = ckpts.first().ok_or_else(|| Error::invalid(format!("no checkpoints in {}", checkpoint_dir.display())))?;
    if ckpts.iter().any(|c| c.experiment != first.experiment || c.mesh_m != first.mesh_m) {
        return Err(Error::invalid("checkpoints mix experiments or meshes"));
    }
    create_dir(&config.output_dir)?;
    let mesh = Arc::new(TriMesh::structured(first.mesh_m)?);
    let mut config = config.clone();
    config.experiment = first.experiment.parse()?;
    config.mesh_m = first.mesh_m;
    let oracle = match config.experiment {
        ProblemId::Custom => None,
        _ => oracle_field(&config.problem()?, &mesh)?,
    };
    let mut summaries = Vec::new();
    for c in &ckpts {
        let field = c.to_field_on(&mesh)?;
        summaries.push(emit_stage(&config, c, &field, oracle.as_ref())?.summary);
    }
    if config.wants(Emit::Csv) {
        write_summary_csv(&config.output_dir.join(SUMMARY), &summaries)?;
    }
    Ok(summaries)
}

/// One lattice point of the explicit-map table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactRow {
    pub x: f64,
    pub y: f64,
    pub u1: f64,
    pub u2: f64,
    pub det: f64,
}

/// Scaled explicit map and its determinant on a `(grid_m + 1)^2` lattice.
pub fn exact_table(problem: &ProblemSpec, grid_m: usize) -> Result<Vec<ExactRow>> {
    if problem.parametrisation().is_none() {
        return Err(Error::invalid(format!("experiment {} has no explicit solution", problem.id)));
    }
    if grid_m == 0 {
        return Err(Error::invalid("grid_m must be positive"));
    }
    let mut rows = Vec::with_capacity((grid_m + 1) * (grid_m + 1));
    for j in 0..=grid_m {
        for i in 0..=grid_m {
            let x = -1.0 + 2.0 * i as f64 / grid_m as f64;
            let y = -1.0 + 2.0 * j as f64 / grid_m as f64;
            let u = problem.boundary_datum(x, y)?;
            let det = problem.exact_det(x, y).expect("explicit experiment");
            rows.push(ExactRow { x, y, u1: u[0], u2: u[1], det });
        }
    }
    Ok(rows)
}

pub fn exact_eval(problem: &ProblemSpec, grid_m: usize, path: &Path) -> Result<Vec<ExactRow>> {
    let rows = exact_table(problem, grid_m)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows)
}

/// One resolution of a refinement study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub m: usize,
    pub h: f64,
    pub p: f64,
    pub energy_root: f64,
    pub omega1_area: f64,
    /// Max difference at the vertices of the previous (coarser) mesh.
    pub sup_diff_previous: Option<f64>,
    /// L2 distance to the explicit map, when there is one.
    pub l2_error: Option<f64>,
}

/// Solves at exponent `p` on each resolution in `ms`, by continuation from 2.
pub fn convergence(config: &RunConfig, ms: &[usize], p: f64) -> Result<Vec<ConvergenceRow>> {
    config.validate()?;
    let problem = config.problem()?;
    let mut schedule: Vec<f64> = config.solver.p_schedule.iter().copied().filter(|&q| q < p).collect();
    schedule.push(p);
    let solver = SolverConfig { p_schedule: schedule, ..config.solver.clone() };
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut previous: Option<VectorField> = None;
    for &m in ms {
        let mesh = Arc::new(TriMesh::structured(m)?);
        let state = continue_in_p(&problem, &mesh, &solver, &mut |_, _| Ok(()))?;
        let u = state.solution;
        let sup_diff_previous = match &previous {
            Some(coarse) => {
                let cm = coarse.mesh();
                let mut worst: f64 = 0.0;
                for v in 0..cm.num_vertices() {
                    let fine = u.evaluate(cm.vertex(v))?;
                    for (a, b) in fine.iter().zip(coarse.nodal(v)) {
                        worst = worst.max((a - b).abs());
                    }
                }
                Some(worst)
            }
            None => None,
        };
        let l2_error = match problem.parametrisation() {
            Some(_) => Some(u.l2_error(|q| problem.boundary_datum(q[0], q[1]).unwrap_or_else(|_| vec![f64::NAN; problem.n]))),
            None => None,
        };
        let phases = crate::analysis::rank_classify(&u, config.tau);
        rows.push(ConvergenceRow {
            m,
            h: mesh.h_max(),
            p,
            energy_root: state.history.last().map_or(f64::NAN, |s| s.energy_root),
            omega1_area: phases.omega1_area,
            sup_diff_previous,
            l2_error,
        });
        previous = Some(u);
    }
    create_dir(&config.output_dir)?;
    let path = config.output_dir.join(format!("{}_convergence_p{p}.csv", config.experiment));
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_table_examples() {
        let triple = ProblemSpec::builtin(ProblemId::Triple, 1e-12).unwrap();
        let rows = exact_table(&triple, 4).unwrap();
        assert_eq!(rows.len(), 25);
        let r = rows.iter().find(|r| r.x == -0.5 && r.y == -0.5).unwrap();
        assert_eq!((r.u1, r.u2, r.det), (0.0, 0.0, 0.0));
        let boxed = ProblemSpec::builtin(ProblemId::Box, 1e-12).unwrap();
        let r = *exact_table(&boxed, 4).unwrap().iter().find(|r| r.x == 0.0 && r.y == 0.5).unwrap();
        assert!((r.u1 + 0.375).abs() < 1e-14 && r.u2.abs() < 1e-14);
        assert_eq!(r.det, 0.0);
        let mixed = ProblemSpec::builtin(ProblemId::Mixed2d, 1e-12).unwrap();
        assert!(exact_table(&mixed, 4).is_err());
    }

    #[test]
    fn stem_formats_exponents() {
        assert_eq!(stem("triple", 1024.0), "triple_p1024");
        assert_eq!(stem("box", 45.25), "box_p45.25");
    }
}
