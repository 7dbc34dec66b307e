//! Damped Newton iteration for one exponent, wrapped in continuation in `p`.
//!
//! Each exponent is warm-started from the solution of the previous one. When
//! Newton fails, the geometric midpoint of the two exponents is inserted and
//! solved first (recursively, up to [`SolverConfig::max_bisections`] levels).

use std::sync::Arc;

use crate::assembly::{AssemblyMode, Assembler, EnergyProbe, NonlinearSystem, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::fespace::{interpolate, l2_project_boundary, try_interpolate, VectorField};
use crate::mesh::TriMesh;
use crate::problems::ProblemSpec;
use crate::sparse::{dot, pcg, BandedCholesky, PcgStatus};

/// Backtracking parameters of the line search on the log-energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Damping {
    pub shrink: f64,
    pub min_step: f64,
    pub sufficient_decrease: f64,
}

impl Default for Damping {
    fn default() -> Self {
        Damping { shrink: 0.5, min_step: 2f64.powi(-20), sufficient_decrease: 1e-4 }
    }
}

/// Roughly geometric schedule with ratio `sqrt 2` from 2 to 1024.
pub const DEFAULT_SCHEDULE: [f64; 20] = [
    2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 11.0, 16.0, 22.0, 32.0, 45.0, 64.0, 90.0, 128.0, 181.0, 256.0, 362.0, 512.0,
    724.0, 1024.0,
];

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub p_schedule: Vec<f64>,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub damping: Damping,
    pub linear_tol: f64,
    pub epsilon: f64,
    /// Maximum depth of midpoint insertions between two scheduled exponents.
    pub max_bisections: usize,
    /// Also run a cold start from the boundary lift at every stage and record its iteration count.
    pub diagnose_cold_start: bool,
    pub assembly_mode: AssemblyMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            p_schedule: DEFAULT_SCHEDULE.to_vec(),
            newton_tol: 1e-8,
            newton_max_iter: 50,
            damping: Damping::default(),
            linear_tol: 1e-10,
            epsilon: DEFAULT_EPSILON,
            max_bisections: 4,
            diagnose_cold_start: false,
            assembly_mode: AssemblyMode::Sequential,
        }
    }
}

impl SolverConfig {
    pub fn with_schedule(p_schedule: Vec<f64>) -> Self {
        SolverConfig { p_schedule, ..Default::default() }
    }

    /// The default schedule truncated at the first entry `>= p_max`.
    pub fn schedule_up_to(p_max: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for &p in &DEFAULT_SCHEDULE {
            out.push(p);
            if p >= p_max {
                break;
            }
        }
        out
    }

    /// Unit increments `2, 3, ..., p_max`.
    pub fn unit_schedule(p_max: usize) -> Vec<f64> {
        (2..=p_max.max(2)).map(|p| p as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_schedule.first() != Some(&2.0) {
            return Err(Error::invalid("p schedule must start at 2"));
        }
        if self.p_schedule.windows(2).any(|w| !(w[1] > w[0])) || self.p_schedule.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("p schedule must be finite and strictly increasing"));
        }
        if !(self.newton_tol > 0.0) || !(self.linear_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Error::invalid("Newton and linear tolerances must be positive"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon must be non-negative"));
        }
        let d = self.damping;
        if !(d.shrink > 0.0 && d.shrink < 1.0 && d.min_step > 0.0 && d.sufficient_decrease > 0.0 && d.sufficient_decrease < 1.0) {
            return Err(Error::invalid("invalid damping parameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearMethod {
    Cg,
    Direct,
}

#[derive(Debug, Clone)]
pub struct LinearSolve {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub method: LinearMethod,
}

/// Relative diagonal floor applied before solving.
///
/// Elements far below the maximal gradient norm carry weights that underflow
/// at large `p`; rows touching only such elements would otherwise be zero.
pub const DIAGONAL_FLOOR: f64 = 1e-14;

/// Solves `J x = rhs` by Jacobi-preconditioned CG, falling back to a banded
/// Cholesky factorization of the Jacobi-scaled matrix when CG stagnates
/// (no halving of the residual over `10 sqrt(n)` iterations).
pub fn solve_linear(system: &NonlinearSystem, rhs: &[f64], linear_tol: f64) -> Result<LinearSolve> {
    let mut jac = system.jacobian.clone();
    let n = jac.n();
    if n == 0 {
        return Ok(LinearSolve { x: Vec::new(), iterations: 0, method: LinearMethod::Cg });
    }
    let diag = jac.diagonal();
    let max_diag = diag.iter().cloned().fold(0.0, f64::max);
    if !(max_diag > 0.0) {
        return Err(Error::LinearSolver("Jacobian has no positive diagonal entry".into()));
    }
    for (i, &d) in diag.iter().enumerate() {
        let floor = DIAGONAL_FLOOR * max_diag;
        if d < floor {
            jac.add(i, i, floor - d);
        }
    }
    let window = (10.0 * (n as f64).sqrt()).ceil() as usize;
    let cg = pcg(&jac, rhs, linear_tol, n.max(window) + window, Some(window));
    match cg.status {
        PcgStatus::Converged => return Ok(LinearSolve { x: cg.x, iterations: cg.iterations, method: LinearMethod::Cg }),
        PcgStatus::NegativeCurvature => {
            return Err(Error::LinearSolver(format!(
                "negative curvature after {} CG iterations: Jacobian indefinite, epsilon too small",
                cg.iterations
            )))
        }
        PcgStatus::Stagnated | PcgStatus::MaxIterations => {}
    }
    let scale: Vec<f64> = jac.diagonal().iter().map(|d| 1.0 / d.sqrt()).collect();
    let scaled = jac.scaled_symmetric(&scale);
    let chol = BandedCholesky::factor(&scaled)?;
    let b: Vec<f64> = rhs.iter().zip(&scale).map(|(r, s)| r * s).collect();
    let y = chol.solve(&b);
    let x = y.iter().zip(&scale).map(|(y, s)| y * s).collect();
    Ok(LinearSolve { x, iterations: cg.iterations, method: LinearMethod::Direct })
}

/// Convergence history of one Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonRecord {
    pub p: f64,
    pub iterations: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    /// Log-energy after each accepted step, starting with the initial guess.
    pub log_energies: Vec<f64>,
    pub step_lengths: Vec<f64>,
    pub cg_iterations: Vec<usize>,
    pub direct_solves: usize,
    pub log_energy: f64,
    pub energy_root: f64,
}

/// Attainable residual norm in floating point, `eps |J|_max |U|_max sqrt(n)`,
/// never below `1e-14`.
pub fn roundoff_level(sys: &NonlinearSystem, u: &VectorField) -> f64 {
    let umax = u.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let n = sys.residual.len() as f64;
    (f64::EPSILON * sys.jacobian.max_abs() * umax * n.sqrt()).max(1e-14)
}

/// Damped Newton at fixed `p` from `initial`, whose boundary values are kept.
pub fn newton_solve(assembler: &Assembler, initial: &VectorField, p: f64, config: &SolverConfig) -> Result<(VectorField, NewtonRecord)> {
    let dofs = assembler.dofs();
    let mut u = initial.clone();
    let eps = config.epsilon;
    let damping = config.damping;
    let mut probe = EnergyProbe::new(&u, p, eps);
    let mut sys = assembler.assemble(&u, p, eps, None)?;
    let r0 = sys.residual_norm();
    let mut record = NewtonRecord {
        p,
        iterations: 0,
        initial_residual: r0,
        final_residual: r0,
        log_energies: vec![probe.log_energy],
        step_lengths: Vec::new(),
        cg_iterations: Vec::new(),
        direct_solves: 0,
        log_energy: probe.log_energy,
        energy_root: probe.energy().energy_root,
    };
    loop {
        let r = sys.residual_norm();
        record.final_residual = r;
        if r <= config.newton_tol * r0 || r <= roundoff_level(&sys, &u) {
            let e = probe.energy();
            record.log_energy = e.log_energy;
            record.energy_root = e.energy_root;
            return Ok((u, record));
        }
        if record.iterations >= config.newton_max_iter {
            return Err(Error::NonConvergence {
                p,
                iterations: record.iterations,
                ratio: r / r0,
                best: Box::new(u),
            });
        }
        let neg: Vec<f64> = sys.residual.iter().map(|f| -f).collect();
        let lin = solve_linear(&sys, &neg, config.linear_tol)?;
        record.cg_iterations.push(lin.iterations);
        if lin.method == LinearMethod::Direct {
            record.direct_solves += 1;
        }
        let mut dir = lin.x;
        let mut fd = dot(&sys.residual, &dir);
        if !(fd < 0.0) {
            // not a descent direction (round-off); use the Jacobi-scaled gradient
            let diag = sys.jacobian.diagonal();
            dir = sys.residual.iter().zip(&diag).map(|(f, d)| if *d > 0.0 { -f / d } else { -f }).collect();
            fd = dot(&sys.residual, &dir);
        }
        // d/dt log E(U + t d) at t = 0
        let slope = p * ((p - 2.0) * sys.scale_m.ln() - probe.log_energy).exp() * fd;
        let mut t = 1.0;
        let accepted = loop {
            let mut trial = u.clone();
            dofs.scatter_add(&mut trial, &dir, t);
            let change = probe.log_change(&trial);
            if change.is_finite() && change <= damping.sufficient_decrease * t * slope {
                break Some((trial, None));
            }
            if t == 1.0 && change.is_finite() && change <= 1e-14 * probe.log_energy.abs().max(1.0) {
                // decrease lost in round-off: accept when the residual drops
                let trial_sys = assembler.assemble(&trial, p, eps, None)?;
                if trial_sys.residual_norm() < r {
                    break Some((trial, Some(trial_sys)));
                }
            }
            t *= damping.shrink;
            if t < damping.min_step {
                break None;
            }
        };
        let Some((trial, trial_sys)) = accepted else {
            return Err(Error::NonConvergence {
                p,
                iterations: record.iterations,
                ratio: r / r0,
                best: Box::new(u),
            });
        };
        u = trial;
        record.iterations += 1;
        record.step_lengths.push(t);
        probe = EnergyProbe::new(&u, p, eps);
        record.log_energies.push(probe.log_energy);
        sys = match trial_sys {
            Some(s) => s,
            None => assembler.assemble(&u, p, eps, None)?,
        };
        if !u.is_finite() {
            return Err(Error::IterateCorruption(0));
        }
    }
}

/// Summary of one solved continuation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub p: f64,
    pub newton_iterations: usize,
    pub final_residual: f64,
    pub relative_residual: f64,
    pub log_energy: f64,
    pub energy_root: f64,
    /// Energy root of the boundary lift (interpolated datum with projected boundary values).
    pub lift_energy_root: f64,
    pub direct_solves: usize,
    pub cg_iterations: usize,
    /// True for exponents inserted after a failure.
    pub inserted: bool,
    pub cold_start_iterations: Option<usize>,
    pub newton: NewtonRecord,
}

#[derive(Debug, Clone)]
pub struct ContinuationState {
    pub p_current: f64,
    pub solution: VectorField,
    pub history: Vec<StageRecord>,
}

impl ContinuationState {
    /// Exponents actually solved, including inserted midpoints.
    pub fn realized_schedule(&self) -> Vec<f64> {
        self.history.iter().map(|s| s.p).collect()
    }
}

/// Boundary values `P_h g` (L2 projection on the boundary).
pub fn boundary_values(problem: &ProblemSpec, mesh: &TriMesh) -> Result<Vec<f64>> {
    l2_project_boundary(mesh, problem.n, |p| problem.boundary_datum(p[0], p[1]))
}

/// Interpolated datum with boundary values replaced by `P_h g`.
pub fn boundary_lift(problem: &ProblemSpec, mesh: &Arc<TriMesh>) -> Result<VectorField> {
    let mut lift = try_interpolate(mesh, problem.n, |p| problem.boundary_datum(p[0], p[1]))?;
    lift.set_boundary(&boundary_values(problem, mesh)?);
    Ok(lift)
}

/// Continuation through `config.p_schedule`, calling `on_stage` after every
/// converged exponent (scheduled or inserted).
pub fn continue_in_p(
    problem: &ProblemSpec,
    mesh: &Arc<TriMesh>,
    config: &SolverConfig,
    on_stage: &mut dyn FnMut(&StageRecord, &VectorField) -> Result<()>,
) -> Result<ContinuationState> {
    config.validate()?;
    let lift = boundary_lift(problem, mesh)?;
    let mut assembler = Assembler::new(mesh, problem.n);
    assembler.mode = config.assembly_mode;
    let mut state = ContinuationState { p_current: f64::NAN, solution: lift.clone(), history: Vec::new() };
    let mut ctx = Stages { assembler: &assembler, lift: &lift, config, on_stage };
    for (i, &p) in config.p_schedule.iter().enumerate() {
        let prev = (i > 0).then(|| config.p_schedule[i - 1]);
        if let Err(reason) = ctx.solve(&mut state, prev, p, 0, false) {
            let state = Box::new(state);
            return Err(match reason {
                Error::ContinuationFailure { .. } => reason,
                other => Error::ContinuationFailure { p, reason: other.to_string(), state },
            });
        }
    }
    Ok(state)
}

struct Stages<'a> {
    assembler: &'a Assembler,
    lift: &'a VectorField,
    config: &'a SolverConfig,
    on_stage: &'a mut dyn FnMut(&StageRecord, &VectorField) -> Result<()>,
}

impl Stages<'_> {
    fn solve(&mut self, state: &mut ContinuationState, prev: Option<f64>, p: f64, depth: usize, inserted: bool) -> Result<()> {
        let start = state.solution.clone();
        match newton_solve(self.assembler, &start, p, self.config) {
            Ok((u, newton)) => self.accept(state, u, newton, inserted),
            Err(err @ (Error::NonConvergence { .. } | Error::LinearSolver(_))) => {
                let Some(prev) = prev.filter(|_| depth < self.config.max_bisections) else {
                    return Err(err);
                };
                let mid = (prev * p).sqrt();
                self.solve(state, Some(prev), mid, depth + 1, true)?;
                self.solve(state, Some(mid), p, depth + 1, inserted)
            }
            Err(other) => Err(other),
        }
    }

    fn accept(&mut self, state: &mut ContinuationState, u: VectorField, newton: NewtonRecord, inserted: bool) -> Result<()> {
        let p = newton.p;
        let lift_energy = EnergyProbe::new(self.lift, p, self.config.epsilon).energy();
        let cold_start_iterations = if self.config.diagnose_cold_start {
            newton_solve(self.assembler, self.lift, p, self.config).ok().map(|(_, rec)| rec.iterations)
        } else {
            None
        };
        let record = StageRecord {
            p,
            newton_iterations: newton.iterations,
            final_residual: newton.final_residual,
            relative_residual: if newton.initial_residual > 0.0 { newton.final_residual / newton.initial_residual } else { 0.0 },
            log_energy: newton.log_energy,
            energy_root: newton.energy_root,
            lift_energy_root: lift_energy.energy_root,
            direct_solves: newton.direct_solves,
            cg_iterations: newton.cg_iterations.iter().sum(),
            inserted,
            cold_start_iterations,
            newton,
        };
        (self.on_stage)(&record, &u)?;
        state.p_current = p;
        state.solution = u;
        state.history.push(record);
        Ok(())
    }
}

/// Solves a single exponent from the boundary lift (no continuation).
pub fn solve_single(problem: &ProblemSpec, mesh: &Arc<TriMesh>, p: f64, config: &SolverConfig) -> Result<(VectorField, NewtonRecord)> {
    let lift = boundary_lift(problem, mesh)?;
    let mut assembler = Assembler::new(mesh, problem.n);
    assembler.mode = config.assembly_mode;
    newton_solve(&assembler, &lift, p, config)
}

/// Field with the given boundary values and zero interior.
pub fn zero_interior(mesh: &Arc<TriMesh>, n: usize, boundary: &[f64]) -> VectorField {
    let mut f = interpolate(mesh, n, |_| vec![0.0; n]).expect("zero map is finite");
    f.set_boundary(boundary);
    f
}
