use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use infharm::io::config::{Overrides, RunConfig};
use infharm::io::runner;
use infharm::problems::ProblemId;
use infharm::Error;

/// Vectorial infinity-harmonic maps via p-Laplace continuation.
#[derive(Parser)]
#[command(name = "infharm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Continuation in p with checkpoints, diagnostics and figures.
    Solve(RunArgs),
    /// Re-run the diagnostics from a directory of checkpoints.
    Analyze {
        /// Directory holding `*.ckpt` files.
        checkpoints: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Tabulate the explicit map and its determinant on a lattice.
    Exact {
        /// `triple` or `box`.
        experiment: ProblemId,
        #[arg(long, default_value_t = 64)]
        grid_m: usize,
        #[arg(long, default_value_t = infharm::problems::DEFAULT_QUAD_TOL)]
        quad_tol: f64,
        #[arg(long, short, default_value = "exact.csv")]
        output: PathBuf,
    },
    /// Refinement study at a fixed exponent.
    Convergence {
        #[arg(long, default_value_t = 64.0)]
        p: f64,
        /// Resolutions to solve on, coarsest first.
        #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64])]
        ms: Vec<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// Key-value (TOML) file; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mixed2d, mixed3d, rank1, triple, box or custom.
    #[arg(long, short)]
    experiment: Option<String>,
    /// Cells per side of the structured mesh.
    #[arg(long)]
    mesh_m: Option<usize>,
    /// Exponents to solve, starting at 2.
    #[arg(long, value_delimiter = ',')]
    p_schedule: Option<Vec<f64>>,
    /// Truncate the default schedule at the first entry >= this.
    #[arg(long)]
    p_max: Option<f64>,
    #[arg(long)]
    newton_tol: Option<f64>,
    #[arg(long)]
    newton_max_iter: Option<usize>,
    #[arg(long)]
    linear_tol: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_bisections: Option<usize>,
    #[arg(long)]
    diagnose_cold_start: Option<bool>,
    #[arg(long)]
    parallel: Option<bool>,
    /// Relative singular value threshold for the rank phases.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    contour_levels: Option<Vec<f64>>,
    #[arg(long)]
    contour_step: Option<f64>,
    #[arg(long)]
    quad_tol: Option<f64>,
    #[arg(long, short)]
    output_dir: Option<PathBuf>,
    /// Any of csv, vtk, svg, checkpoints.
    #[arg(long, value_delimiter = ',')]
    emit: Option<Vec<String>>,
    /// Exponents that get SVG and VTK output.
    #[arg(long, value_delimiter = ',')]
    figure_p: Option<Vec<f64>>,
    /// Rows `s v_1 .. v_N` against boundary arc length (custom experiment).
    #[arg(long)]
    boundary_table: Option<PathBuf>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    box_smoothed: Option<bool>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            experiment: self.experiment.clone(),
            mesh_m: self.mesh_m,
            p_schedule: self.p_schedule.clone(),
            p_max: self.p_max,
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            linear_tol: self.linear_tol,
            epsilon: self.epsilon,
            max_bisections: self.max_bisections,
            diagnose_cold_start: self.diagnose_cold_start,
            parallel: self.parallel,
            tau: self.tau,
            contour_levels: self.contour_levels.clone(),
            contour_step: self.contour_step,
            quad_tol: self.quad_tol,
            output_dir: self.output_dir.clone(),
            emit: self.emit.clone(),
            figure_p: self.figure_p.clone(),
            boundary_table: self.boundary_table.clone(),
            components: self.components,
            box_smoothed: self.box_smoothed,
            ..Default::default()
        }
    }

    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut config = RunConfig::new(ProblemId::Mixed2d);
        config.solver.assembly_mode = infharm::assembly::AssemblyMode::Parallel;
        if let Some(path) = &self.config {
            config.apply(&Overrides::load(path)?)?;
        }
        config.apply(&self.overrides())?;
        Ok(config)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Solve(args) => {
            let config = args.resolve()?;
            let report = runner::run(&config)?;
            for s in &report.summaries {
                println!(
                    "p = {:>8} newton {:>2} energy_root {:.6} omega1 {:.4} omega2 {:.4}{}",
                    s.p,
                    s.newton_iterations,
                    s.energy_root,
                    s.omega1_area,
                    s.omega2_area,
                    if s.inserted { " (inserted)" } else { "" }
                );
            }
            println!("artifacts in {}", report.output_dir.display());
        }
        Command::Analyze { checkpoints, run } => {
            let config = run.resolve()?;
            let rows = runner::analyze(&checkpoints, &config)?;
            println!("analyzed {} checkpoints into {}", rows.len(), config.output_dir.display());
        }
        Command::Exact { experiment, grid_m, quad_tol, output } => {
            let problem = infharm::problems::ProblemSpec::builtin(experiment, quad_tol)?;
            let rows = runner::exact_eval(&problem, grid_m, &output)?;
            println!("wrote {} rows to {}", rows.len(), output.display());
        }
        Command::Convergence { p, ms, run } => {
            let config = run.resolve()?;
            for r in runner::convergence(&config, &ms, p)? {
                println!(
                    "m = {:>4} energy_root {:.6} omega1 {:.4} sup_diff {} l2_error {}",
                    r.m,
                    r.energy_root,
                    r.omega1_area,
                    r.sup_diff_previous.map_or("-".into(), |d| format!("{d:.3e}")),
                    r.l2_error.map_or("-".into(), |d| format!("{d:.3e}")),
                );
            }
        }
    }
    Ok(())
}
