//! Run configuration: defaults, overrides from a TOML key-value file, then
//! overrides from command-line flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{level_range, DEFAULT_TAU};
use crate::assembly::AssemblyMode;
use crate::error::{Error, Result};
use crate::problems::{BoundaryTable, ProblemId, ProblemSpec, DEFAULT_QUAD_TOL};
use crate::solver::{Damping, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Csv,
    Vtk,
    Svg,
    Checkpoints,
}

impl std::str::FromStr for Emit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Emit::Csv),
            "vtk" => Ok(Emit::Vtk),
            "svg" => Ok(Emit::Svg),
            "checkpoints" => Ok(Emit::Checkpoints),
            other => Err(Error::invalid(format!("unknown output kind {other:?}"))),
        }
    }
}

/// Exponents for which figures (SVG, VTK) are produced by default.
pub const DEFAULT_FIGURE_P: [f64; 6] = [2.0, 8.0, 64.0, 256.0, 512.0, 1024.0];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: ProblemId,
    pub mesh_m: usize,
    pub solver: SolverConfig,
    pub tau: f64,
    pub contour_levels: Vec<f64>,
    pub quad_tol: f64,
    pub output_dir: PathBuf,
    pub emit: BTreeSet<Emit>,
    /// Stages whose exponent is listed here get SVG and VTK output.
    pub figure_p: Vec<f64>,
    pub boundary_table: Option<PathBuf>,
    /// Target dimension of a custom boundary table.
    pub components: usize,
    pub box_smoothed: bool,
}

impl RunConfig {
    pub fn new(experiment: ProblemId) -> Self {
        RunConfig {
            experiment,
            mesh_m: 64,
            solver: SolverConfig::default(),
            tau: DEFAULT_TAU,
            contour_levels: level_range(-1.0, 1.0, 0.05),
            quad_tol: DEFAULT_QUAD_TOL,
            output_dir: PathBuf::from("out"),
            emit: [Emit::Csv, Emit::Vtk, Emit::Svg, Emit::Checkpoints].into_iter().collect(),
            figure_p: DEFAULT_FIGURE_P.to_vec(),
            boundary_table: None,
            components: 2,
            box_smoothed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh_m < 2 {
            return Err(Error::invalid("mesh_m must be at least 2"));
        }
        self.solver.validate()?;
        if self.contour_levels.windows(2).any(|w| !(w[1] > w[0])) || self.contour_levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid("contour levels must be finite and strictly increasing"));
        }
        if !(self.tau > 0.0) || !(self.quad_tol > 0.0) {
            return Err(Error::invalid("tau and quad_tol must be positive"));
        }
        if self.experiment == ProblemId::Custom && self.boundary_table.is_none() {
            return Err(Error::invalid("the custom experiment needs a boundary table"));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        match self.experiment {
            ProblemId::Custom => {
                let path = self.boundary_table.as_ref().ok_or_else(|| Error::invalid("missing boundary table"))?;
                Ok(ProblemSpec::custom_table(BoundaryTable::load(path, self.components)?))
            }
            ProblemId::Box if self.box_smoothed => Ok(ProblemSpec::box_smoothed(self.quad_tol)),
            id => ProblemSpec::builtin(id, self.quad_tol),
        }
    }

    pub fn wants(&self, e: Emit) -> bool {
        self.emit.contains(&e)
    }

    pub fn is_figure_stage(&self, p: f64) -> bool {
        self.figure_p.iter().any(|&q| (q - p).abs() <= 1e-9 * p)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(e) = &o.experiment {
            self.experiment = e.parse()?;
        }
        if let Some(m) = o.mesh_m {
            self.mesh_m = m;
        }
        if let Some(s) = &o.p_schedule {
            self.solver.p_schedule = s.clone();
        }
        if let Some(p) = o.p_max {
            self.solver.p_schedule.retain(|&q| q <= p);
            if self.solver.p_schedule.last().is_some_and(|&q| q < p) {
                self.solver.p_schedule.push(p);
            }
        }
        let s = &mut self.solver;
        set(&mut s.newton_tol, o.newton_tol);
        set(&mut s.newton_max_iter, o.newton_max_iter);
        set(&mut s.linear_tol, o.linear_tol);
        set(&mut s.epsilon, o.epsilon);
        set(&mut s.max_bisections, o.max_bisections);
        set(&mut s.diagnose_cold_start, o.diagnose_cold_start);
        let d: &mut Damping = &mut s.damping;
        set(&mut d.shrink, o.damping_shrink);
        set(&mut d.min_step, o.damping_min_step);
        set(&mut d.sufficient_decrease, o.sufficient_decrease);
        if let Some(par) = o.parallel {
            s.assembly_mode = if par { AssemblyMode::Parallel } else { AssemblyMode::Sequential };
        }
        set(&mut self.tau, o.tau);
        if let Some(l) = &o.contour_levels {
            self.contour_levels = l.clone();
        }
        if let Some(step) = o.contour_step {
            self.contour_levels = level_range(-1.0, 1.0, step);
        }
        set(&mut self.quad_tol, o.quad_tol);
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(e) = &o.emit {
            self.emit = e.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        if let Some(f) = &o.figure_p {
            self.figure_p = f.clone();
        }
        if let Some(t) = &o.boundary_table {
            self.boundary_table = Some(t.clone());
        }
        set(&mut self.components, o.components);
        set(&mut self.box_smoothed, o.box_smoothed);
        Ok(())
    }

    /// Key-value description of every setting, for manifests.
    pub fn to_overrides(&self) -> Overrides {
        let s = &self.solver;
        Overrides {
            experiment: Some(self.experiment.to_string()),
            mesh_m: Some(self.mesh_m),
            p_schedule: Some(s.p_schedule.clone()),
            p_max: None,
            newton_tol: Some(s.newton_tol),
            newton_max_iter: Some(s.newton_max_iter),
            linear_tol: Some(s.linear_tol),
            epsilon: Some(s.epsilon),
            max_bisections: Some(s.max_bisections),
            diagnose_cold_start: Some(s.diagnose_cold_start),
            damping_shrink: Some(s.damping.shrink),
            damping_min_step: Some(s.damping.min_step),
            sufficient_decrease: Some(s.damping.sufficient_decrease),
            parallel: Some(s.assembly_mode == AssemblyMode::Parallel),
            tau: Some(self.tau),
            contour_levels: Some(self.contour_levels.clone()),
            contour_step: None,
            quad_tol: Some(self.quad_tol),
            output_dir: Some(self.output_dir.clone()),
            emit: Some(self.emit.iter().map(|e| format!("{e:?}").to_lowercase()).collect()),
            figure_p: Some(self.figure_p.clone()),
            boundary_table: self.boundary_table.clone(),
            components: Some(self.components),
            box_smoothed: Some(self.box_smoothed),
        }
    }
}

fn set<T: Copy>(dst: &mut T, src: Option<T>) {
    if let Some(v) = src {
        *dst = v;
    }
}

/// Optional settings as read from a config file or from flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Overrides {
    pub experiment: Option<String>,
    pub mesh_m: Option<usize>,
    pub p_schedule: Option<Vec<f64>>,
    /// Truncates the schedule at this exponent (appending it if absent).
    pub p_max: Option<f64>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub linear_tol: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_bisections: Option<usize>,
    pub diagnose_cold_start: Option<bool>,
    pub damping_shrink: Option<f64>,
    pub damping_min_step: Option<f64>,
    pub sufficient_decrease: Option<f64>,
    pub parallel: Option<bool>,
    pub tau: Option<f64>,
    pub contour_levels: Option<Vec<f64>>,
    /// Levels `-1, -1 + step, ..., 1`.
    pub contour_step: Option<f64>,
    pub quad_tol: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub emit: Option<Vec<String>>,
    pub figure_p: Option<Vec<f64>>,
    pub boundary_table: Option<PathBuf>,
    pub components: Option<usize>,
    pub box_smoothed: Option<bool>,
}

impl Overrides {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Format { detail, .. } => Error::format(format!("config {}", path.display()), detail),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain settings serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        for id in [ProblemId::Mixed2d, ProblemId::Mixed3d, ProblemId::Rank1, ProblemId::Triple, ProblemId::Box] {
            let c = RunConfig::new(id);
            c.validate().unwrap();
            assert_eq!(c.problem().unwrap().id, id);
        }
        assert!(RunConfig::new(ProblemId::Custom).validate().is_err());
        let c = RunConfig::new(ProblemId::Triple);
        assert_eq!(c.contour_levels.len(), 41);
        assert!(c.is_figure_stage(512.0) && !c.is_figure_stage(362.0));
    }

    #[test]
    fn file_then_flags() {
        let mut c = RunConfig::new(ProblemId::Mixed2d);
        let file = Overrides::parse("experiment = \"rank1\"\nmesh_m = 16\np_schedule = [2, 8]\nemit = [\"csv\"]\n").unwrap();
        c.apply(&file).unwrap();
        let flags = Overrides { mesh_m: Some(32), ..Default::default() };
        c.apply(&flags).unwrap();
        assert_eq!(c.experiment, ProblemId::Rank1);
        assert_eq!(c.mesh_m, 32);
        assert_eq!(c.solver.p_schedule, vec![2.0, 8.0]);
        assert!(c.wants(Emit::Csv) && !c.wants(Emit::Svg));
    }

    #[test]
    fn p_max_truncates() {
        let mut c = RunConfig::new(ProblemId::Mixed3d);
        c.apply(&Overrides { p_max: Some(820.0), ..Default::default() }).unwrap();
        assert_eq!(c.solver.p_schedule.last(), Some(&820.0));
        assert_eq!(c.solver.p_schedule[c.solver.p_schedule.len() - 2], 724.0);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Overrides::parse("mesh = 3\n").is_err());
        let mut c = RunConfig::new(ProblemId::Mixed2d);
        assert!(c.apply(&Overrides { emit: Some(vec!["png".into()]), ..Default::default() }).is_err());
        c.apply(&Overrides { contour_levels: Some(vec![0.1, 0.0]), ..Default::default() }).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let c = RunConfig::new(ProblemId::Box);
        let text = c.to_overrides().to_toml();
        let mut d = RunConfig::new(ProblemId::Mixed2d);
        d.apply(&Overrides::parse(&text).unwrap()).unwrap();
        assert_eq!(d.to_overrides(), c.to_overrides());
    }
}
