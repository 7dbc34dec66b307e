//! Boundary data of the five experiments and the explicit infinity-harmonic
//! map `u(x, y) = int_y^x e^{i K(t)} dt`.
//!
//! All data are defined on the closed square, not only on its boundary, so
//! they double as cold-start initial guesses.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Point;
use crate::quadrature;

/// Default absolute tolerance for evaluating the explicit map.
pub const DEFAULT_QUAD_TOL: f64 = 1e-12;

/// Scalar parametrisation `K` of the explicit map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parametrisation {
    Zero,
    /// `1 - 1/(1 + t^2)` for `t > 0`, zero otherwise.
    Triple,
    /// Box-interface function exactly as published (jumps by 1/2 at `|t| = 1`).
    Box,
    /// Continuous variant of [`Parametrisation::Box`] with denominator `1 + (t -+ 1)^2`.
    BoxSmoothed,
}

impl Parametrisation {
    pub fn value(self, t: f64) -> f64 {
        match self {
            Parametrisation::Zero => 0.0,
            Parametrisation::Triple => k_triple(t),
            Parametrisation::Box => k_box(t),
            Parametrisation::BoxSmoothed => {
                if t > 1.0 {
                    1.0 - 1.0 / (1.0 + (t - 1.0).powi(2))
                } else if t < -1.0 {
                    1.0 / (1.0 + (t + 1.0).powi(2)) - 1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn derivative(self, t: f64) -> f64 {
        match self {
            Parametrisation::Zero => 0.0,
            Parametrisation::Triple => k_triple_deriv(t),
            Parametrisation::Box => {
                if t > 1.0 {
                    2.0 * (t - 1.0) / (2.0 + (t - 1.0).powi(2)).powi(2)
                } else if t < -1.0 {
                    -2.0 * (t + 1.0) / (2.0 + (t + 1.0).powi(2)).powi(2)
                } else {
                    0.0
                }
            }
            Parametrisation::BoxSmoothed => {
                if t > 1.0 {
                    2.0 * (t - 1.0) / (1.0 + (t - 1.0).powi(2)).powi(2)
                } else if t < -1.0 {
                    -2.0 * (t + 1.0) / (1.0 + (t + 1.0).powi(2)).powi(2)
                } else {
                    0.0
                }
            }
        }
    }

    /// Points where `K` is not smooth; quadrature intervals are split there.
    pub fn breakpoints(self) -> &'static [f64] {
        match self {
            Parametrisation::Zero => &[],
            Parametrisation::Triple => &[0.0],
            Parametrisation::Box | Parametrisation::BoxSmoothed => &[-1.0, 1.0],
        }
    }
}

/// Triple-junction parametrisation.
pub fn k_triple(t: f64) -> f64 {
    if t > 0.0 {
        1.0 - 1.0 / (1.0 + t * t)
    } else {
        0.0
    }
}

pub fn k_triple_deriv(t: f64) -> f64 {
    if t > 0.0 {
        2.0 * t / (1.0 + t * t).powi(2)
    } else {
        0.0
    }
}

/// Box-interface parametrisation, verbatim.
pub fn k_box(t: f64) -> f64 {
    if t > 1.0 {
        1.0 - 1.0 / (1.0 + (t - 1.0).powi(2) + 1.0)
    } else if t < -1.0 {
        1.0 / (1.0 + (t + 1.0).powi(2) + 1.0) - 1.0
    } else {
        0.0
    }
}

/// `int_y^x (cos K(t), sin K(t)) dt`, accurate to `quad_tol` per component.
///
/// The integral is always taken over `[min, max]` and signed afterwards, so
/// the result is exactly antisymmetric in `(x, y)`.
pub fn exact_map(x: f64, y: f64, k: Parametrisation, quad_tol: f64) -> Result<[f64; 2]> {
    if !(quad_tol > 0.0) {
        return Err(Error::invalid("quad_tol must be positive"));
    }
    if x == y {
        return Ok([0.0, 0.0]);
    }
    let (lo, hi, sign) = if x > y { (y, x, 1.0) } else { (x, y, -1.0) };
    let mut cuts = vec![lo];
    cuts.extend(k.breakpoints().iter().copied().filter(|&b| b > lo && b < hi));
    cuts.push(hi);
    let pieces = (cuts.len() - 1) as f64;
    let mut total = [0.0; 2];
    for w in cuts.windows(2) {
        let part = quadrature::integrate(
            |t| {
                let kt = k.value(t);
                [kt.cos(), kt.sin()]
            },
            w[0],
            w[1],
            quad_tol / pieces,
        )?;
        total[0] += part[0];
        total[1] += part[1];
    }
    Ok([sign * total[0], sign * total[1]])
}

/// Experiment identifiers, named as on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemId {
    Mixed2d,
    Mixed3d,
    Rank1,
    Triple,
    Box,
    Custom,
}

impl ProblemId {
    pub const ALL: [ProblemId; 6] = [
        ProblemId::Mixed2d,
        ProblemId::Mixed3d,
        ProblemId::Rank1,
        ProblemId::Triple,
        ProblemId::Box,
        ProblemId::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemId::Mixed2d => "mixed2d",
            ProblemId::Mixed3d => "mixed3d",
            ProblemId::Rank1 => "rank1",
            ProblemId::Triple => "triple",
            ProblemId::Box => "box",
            ProblemId::Custom => "custom",
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown experiment '{s}'")))
    }
}

/// Boundary values tabulated against arc length along the boundary.
///
/// Arc length starts at `(-1, -1)` and runs counterclockwise (perimeter 8);
/// values are interpolated linearly and periodically.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTable {
    n: usize,
    arclength: Vec<f64>,
    values: Vec<Vec<f64>>,
}

pub const PERIMETER: f64 = 8.0;

/// Arc-length coordinate of a boundary point (counterclockwise from `(-1, -1)`).
pub fn boundary_arclength(p: Point) -> f64 {
    let [x, y] = p;
    let s = x.abs().max(y.abs());
    let (x, y) = if s > 0.0 { (x / s, y / s) } else { (-1.0, -1.0) };
    if (y + 1.0).abs() < 1e-12 && x < 1.0 {
        x + 1.0
    } else if (x - 1.0).abs() < 1e-12 && y < 1.0 {
        3.0 + y
    } else if (y - 1.0).abs() < 1e-12 && x > -1.0 {
        5.0 - x
    } else {
        7.0 - y
    }
}

impl BoundaryTable {
    pub fn new(n: usize, mut rows: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::format("boundary table", "need at least two rows"));
        }
        if let Some((s, v)) = rows.iter().find(|(s, v)| v.len() != n || !s.is_finite() || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::format("boundary table", format!("bad row at s = {s}: {v:?}")));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        if rows.windows(2).any(|w| w[0].0 == w[1].0) || rows[0].0 < 0.0 || rows[rows.len() - 1].0 >= PERIMETER {
            return Err(Error::format("boundary table", "arc lengths must be distinct and lie in [0, 8)"));
        }
        let (arclength, values) = rows.into_iter().unzip();
        Ok(BoundaryTable { n, arclength, values })
    }

    /// Parses `s v_1 ... v_N` rows; blank lines and `#` comments are ignored.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let nums = nums.map_err(|e| Error::format("boundary table", format!("line {}: {e}", lineno + 1)))?;
            if nums.len() != n + 1 {
                return Err(Error::format(
                    "boundary table",
                    format!("line {}: expected {} numbers, found {}", lineno + 1, n + 1, nums.len()),
                ));
            }
            rows.push((nums[0], nums[1..].to_vec()));
        }
        Self::new(n, rows)
    }

    pub fn load(path: &Path, n: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, n)
    }

    pub fn at_arclength(&self, s: f64) -> Vec<f64> {
        let s = s.rem_euclid(PERIMETER);
        let m = self.arclength.len();
        let idx = self.arclength.partition_point(|&t| t <= s);
        let (i0, i1) = if idx == 0 || idx == m { (m - 1, 0) } else { (idx - 1, idx) };
        let (s0, mut s1) = (self.arclength[i0], self.arclength[i1]);
        let mut s = s;
        if i1 <= i0 {
            s1 += PERIMETER;
            if s < s0 {
                s += PERIMETER;
            }
        }
        let t = (s - s0) / (s1 - s0);
        self.values[i0].iter().zip(&self.values[i1]).map(|(a, b)| a + t * (b - a)).collect()
    }

    /// Homogeneous extension `s g(p / s)` with `s = max(|x|, |y|)`.
    pub fn evaluate(&self, p: Point) -> Vec<f64> {
        let s = p[0].abs().max(p[1].abs());
        if s == 0.0 {
            return vec![0.0; self.n];
        }
        self.at_arclength(boundary_arclength(p)).into_iter().map(|v| s * v).collect()
    }
}

pub type AnalyticMap = Arc<dyn Fn(Point) -> Vec<f64> + Send + Sync>;

/// Source of the boundary datum.
#[derive(Clone)]
pub enum BoundaryData {
    Mixed2d,
    Mixed3d,
    Rank1,
    /// `scale * int_y^x e^{iK}`.
    Explicit { k: Parametrisation, quad_tol: f64 },
    Table(BoundaryTable),
    Analytic(AnalyticMap),
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryData::Mixed2d => f.write_str("Mixed2d"),
            BoundaryData::Mixed3d => f.write_str("Mixed3d"),
            BoundaryData::Rank1 => f.write_str("Rank1"),
            BoundaryData::Explicit { k, quad_tol } => write!(f, "Explicit({k:?}, {quad_tol:e})"),
            BoundaryData::Table(t) => write!(f, "Table({} rows)", t.arclength.len()),
            BoundaryData::Analytic(_) => f.write_str("Analytic"),
        }
    }
}

/// Identity of an experiment: target dimension, boundary datum and scale.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub id: ProblemId,
    pub n: usize,
    pub data: BoundaryData,
    pub scale: f64,
}

impl ProblemSpec {
    /// Built-in experiment by id; `custom` needs [`ProblemSpec::custom_table`] or
    /// [`ProblemSpec::analytic`] instead.
    pub fn builtin(id: ProblemId, quad_tol: f64) -> Result<Self> {
        let (n, data, scale) = match id {
            ProblemId::Mixed2d => (2, BoundaryData::Mixed2d, 1.0),
            ProblemId::Mixed3d => (3, BoundaryData::Mixed3d, 1.0),
            ProblemId::Rank1 => (2, BoundaryData::Rank1, 1.0),
            ProblemId::Triple => (2, BoundaryData::Explicit { k: Parametrisation::Triple, quad_tol }, 0.75),
            ProblemId::Box => (2, BoundaryData::Explicit { k: Parametrisation::Box, quad_tol }, 0.75),
            ProblemId::Custom => return Err(Error::invalid("the custom experiment needs a boundary table")),
        };
        Ok(ProblemSpec { id, n, data, scale })
    }

    /// Box experiment with the continuous variant of `K`.
    pub fn box_smoothed(quad_tol: f64) -> Self {
        ProblemSpec {
            id: ProblemId::Box,
            n: 2,
            data: BoundaryData::Explicit { k: Parametrisation::BoxSmoothed, quad_tol },
            scale: 0.75,
        }
    }

    pub fn custom_table(table: BoundaryTable) -> Self {
        ProblemSpec { id: ProblemId::Custom, n: table.n, data: BoundaryData::Table(table), scale: 1.0 }
    }

    pub fn analytic(n: usize, f: impl Fn(Point) -> Vec<f64> + Send + Sync + 'static) -> Self {
        ProblemSpec { id: ProblemId::Custom, n, data: BoundaryData::Analytic(Arc::new(f)), scale: 1.0 }
    }

    pub fn parametrisation(&self) -> Option<Parametrisation> {
        match self.data {
            BoundaryData::Explicit { k, .. } => Some(k),
            _ => None,
        }
    }

    /// Value of the boundary datum at `(x, y)` in the closed square.
    pub fn boundary_datum(&self, x: f64, y: f64) -> Result<Vec<f64>> {
        let v = match &self.data {
            BoundaryData::Mixed2d => {
                if x >= 0.0 || y <= 0.0 {
                    vec![0.5 * x, 0.5 * y]
                } else {
                    vec![0.25 * (x + y - 1.0), 0.25 * (x + y + 1.0)]
                }
            }
            BoundaryData::Mixed3d => {
                if x >= 0.0 || y <= 0.0 {
                    vec![0.5 * x, 0.5 * y, 0.5 * x]
                } else {
                    vec![0.25 * (x + y - 1.0), 0.25 * (x + y + 1.0), 0.25 * (x + y - 1.0)]
                }
            }
            BoundaryData::Rank1 => {
                if x < 0.0 {
                    vec![x, 0.0]
                } else {
                    vec![0.0, x]
                }
            }
            BoundaryData::Explicit { k, quad_tol } => {
                let u = exact_map(x, y, *k, *quad_tol)?;
                vec![u[0], u[1]]
            }
            BoundaryData::Table(t) => t.evaluate([x, y]),
            BoundaryData::Analytic(f) => f([x, y]),
        };
        Ok(v.into_iter().map(|c| self.scale * c).collect())
    }

    /// Analytic gradient of the datum where one is known (explicit maps only).
    pub fn exact_gradient(&self, x: f64, y: f64) -> Option<[[f64; 2]; 2]> {
        let k = self.parametrisation()?;
        let (kx, ky) = (k.value(x), k.value(y));
        let s = self.scale;
        Some([[s * kx.cos(), -s * ky.cos()], [s * kx.sin(), -s * ky.sin()]])
    }

    /// Analytic `det Du = scale^2 sin(K(x) - K(y))` for explicit maps.
    pub fn exact_det(&self, x: f64, y: f64) -> Option<f64> {
        let k = self.parametrisation()?;
        Some(self.scale * self.scale * (k.value(x) - k.value(y)).sin())
    }
}
