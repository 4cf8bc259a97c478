//! TOML run configuration.
//!
//! ```toml
//! system = "heisenberg"      # builtin name, or a [system] table (below)
//! x0 = [0.0, 0.0, 0.0]       # optional overrides of the builtin data
//! T = 1.0
//! N = 64
//! substeps = 8
//! target = [0.0, 0.0, 0.1]
//!
//! [chart_bounds]
//! lower = [-5.0, -5.0, -5.0]
//! upper = [5.0, 5.0, 5.0]
//!
//! [solve]                    # any SolveOptions field
//! multistart_count = 16
//!
//! [sweep]
//! axes = [{ coord = 2, lo = 0.05, hi = 0.5, n = 10 }]
//! ```
//!
//! A polynomial system lists each field component as rows
//! `[coeff, e_1, ..., e_m]` for the monomial `coeff * x_1^e_1 ... x_m^e_m`:
//!
//! ```toml
//! [system]
//! dim = 3
//! drift = [[], [], []]
//! controls = [
//!   [[[1.0, 0, 0, 0]], [], []],
//!   [[], [[1.0, 0, 0, 0]], [[1.0, 2, 0, 0]]],
//! ]
//! potential = [[0.5, 1, 0, 0]]
//! potential_upper_bound = 10.0
//! ```

use serde::Deserialize;

use crate::benchmarks;
use crate::direct::SolveOptions;
use crate::error::{Error, Result};
use crate::model::{ChartBounds, Control, ControlSystem, Potential, ProblemSpec, VectorField};
use crate::poly::{Monomial, Polynomial};
use crate::sweep::{Axis, GridSpec, SweepOptions, WarmOrder};

/// Highest total degree accepted in polynomial tables.
pub const MAX_DEGREE: u32 = 4;
/// Half-width of the default chart for polynomial systems.
pub const DEFAULT_CHART: f64 = 100.0;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: toml::Value,
    pub x0: Option<Vec<f64>>,
    #[serde(rename = "T")]
    pub horizon: Option<f64>,
    #[serde(rename = "N")]
    pub intervals: Option<usize>,
    pub substeps: Option<usize>,
    pub chart_bounds: Option<ChartConfig>,
    pub target: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub solve: Option<SolveOptions>,
    pub sweep: Option<SweepConfig>,
    pub shoot: Option<ShootConfig>,
    pub control: Option<ControlConfig>,
    pub hormander: Option<HormanderConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemTable {
    dim: usize,
    drift: Option<Vec<Vec<Vec<f64>>>>,
    controls: Vec<Vec<Vec<Vec<f64>>>>,
    potential: Option<Vec<Vec<f64>>>,
    potential_upper_bound: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axes: Vec<Axis>,
    /// Values of the inactive coordinates; defaults to `x0`.
    pub fixed: Option<Vec<f64>>,
    #[serde(default)]
    pub classify: bool,
    #[serde(default)]
    pub order: WarmOrder,
    /// Re-solve lower-semicontinuity candidates at doubled resolution.
    #[serde(default = "yes")]
    pub confirm_lsc: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShootConfig {
    /// Initial covector guess; defaults to zero.
    pub p0: Option<Vec<f64>>,
}

/// Open-loop control for `simulate`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    /// The same value on every interval.
    pub constant: Option<Vec<f64>>,
    /// Interval-major values, `N * d` of them.
    pub values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HormanderConfig {
    /// Evaluation point; defaults to `x0`.
    pub point: Option<Vec<f64>>,
    pub depth: Option<usize>,
}

fn config_error(path: String, message: String) -> Error {
    let key = if path.is_empty() || path == "." { "config".to_string() } else { path };
    Error::Config { key, message }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_error(String::new(), e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(path, e.into_inner().message().trim().to_string())
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Builds the problem, applying overrides to builtin data.
    pub fn problem(&self) -> Result<ProblemSpec> {
        let base = match &self.system {
            toml::Value::String(name) => benchmarks::by_name(name)
                .ok_or_else(|| {
                    Error::config(
                        "system",
                        format!("unknown builtin `{name}`; known: {}", benchmarks::names().join(", ")),
                    )
                })?
                .spec(),
            toml::Value::Table(t) => {
                let table: SystemTable = serde_path_to_error::deserialize(t.clone()).map_err(|e| {
                    let path = format!("system.{}", e.path());
                    config_error(path, e.into_inner().message().trim().to_string())
                })?;
                let sys = polynomial_system(&table)?;
                let m = sys.dim();
                ProblemSpec {
                    system: sys,
                    x0: vec![0.0; m],
                    horizon: 1.0,
                    intervals: benchmarks::DEFAULT_INTERVALS,
                    substeps: benchmarks::DEFAULT_SUBSTEPS,
                }
            }
            _ => return Err(Error::config("system", "expected a builtin name or a table")),
        };
        let mut system = base.system;
        if let Some(c) = &self.chart_bounds {
            if c.lower.len() != system.dim() || c.upper.len() != system.dim() {
                return Err(Error::config("chart_bounds", "bounds must have the state dimension"));
            }
            system.chart =
                ChartBounds::new(c.lower.clone(), c.upper.clone()).map_err(|e| Error::config("chart_bounds", e.to_string()))?;
        }
        let x0 = self.x0.clone().unwrap_or(base.x0);
        let horizon = self.horizon.unwrap_or(base.horizon);
        let intervals = self.intervals.unwrap_or(base.intervals);
        let substeps = self.substeps.unwrap_or(base.substeps);
        let key = if self.x0.is_some() { "x0" } else { "T" };
        ProblemSpec::new(system, x0, horizon, intervals, substeps).map_err(|e| match e {
            Error::Shape(msg) => Error::config("x0", msg),
            Error::InvalidModel(msg) if msg.contains("x0") => Error::config("x0", msg),
            Error::InvalidModel(msg) => Error::config(key, msg),
            other => other,
        })
    }

    pub fn solve_options(&self, seed_override: Option<u64>) -> Result<SolveOptions> {
        let mut o = self.solve.clone().unwrap_or_default();
        if let Some(s) = seed_override.or(self.seed) {
            o.seed = s;
        }
        o.validate().map_err(|e| match e {
            Error::Config { message, .. } => Error::config("solve", message),
            other => other,
        })?;
        Ok(o)
    }

    pub fn target(&self, spec: &ProblemSpec) -> Result<Vec<f64>> {
        let t = self.target.clone().ok_or_else(|| Error::config("target", "missing"))?;
        if t.len() != spec.dim() {
            return Err(Error::config("target", "length must equal the state dimension"));
        }
        if !spec.system.chart.contains(&t) {
            return Err(Error::config("target", "outside the chart bounds"));
        }
        Ok(t)
    }

    pub fn grid(&self, spec: &ProblemSpec) -> Result<(GridSpec, SweepOptions, bool)> {
        let s = self.sweep.as_ref().ok_or_else(|| Error::config("sweep", "missing"))?;
        let fixed = s.fixed.clone().unwrap_or_else(|| spec.x0.clone());
        if fixed.len() != spec.dim() {
            return Err(Error::config("sweep.fixed", "length must equal the state dimension"));
        }
        let grid = GridSpec::new(s.axes.clone(), fixed).map_err(|e| match e {
            Error::Config { key, message } => Error::config(key.replacen("grid", "sweep", 1), message),
            other => other,
        })?;
        let defaults = SweepOptions::default();
        let solve = match &self.solve {
            Some(_) => self.solve_options(None)?,
            None => SolveOptions {
                seed: self.seed.unwrap_or(0),
                ..defaults.solve
            },
        };
        Ok((
            grid,
            SweepOptions {
                solve,
                classify: s.classify,
                order: s.order,
            },
            s.confirm_lsc,
        ))
    }

    pub fn open_loop_control(&self, spec: &ProblemSpec) -> Result<Control> {
        let Some(c) = &self.control else {
            return Ok(spec.zero_control());
        };
        match (&c.constant, &c.values) {
            (Some(v), None) => {
                if v.len() != spec.channels() {
                    return Err(Error::config("control.constant", "length must equal the channel count"));
                }
                Ok(Control::constant(spec.horizon, spec.intervals, v))
            }
            (None, Some(vals)) => Control::new(spec.horizon, spec.intervals, spec.channels(), vals.clone())
                .map_err(|e| Error::config("control.values", e.to_string())),
            (None, None) => Ok(spec.zero_control()),
            (Some(_), Some(_)) => Err(Error::config("control", "give either `constant` or `values`")),
        }
    }
}

fn polynomial(nvars: usize, rows: &[Vec<f64>], key: &str) -> Result<Polynomial> {
    let mut terms = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        if row.len() != nvars + 1 {
            return Err(Error::config(
                format!("{key}[{r}]"),
                format!("expected [coeff, {nvars} exponents], got {} entries", row.len()),
            ));
        }
        let mut powers = Vec::with_capacity(nvars);
        for &e in &row[1..] {
            if !(e >= 0.0 && e.fract() == 0.0) {
                return Err(Error::config(format!("{key}[{r}]"), "exponents must be nonnegative integers"));
            }
            powers.push(e as u32);
        }
        if powers.iter().sum::<u32>() > MAX_DEGREE {
            return Err(Error::config(format!("{key}[{r}]"), format!("degree exceeds {MAX_DEGREE}")));
        }
        terms.push(Monomial { coeff: row[0], powers });
    }
    Polynomial::from_terms(nvars, terms).map_err(|e| Error::config(key, e.to_string()))
}

fn field(m: usize, comps: &[Vec<Vec<f64>>], key: &str) -> Result<VectorField> {
    if comps.len() != m {
        return Err(Error::config(key, format!("expected {m} components, got {}", comps.len())));
    }
    let polys = comps
        .iter()
        .enumerate()
        .map(|(i, rows)| polynomial(m, rows, &format!("{key}[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    VectorField::new(polys).map_err(|e| Error::config(key, e.to_string()))
}

fn polynomial_system(t: &SystemTable) -> Result<ControlSystem> {
    let m = t.dim;
    if m == 0 {
        return Err(Error::config("system.dim", "must be positive"));
    }
    let drift = match &t.drift {
        Some(d) => field(m, d, "system.drift")?,
        None => VectorField::zero(m),
    };
    if t.controls.is_empty() {
        return Err(Error::config("system.controls", "at least one control field required"));
    }
    let controls = t
        .controls
        .iter()
        .enumerate()
        .map(|(i, c)| field(m, c, &format!("system.controls[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let potential = match &t.potential {
        Some(rows) => Potential::new(polynomial(m, rows, "system.potential")?, t.potential_upper_bound),
        None => Potential::zero(m),
    };
    ControlSystem::new(drift, controls, potential, ChartBounds::cube(m, DEFAULT_CHART))
        .map_err(|e| Error::config("system", e.to_string()))
}
