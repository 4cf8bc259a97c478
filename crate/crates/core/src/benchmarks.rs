//! Built-in benchmark systems with closed-form oracles where they exist.
//!
//! | name                 | m | d | dynamics                                    | Q     |
//! |----------------------|---|---|---------------------------------------------|-------|
//! | `lq-scalar`          | 1 | 1 | x' = u                                      | 0     |
//! | `double-integrator`  | 2 | 1 | x1' = x2, x2' = u                           | 0     |
//! | `oscillator-potential` | 1 | 1 | x' = u                                    | x^2   |
//! | `heisenberg`         | 3 | 2 | X1 = dx - y/2 dz, X2 = dy + x/2 dz          | 0     |
//! | `martinet`           | 3 | 2 | X1 = dx, X2 = dy + x^2 dz                   | 0     |
//! | `drifted-heisenberg` | 3 | 2 | heisenberg plus X0 = (-y dx + x dy) / 2     | 0     |
//!
//! `x^2` is not bounded above; the oscillator is only meaningful on its chart
//! and for horizons below the first conjugate time `pi` when minimizing.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::model::{ChartBounds, Control, ControlSystem, Potential, ProblemSpec, VectorField};
use crate::poly::{Monomial, Polynomial};

pub const DEFAULT_INTERVALS: usize = 64;
pub const DEFAULT_SUBSTEPS: usize = 8;

fn poly(m: usize, terms: &[(f64, &[u32])]) -> Polynomial {
    Polynomial::from_terms(
        m,
        terms
            .iter()
            .map(|(c, p)| Monomial {
                coeff: *c,
                powers: p.to_vec(),
            })
            .collect(),
    )
    .expect("builtin polynomial is well formed")
}

fn field(comps: Vec<Polynomial>) -> VectorField {
    VectorField::new(comps).expect("builtin field is well formed")
}

pub fn lq_scalar_system() -> ControlSystem {
    ControlSystem::new(
        VectorField::zero(1),
        vec![VectorField::coordinate(1, 0)],
        Potential::zero(1),
        ChartBounds::cube(1, 10.0),
    )
    .unwrap()
}

pub fn double_integrator_system() -> ControlSystem {
    let drift = field(vec![poly(2, &[(1.0, &[0, 1])]), Polynomial::zero(2)]);
    ControlSystem::new(
        drift,
        vec![VectorField::coordinate(2, 1)],
        Potential::zero(2),
        ChartBounds::cube(2, 20.0),
    )
    .unwrap()
}

pub fn oscillator_system() -> ControlSystem {
    let chart = ChartBounds::cube(1, 10.0);
    ControlSystem::new(
        VectorField::zero(1),
        vec![VectorField::coordinate(1, 0)],
        Potential::new(poly(1, &[(1.0, &[2])]), Some(100.0)),
        chart,
    )
    .unwrap()
}

fn heisenberg_fields() -> Vec<VectorField> {
    let x1 = field(vec![
        Polynomial::constant(3, 1.0),
        Polynomial::zero(3),
        poly(3, &[(-0.5, &[0, 1, 0])]),
    ]);
    let x2 = field(vec![
        Polynomial::zero(3),
        Polynomial::constant(3, 1.0),
        poly(3, &[(0.5, &[1, 0, 0])]),
    ]);
    vec![x1, x2]
}

pub fn heisenberg_system() -> ControlSystem {
    ControlSystem::new(
        VectorField::zero(3),
        heisenberg_fields(),
        Potential::zero(3),
        ChartBounds::cube(3, 10.0),
    )
    .unwrap()
}

pub fn martinet_system() -> ControlSystem {
    let x1 = VectorField::coordinate(3, 0);
    let x2 = field(vec![
        Polynomial::zero(3),
        Polynomial::constant(3, 1.0),
        poly(3, &[(1.0, &[2, 0, 0])]),
    ]);
    ControlSystem::new(
        VectorField::zero(3),
        vec![x1, x2],
        Potential::zero(3),
        ChartBounds::cube(3, 10.0),
    )
    .unwrap()
}

pub fn drifted_heisenberg_system() -> ControlSystem {
    let drift = field(vec![
        poly(3, &[(-0.5, &[0, 1, 0])]),
        poly(3, &[(0.5, &[1, 0, 0])]),
        Polynomial::zero(3),
    ]);
    ControlSystem::new(drift, heisenberg_fields(), Potential::zero(3), ChartBounds::cube(3, 10.0)).unwrap()
}

/// Closed-form data attached to a benchmark.
#[derive(Clone, Copy)]
pub struct Oracles {
    /// Exact value `V(x)` where known.
    pub value: Option<fn(&ProblemSpec, &[f64]) -> Option<f64>>,
    /// Exact optimal control at time `t` where known.
    pub control: Option<fn(&ProblemSpec, &[f64], f64) -> Option<Vec<f64>>>,
    /// Conjugate times along every normal extremal from `x_0`, where these do
    /// not depend on the initial covector.
    pub conjugate_times: Option<fn(&ProblemSpec) -> Vec<f64>>,
    pub notes: &'static str,
}

pub struct Benchmark {
    pub name: &'static str,
    pub description: &'static str,
    factory: fn() -> ProblemSpec,
    pub oracles: Oracles,
    /// Representative targets inside the attainable set.
    pub targets: Vec<Vec<f64>>,
}

impl Benchmark {
    pub fn spec(&self) -> ProblemSpec {
        (self.factory)()
    }
}

impl std::fmt::Debug for Benchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Benchmark").field("name", &self.name).finish()
    }
}

fn make(system: ControlSystem, horizon: f64) -> ProblemSpec {
    let m = system.dim();
    ProblemSpec::new(system, vec![0.0; m], horizon, DEFAULT_INTERVALS, DEFAULT_SUBSTEPS)
        .expect("builtin problem is valid")
}

fn lq_value(spec: &ProblemSpec, x: &[f64]) -> Option<f64> {
    let dx = x[0] - spec.x0[0];
    Some(dx * dx / (2.0 * spec.horizon))
}

fn lq_control(spec: &ProblemSpec, x: &[f64], _t: f64) -> Option<Vec<f64>> {
    Some(vec![(x[0] - spec.x0[0]) / spec.horizon])
}

/// Controllability Gramian `∫_0^T e^{As} B B^T e^{A^T s} ds` of the double integrator.
pub fn double_integrator_gramian(horizon: f64) -> DMatrix<f64> {
    let t = horizon;
    DMatrix::from_row_slice(2, 2, &[t * t * t / 3.0, t * t / 2.0, t * t / 2.0, t])
}

fn di_drift_free_target(spec: &ProblemSpec, x: &[f64]) -> DVector<f64> {
    let t = spec.horizon;
    let free = DVector::from_vec(vec![spec.x0[0] + t * spec.x0[1], spec.x0[1]]);
    DVector::from_column_slice(x) - free
}

fn di_value(spec: &ProblemSpec, x: &[f64]) -> Option<f64> {
    let xi = di_drift_free_target(spec, x);
    let g = double_integrator_gramian(spec.horizon);
    let sol = g.lu().solve(&xi)?;
    Some(0.5 * xi.dot(&sol))
}

fn di_control(spec: &ProblemSpec, x: &[f64], t: f64) -> Option<Vec<f64>> {
    // u(t) = B^T e^{A^T (T - t)} G^{-1} xi
    let xi = di_drift_free_target(spec, x);
    let eta = double_integrator_gramian(spec.horizon).lu().solve(&xi)?;
    Some(vec![(spec.horizon - t) * eta[0] + eta[1]])
}

fn oscillator_value(spec: &ProblemSpec, x: &[f64]) -> Option<f64> {
    // x(t) = p0 sin t from x0 = 0; V = x^2 cot(T) / 2 for T < pi
    let t = spec.horizon;
    (spec.x0[0] == 0.0 && t < PI).then(|| 0.5 * x[0] * x[0] / t.tan())
}

fn oscillator_control(spec: &ProblemSpec, x: &[f64], t: f64) -> Option<Vec<f64>> {
    let big_t = spec.horizon;
    (spec.x0[0] == 0.0 && big_t < PI).then(|| vec![x[0] / big_t.sin() * t.cos()])
}

fn oscillator_conjugate(spec: &ProblemSpec) -> Vec<f64> {
    (1..)
        .map(|k| k as f64 * PI)
        .take_while(|&t| t <= spec.horizon)
        .collect()
}

fn heisenberg_value(spec: &ProblemSpec, x: &[f64]) -> Option<f64> {
    // on the z-axis: squared distance 4 pi |z| (isoperimetric loop)
    (spec.x0.iter().all(|v| *v == 0.0) && x[0] == 0.0 && x[1] == 0.0)
        .then(|| 4.0 * PI * x[2].abs() / (2.0 * spec.horizon))
}

fn martinet_value(spec: &ProblemSpec, x: &[f64]) -> Option<f64> {
    // along the abnormal line x = z = 0 the straight segment is optimal
    (spec.x0.iter().all(|v| *v == 0.0) && x[0] == 0.0 && x[2] == 0.0)
        .then(|| x[1] * x[1] / (2.0 * spec.horizon))
}

/// The abnormal control `u = (0, 1)` of the Martinet benchmark.
pub fn martinet_abnormal_control(spec: &ProblemSpec) -> Control {
    Control::constant(spec.horizon, spec.intervals, &[0.0, 1.0])
}

pub fn all() -> Vec<Benchmark> {
    vec![
        Benchmark {
            name: "lq-scalar",
            description: "x' = u, Q = 0: minimum energy on the line",
            factory: || make(lq_scalar_system(), 1.0),
            oracles: Oracles {
                value: Some(lq_value),
                control: Some(lq_control),
                conjugate_times: Some(|_| Vec::new()),
                notes: "V = (x - x0)^2 / 2T, constant optimal control",
            },
            targets: vec![vec![0.5], vec![-0.8]],
        },
        Benchmark {
            name: "double-integrator",
            description: "x1' = x2, x2' = u, Q = 0",
            factory: || make(double_integrator_system(), 1.0),
            oracles: Oracles {
                value: Some(di_value),
                control: Some(di_control),
                conjugate_times: Some(|_| Vec::new()),
                notes: "V = xi^T G^-1 xi / 2 with the controllability Gramian",
            },
            targets: vec![vec![0.3, 0.5], vec![-0.2, 0.4]],
        },
        Benchmark {
            name: "oscillator-potential",
            description: "x' = u, Q = x^2",
            factory: || make(oscillator_system(), 1.0),
            oracles: Oracles {
                value: Some(oscillator_value),
                control: Some(oscillator_control),
                conjugate_times: Some(oscillator_conjugate),
                notes: "x(t) = p0 sin t, V = x^2 cot(T) / 2, conjugate times k pi",
            },
            targets: vec![vec![0.5], vec![-0.3]],
        },
        Benchmark {
            name: "heisenberg",
            description: "sub-Riemannian Heisenberg group",
            factory: || make(heisenberg_system(), 1.0),
            oracles: Oracles {
                value: Some(heisenberg_value),
                control: None,
                conjugate_times: None,
                notes: "V(0,0,z) = 4 pi |z| / 2T",
            },
            targets: vec![vec![0.3, 0.2, 0.1], vec![0.0, 0.0, 0.1]],
        },
        Benchmark {
            name: "martinet",
            description: "flat Martinet distribution, abnormal line along the y axis",
            factory: || make(martinet_system(), 1.0),
            oracles: Oracles {
                value: Some(martinet_value),
                control: None,
                conjugate_times: None,
                notes: "u = (0, 1) is abnormal with rank dE = 2",
            },
            targets: vec![vec![0.3, 0.5, 0.05], vec![0.0, 1.0, 0.0]],
        },
        Benchmark {
            name: "drifted-heisenberg",
            description: "Heisenberg with rotational drift",
            factory: || make(drifted_heisenberg_system(), 1.0),
            oracles: Oracles {
                value: None,
                control: None,
                conjugate_times: None,
                notes: "no closed form",
            },
            targets: vec![vec![0.4, 0.2, 0.05]],
        },
    ]
}

pub fn by_name(name: &str) -> Option<Benchmark> {
    all().into_iter().find(|b| b.name == name)
}

pub fn names() -> Vec<&'static str> {
    all().iter().map(|b| b.name).collect()
}

/// Same problem with `Q` replaced by `Q + c`.
pub fn with_constant_potential(spec: &ProblemSpec, c: f64) -> ProblemSpec {
    let mut out = spec.clone();
    let m = spec.dim();
    let q = &Polynomial::constant(m, c) + spec.system.potential.polynomial();
    let hint = spec.system.potential.upper_bound_hint.map(|h| h + c);
    out.system.potential = Potential::new(q, hint);
    out
}

/// `x' = u` with `Q(x) = x`, used to check the cost differential by hand.
pub fn scalar_with_linear_potential(horizon: f64, intervals: usize, substeps: usize) -> ProblemSpec {
    let sys = ControlSystem::new(
        VectorField::zero(1),
        vec![VectorField::coordinate(1, 0)],
        Potential::new(poly(1, &[(1.0, &[1])]), None),
        ChartBounds::cube(1, 10.0),
    )
    .unwrap();
    ProblemSpec::new(sys, vec![0.0], horizon, intervals, substeps).unwrap()
}
