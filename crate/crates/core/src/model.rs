//! Control systems, discretized controls and structural diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::poly::Polynomial;

/// Default cap on bracket depth for the weak Hörmander rank.
pub const DEFAULT_BRACKET_DEPTH: usize = 4;

/// Polynomial vector field on a single chart, with derivatives precomputed.
#[derive(Clone, Debug)]
pub struct VectorField {
    components: Vec<Polynomial>,
    // row-major: jac[k * m + j] = d X^k / d x_j
    jac: Vec<Polynomial>,
    // hess[(k * m + a) * m + b] = d^2 X^k / d x_a d x_b
    hess: Vec<Polynomial>,
}

impl VectorField {
    pub fn new(components: Vec<Polynomial>) -> Result<Self> {
        let m = components.len();
        if m == 0 {
            return Err(Error::InvalidModel("vector field with zero components".into()));
        }
        if let Some(c) = components.iter().find(|c| c.nvars() != m) {
            return Err(Error::Shape(format!(
                "component has {} variables, field dimension is {m}",
                c.nvars()
            )));
        }
        let jac: Vec<Polynomial> = components
            .iter()
            .flat_map(|c| (0..m).map(move |j| c.partial(j)))
            .collect();
        let hess = jac
            .iter()
            .flat_map(|d| (0..m).map(move |b| d.partial(b)))
            .collect();
        Ok(VectorField {
            components,
            jac,
            hess,
        })
    }

    pub fn zero(m: usize) -> Self {
        Self::new(vec![Polynomial::zero(m); m]).expect("zero field is valid")
    }

    /// Constant field `e_i`.
    pub fn coordinate(m: usize, i: usize) -> Self {
        let mut comps = vec![Polynomial::zero(m); m];
        comps[i] = Polynomial::constant(m, 1.0);
        Self::new(comps).expect("coordinate field is valid")
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Polynomial::is_zero)
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x);
        }
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(x, out.as_mut_slice());
        out
    }

    /// Row-major Jacobian into `out` (length m*m).
    #[inline]
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.jac) {
            *o = c.eval(x);
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        let mut buf = vec![0.0; m * m];
        self.jacobian_into(x, &mut buf);
        DMatrix::from_row_slice(m, m, &buf)
    }

    /// Hessian of the `k`-th component.
    pub fn component_hessian(&self, k: usize, x: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(m, m, |a, b| self.hess[(k * m + a) * m + b].eval(x))
    }

    /// Symbolic bracket `[self, other] = D(other) self - D(self) other`.
    pub fn bracket(&self, other: &VectorField) -> VectorField {
        let m = self.dim();
        assert_eq!(m, other.dim());
        let comps = (0..m)
            .map(|k| {
                let mut acc = Polynomial::zero(m);
                for j in 0..m {
                    acc = &acc + &(&other.jac[k * m + j] * &self.components[j]);
                    acc = &acc - &(&self.jac[k * m + j] * &other.components[j]);
                }
                acc
            })
            .collect();
        VectorField::new(comps).expect("bracket of valid fields is valid")
    }
}

/// Potential `Q` with exact gradient and Hessian.
#[derive(Clone, Debug)]
pub struct Potential {
    poly: Polynomial,
    grad: Vec<Polynomial>,
    hess: Vec<Polynomial>,
    pub upper_bound_hint: Option<f64>,
}

impl Potential {
    pub fn new(poly: Polynomial, upper_bound_hint: Option<f64>) -> Self {
        let m = poly.nvars();
        let grad: Vec<Polynomial> = (0..m).map(|j| poly.partial(j)).collect();
        let hess = grad
            .iter()
            .flat_map(|g| (0..m).map(move |b| g.partial(b)))
            .collect();
        Potential {
            poly,
            grad,
            hess,
            upper_bound_hint,
        }
    }

    pub fn zero(m: usize) -> Self {
        Self::new(Polynomial::zero(m), Some(0.0))
    }

    pub fn dim(&self) -> usize {
        self.poly.nvars()
    }

    pub fn polynomial(&self) -> &Polynomial {
        &self.poly
    }

    pub fn is_zero(&self) -> bool {
        self.poly.is_zero()
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.poly.eval(x)
    }

    #[inline]
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.grad) {
            *o = g.eval(x);
        }
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.gradient_into(x, out.as_mut_slice());
        out
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(m, m, |a, b| self.hess[a * m + b].eval(x))
    }
}

/// Axis-aligned box in which numerics are trusted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ChartBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape("chart bounds have different lengths".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidModel("chart bounds are empty".into()));
        }
        Ok(ChartBounds { lower, upper })
    }

    pub fn cube(m: usize, half_width: f64) -> Self {
        ChartBounds {
            lower: vec![-half_width; m],
            upper: vec![half_width; m],
        }
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }
}

/// The tuple `(X_0, X_1, ..., X_d, Q)` on a chart of dimension `m`.
#[derive(Clone, Debug)]
pub struct ControlSystem {
    pub drift: VectorField,
    pub controls: Vec<VectorField>,
    pub potential: Potential,
    pub chart: ChartBounds,
}

impl ControlSystem {
    pub fn new(
        drift: VectorField,
        controls: Vec<VectorField>,
        potential: Potential,
        chart: ChartBounds,
    ) -> Result<Self> {
        let m = drift.dim();
        if controls.is_empty() {
            return Err(Error::InvalidModel("at least one control field is required".into()));
        }
        if controls.iter().any(|c| c.dim() != m) || potential.dim() != m {
            return Err(Error::Shape(format!("all fields must have dimension {m}")));
        }
        if chart.lower.len() != m {
            return Err(Error::Shape(format!(
                "chart bounds have dimension {}, expected {m}",
                chart.lower.len()
            )));
        }
        Ok(ControlSystem {
            drift,
            controls,
            potential,
            chart,
        })
    }

    /// State dimension `m`.
    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    /// Number of control channels `d`.
    pub fn channels(&self) -> usize {
        self.controls.len()
    }

    /// `f(x, u) = X_0(x) + sum_i u_i X_i(x)`; `tmp` has length m.
    #[inline]
    pub(crate) fn rhs_into(&self, x: &[f64], u: &[f64], out: &mut [f64], tmp: &mut [f64]) {
        self.drift.eval_into(x, out);
        for (field, &ui) in self.controls.iter().zip(u) {
            if ui != 0.0 {
                field.eval_into(x, tmp);
                for (o, t) in out.iter_mut().zip(tmp.iter()) {
                    *o += ui * t;
                }
            }
        }
    }

    /// Row-major `A(x, u) = DX_0(x) + sum_i u_i DX_i(x)`; `tmp` has length m*m.
    #[inline]
    pub(crate) fn state_jacobian_into(&self, x: &[f64], u: &[f64], out: &mut [f64], tmp: &mut [f64]) {
        self.drift.jacobian_into(x, out);
        for (field, &ui) in self.controls.iter().zip(u) {
            if ui != 0.0 {
                field.jacobian_into(x, tmp);
                for (o, t) in out.iter_mut().zip(tmp.iter()) {
                    *o += ui * t;
                }
            }
        }
    }

    pub fn rhs(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        let m = self.dim();
        let mut out = DVector::zeros(m);
        let mut tmp = vec![0.0; m];
        self.rhs_into(x, u, out.as_mut_slice(), &mut tmp);
        out
    }

    pub fn state_jacobian(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        let mut out = vec![0.0; m * m];
        let mut tmp = vec![0.0; m * m];
        self.state_jacobian_into(x, u, &mut out, &mut tmp);
        DMatrix::from_row_slice(m, m, &out)
    }

    /// Samples `Q` on a regular grid of the chart and returns a warning when
    /// it exceeds `upper_bound_hint`. Boundedness of `Q` from above is only
    /// checked on the working chart.
    pub fn potential_bound_warning(&self, per_axis: usize) -> Option<String> {
        let hint = self.potential.upper_bound_hint?;
        let m = self.dim();
        let per_axis = per_axis.max(2);
        let total = per_axis.checked_pow(m as u32)?;
        let mut worst = f64::NEG_INFINITY;
        let mut x = vec![0.0; m];
        for flat in 0..total {
            let mut r = flat;
            for (j, xj) in x.iter_mut().enumerate() {
                let k = r % per_axis;
                r /= per_axis;
                let (lo, hi) = (self.chart.lower[j], self.chart.upper[j]);
                *xj = lo + (hi - lo) * k as f64 / (per_axis - 1) as f64;
            }
            worst = worst.max(self.potential.eval(&x));
        }
        (worst > hint).then(|| {
            format!("potential reaches {worst} on the chart, above the declared bound {hint}")
        })
    }
}

/// Piecewise-constant representative of an L^2 control on `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub horizon: f64,
    pub intervals: usize,
    pub channels: usize,
    /// Interval-major: `values[k * channels + i]` is channel `i` on interval `k`.
    pub values: Vec<f64>,
}

impl Control {
    pub fn new(horizon: f64, intervals: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if !(horizon > 0.0) || intervals == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "invalid control grid T={horizon}, N={intervals}, d={channels}"
            )));
        }
        if values.len() != intervals * channels {
            return Err(Error::Shape(format!(
                "control has {} values, expected {}",
                values.len(),
                intervals * channels
            )));
        }
        Ok(Control {
            horizon,
            intervals,
            channels,
            values,
        })
    }

    pub fn zeros(horizon: f64, intervals: usize, channels: usize) -> Self {
        Self::constant(horizon, intervals, &vec![0.0; channels])
    }

    pub fn constant(horizon: f64, intervals: usize, value: &[f64]) -> Self {
        let values = (0..intervals).flat_map(|_| value.iter().copied()).collect();
        Control::new(horizon, intervals, value.len(), values).expect("valid constant control")
    }

    /// Samples `f(t)` at interval midpoints.
    pub fn from_fn(
        horizon: f64,
        intervals: usize,
        channels: usize,
        f: impl Fn(f64) -> Vec<f64>,
    ) -> Self {
        let h = horizon / intervals as f64;
        let mut values = Vec::with_capacity(intervals * channels);
        for k in 0..intervals {
            let v = f((k as f64 + 0.5) * h);
            assert_eq!(v.len(), channels);
            values.extend(v);
        }
        Control::new(horizon, intervals, channels, values).expect("valid sampled control")
    }

    /// Width of one control interval.
    pub fn step(&self) -> f64 {
        self.horizon / self.intervals as f64
    }

    #[inline]
    pub fn interval(&self, k: usize) -> &[f64] {
        &self.values[k * self.channels..(k + 1) * self.channels]
    }

    pub fn same_grid(&self, other: &Control) -> bool {
        self.horizon == other.horizon
            && self.intervals == other.intervals
            && self.channels == other.channels
    }

    pub fn norm_squared(&self) -> f64 {
        self.step() * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Embeds the control into a grid `factor` times finer (same function).
    pub fn refine(&self, factor: usize) -> Control {
        let mut values = Vec::with_capacity(self.values.len() * factor);
        for k in 0..self.intervals {
            for _ in 0..factor {
                values.extend_from_slice(self.interval(k));
            }
        }
        Control::new(self.horizon, self.intervals * factor, self.channels, values)
            .expect("refined control is valid")
    }

    /// L^2 projection onto a grid with `intervals` cells (exact when the
    /// target grid is a refinement or coarsening by an integer factor).
    pub fn resample(&self, intervals: usize) -> Control {
        if intervals == self.intervals {
            return self.clone();
        }
        if intervals % self.intervals == 0 {
            return self.refine(intervals / self.intervals);
        }
        let d = self.channels;
        let mut values = vec![0.0; intervals * d];
        // overlap-weighted averages
        for k in 0..intervals {
            let (a, b) = (k as f64 / intervals as f64, (k + 1) as f64 / intervals as f64);
            for j in 0..self.intervals {
                let (c, e) = (j as f64 / self.intervals as f64, (j + 1) as f64 / self.intervals as f64);
                let w = (b.min(e) - a.max(c)).max(0.0) * intervals as f64;
                if w > 0.0 {
                    for i in 0..d {
                        values[k * d + i] += w * self.values[j * d + i];
                    }
                }
            }
        }
        Control::new(self.horizon, intervals, d, values).expect("resampled control is valid")
    }

    pub fn axpy(&self, alpha: f64, other: &Control) -> Control {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Control {
            values,
            ..self.clone()
        }
    }
}

/// `∫_0^T <u(t), v(t)> dt`, exact for piecewise-constant controls.
pub fn l2_inner(u: &Control, v: &Control) -> Result<f64> {
    if !u.same_grid(v) {
        return Err(Error::Shape("controls live on different grids".into()));
    }
    Ok(u.step() * u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum::<f64>())
}

pub fn l2_distance(u: &Control, v: &Control) -> Result<f64> {
    let diff = u.axpy(-1.0, v);
    if !u.same_grid(v) {
        return Err(Error::Shape("controls live on different grids".into()));
    }
    Ok(diff.norm())
}

/// Fixed optimal control problem data: system, `x_0`, horizon and grids.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub system: ControlSystem,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub intervals: usize,
    pub substeps: usize,
}

impl ProblemSpec {
    pub fn new(
        system: ControlSystem,
        x0: Vec<f64>,
        horizon: f64,
        intervals: usize,
        substeps: usize,
    ) -> Result<Self> {
        if x0.len() != system.dim() {
            return Err(Error::Shape(format!(
                "x0 has length {}, system dimension is {}",
                x0.len(),
                system.dim()
            )));
        }
        if !system.chart.contains(&x0) {
            return Err(Error::InvalidModel("x0 lies outside the chart bounds".into()));
        }
        if !(horizon > 0.0) || intervals == 0 || substeps == 0 {
            return Err(Error::InvalidModel(format!(
                "invalid grid T={horizon}, N={intervals}, substeps={substeps}"
            )));
        }
        if let Some(w) = system.potential_bound_warning(9) {
            log::warn!("{w}");
        }
        Ok(ProblemSpec {
            system,
            x0,
            horizon,
            intervals,
            substeps,
        })
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn channels(&self) -> usize {
        self.system.channels()
    }

    pub fn with_intervals(&self, intervals: usize) -> Self {
        ProblemSpec {
            intervals,
            ..self.clone()
        }
    }

    pub fn with_horizon(&self, horizon: f64) -> Self {
        ProblemSpec {
            horizon,
            ..self.clone()
        }
    }

    pub fn zero_control(&self) -> Control {
        Control::zeros(self.horizon, self.intervals, self.channels())
    }

    pub(crate) fn check_control(&self, u: &Control) -> Result<()> {
        if u.intervals != self.intervals
            || u.channels != self.channels()
            || (u.horizon - self.horizon).abs() > 1e-12 * self.horizon
        {
            return Err(Error::Shape(format!(
                "control grid (T={}, N={}, d={}) does not match problem (T={}, N={}, d={})",
                u.horizon,
                u.intervals,
                u.channels,
                self.horizon,
                self.intervals,
                self.channels()
            )));
        }
        Ok(())
    }
}

/// `[X, Y](x) = DY(x) X(x) - DX(x) Y(x)` evaluated at a point.
pub fn lie_bracket(x_field: &VectorField, y_field: &VectorField, x: &[f64]) -> Result<DVector<f64>> {
    let m = x_field.dim();
    if y_field.dim() != m || x.len() != m {
        return Err(Error::Shape("bracket operands have mismatched dimensions".into()));
    }
    let xv = x_field.eval(x);
    let yv = y_field.eval(x);
    Ok(y_field.jacobian(x) * xv - x_field.jacobian(x) * yv)
}

/// Rank of the bracket family generated by the control fields at `x`.
///
/// Level 0 holds `X_1..X_d`; level `k` holds `[Z, Y]` for `Y` at level `k-1`
/// and `Z` among `X_0..X_d`. These left-normed brackets span the Lie ideal
/// generated by `{(ad X_0)^j X_i}`. The result is "rank at depth k", never a
/// verdict on the unbounded condition.
pub fn weak_hormander_rank(sys: &ControlSystem, x: &[f64], depth: usize) -> usize {
    let m = sys.dim();
    let mut level: Vec<VectorField> = sys.controls.iter().filter(|f| !f.is_zero()).cloned().collect();
    let mut columns: Vec<DVector<f64>> = level.iter().map(|f| f.eval(x)).collect();
    let gens: Vec<&VectorField> = std::iter::once(&sys.drift).chain(sys.controls.iter()).collect();
    for _ in 0..depth {
        if current_rank(&columns, m) == m {
            break;
        }
        let mut next = Vec::new();
        for y in &level {
            for z in &gens {
                let b = z.bracket(y);
                if !b.is_zero() {
                    columns.push(b.eval(x));
                    next.push(b);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        level = next;
    }
    current_rank(&columns, m)
}

fn current_rank(columns: &[DVector<f64>], m: usize) -> usize {
    if columns.is_empty() {
        return 0;
    }
    let mat = DMatrix::from_fn(m, columns.len(), |r, c| columns[c][r]);
    linalg::numerical_rank(&linalg::singular_values(&mat))
}
