//! Fixed-step RK4 integration of admissible trajectories, the variational
//! flow, and the discrete adjoint sweep used for every differential.
//!
//! All integrations on a problem grid use `N * substeps` equal steps, so the
//! time nodes are shared by every control on the same grid.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Control, ControlSystem, ProblemSpec};

/// Any component beyond this magnitude counts as divergence.
pub const BLOWUP_THRESHOLD: f64 = 1e8;

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub control_ref: Option<Control>,
    /// Set when the state left the chart or became non-finite; `times` and
    /// `states` then stop at the last good node.
    pub blowup_flag: bool,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one node")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = self.states.first().map_or(0, Vec::len);
        write!(w, "t")?;
        for j in 1..=m {
            write!(w, ",x{j}")?;
        }
        writeln!(w)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(w, "{}", fmt_num(*t))?;
            for v in x {
                write!(w, ",{}", fmt_num(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// CSV number format: 17 significant digits, `inf` for infinities.
pub fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

/// Fundamental matrices `M(0, t_k)` of the linearized flow along a trajectory.
#[derive(Clone, Debug)]
pub struct VariationalFlow {
    pub base: Trajectory,
    pub fundamental: Vec<DMatrix<f64>>,
}

impl VariationalFlow {
    /// Index of the stored node at time `t`, if any.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let times = &self.base.times;
        let last = *times.last()?;
        let tol = 1e-9 * last.max(1.0);
        let h = if times.len() > 1 { last / (times.len() - 1) as f64 } else { 1.0 };
        let k = (t / h).round();
        if k < 0.0 || k as usize >= times.len() {
            return None;
        }
        let k = k as usize;
        ((times[k] - t).abs() <= tol).then_some(k)
    }

    /// `M(0, t_j) M(0, t_i)^{-1}`, the pushforward from node `i` to node `j`.
    pub fn pushforward_nodes(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        if i >= self.fundamental.len() || j >= self.fundamental.len() {
            return Err(Error::Shape(format!("node index out of range ({i}, {j})")));
        }
        if i == j {
            let m = self.fundamental[i].nrows();
            return Ok(DMatrix::identity(m, m));
        }
        let ms = &self.fundamental[i];
        let lu = ms.clone().full_piv_lu();
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Degenerate(format!("fundamental matrix singular at node {i}")))?;
        let cond = ms.norm() * inv.norm();
        if !cond.is_finite() || cond > 1e14 {
            return Err(Error::Degenerate(format!(
                "fundamental matrix ill-conditioned at node {i} (cond {cond:e})"
            )));
        }
        Ok(&self.fundamental[j] * inv)
    }

    pub fn pushforward(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        let i = self
            .node_index(s)
            .ok_or_else(|| Error::Shape(format!("time {s} is not a stored node")))?;
        let j = self
            .node_index(t)
            .ok_or_else(|| Error::Shape(format!("time {t} is not a stored node")))?;
        self.pushforward_nodes(i, j)
    }

    /// Adjoint action: the covector `p^T P_{s,t}` at time `s`.
    pub fn pullback_covector(&self, s: f64, t: f64, p: &DVector<f64>) -> Result<DVector<f64>> {
        let pf = self.pushforward(s, t)?;
        if p.len() != pf.nrows() {
            return Err(Error::Shape("covector length does not match state dimension".into()));
        }
        Ok(pf.transpose() * p)
    }
}

/// Integrates the system under a piecewise-constant control on the problem grid.
pub fn integrate(spec: &ProblemSpec, u: &Control) -> Result<Trajectory> {
    spec.check_control(u)?;
    let fwd = forward(spec, u, false);
    Ok(fwd.to_trajectory(u))
}

/// Integrates the state together with `M(0, t)` using the same RK4 stages.
pub fn variational_flow(spec: &ProblemSpec, u: &Control) -> Result<VariationalFlow> {
    spec.check_control(u)?;
    let sys = &spec.system;
    let m = spec.dim();
    let steps = spec.intervals * spec.substeps;
    let h = spec.horizon / steps as f64;
    let mut x = DVector::from_column_slice(&spec.x0);
    let mut mat = DMatrix::identity(m, m);
    let mut times = vec![0.0];
    let mut states = vec![spec.x0.clone()];
    let mut fundamental = vec![mat.clone()];
    let mut blowup = false;
    for n in 0..steps {
        let uk = u.interval(n / spec.substeps);
        let f = |y: &DVector<f64>| sys.rhs(y.as_slice(), uk);
        let a = |y: &DVector<f64>| sys.state_jacobian(y.as_slice(), uk);
        let k1 = f(&x);
        let m1 = a(&x) * &mat;
        let y2 = &x + &k1 * (h / 2.0);
        let k2 = f(&y2);
        let m2 = a(&y2) * (&mat + &m1 * (h / 2.0));
        let y3 = &x + &k2 * (h / 2.0);
        let k3 = f(&y3);
        let m3 = a(&y3) * (&mat + &m2 * (h / 2.0));
        let y4 = &x + &k3 * h;
        let k4 = f(&y4);
        let m4 = a(&y4) * (&mat + &m3 * h);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        mat += (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (h / 6.0);
        if !state_ok(sys, x.as_slice()) || mat.iter().any(|v| !v.is_finite()) {
            blowup = true;
            break;
        }
        times.push((n + 1) as f64 * h);
        states.push(x.as_slice().to_vec());
        fundamental.push(mat.clone());
    }
    Ok(VariationalFlow {
        base: Trajectory {
            times,
            states,
            control_ref: Some(u.clone()),
            blowup_flag: blowup,
        },
        fundamental,
    })
}

/// RK4 under a time-dependent control `u(t)` sampled at stage times, for
/// open-loop replays of smooth controls.
pub fn integrate_with(
    sys: &ControlSystem,
    x0: &[f64],
    horizon: f64,
    steps: usize,
    control: impl Fn(f64) -> Vec<f64>,
) -> Trajectory {
    let m = sys.dim();
    let h = horizon / steps as f64;
    let mut x = x0.to_vec();
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut tmp = vec![0.0; m];
    let mut k = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    let mut y = vec![0.0; m];
    let mut blowup = false;
    for n in 0..steps {
        let t = n as f64 * h;
        let (u1, u2, u4) = (control(t), control(t + h / 2.0), control(t + h));
        sys.rhs_into(&x, &u1, &mut k[0], &mut tmp);
        axpy_into(&x, h / 2.0, &k[0], &mut y);
        sys.rhs_into(&y, &u2, &mut k[1], &mut tmp);
        axpy_into(&x, h / 2.0, &k[1], &mut y);
        sys.rhs_into(&y, &u2, &mut k[2], &mut tmp);
        axpy_into(&x, h, &k[2], &mut y);
        sys.rhs_into(&y, &u4, &mut k[3], &mut tmp);
        for j in 0..m {
            x[j] += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
        }
        if !state_ok(sys, &x) {
            blowup = true;
            break;
        }
        times.push(t + h);
        states.push(x.clone());
    }
    Trajectory {
        times,
        states,
        control_ref: None,
        blowup_flag: blowup,
    }
}

#[inline]
fn axpy_into(x: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
        *o = xi + a * ki;
    }
}

#[inline]
pub(crate) fn state_ok(sys: &ControlSystem, x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite() && v.abs() <= BLOWUP_THRESHOLD) && sys.chart.contains(x)
}

/// Result of a forward pass on the problem grid with the running cost
/// `c' = (|u|^2 - Q(x)) / 2` integrated by the same RK4 stages.
pub(crate) struct Forward {
    pub m: usize,
    pub steps: usize,
    pub h: f64,
    /// `(steps + 1) * m` node states.
    pub nodes: Vec<f64>,
    /// `steps * 4 * m` stage states (empty unless recorded).
    pub stages: Vec<f64>,
    pub cost: f64,
    /// Step at which the trajectory failed.
    pub blowup_at: Option<usize>,
}

impl Forward {
    pub fn node(&self, n: usize) -> &[f64] {
        &self.nodes[n * self.m..(n + 1) * self.m]
    }

    pub fn final_state(&self) -> &[f64] {
        self.node(self.nodes.len() / self.m - 1)
    }

    pub fn admissible(&self) -> bool {
        self.blowup_at.is_none()
    }

    pub fn inadmissible_error(&self) -> Error {
        Error::Inadmissible {
            time: self.blowup_at.map_or(0.0, |n| (n + 1) as f64 * self.h),
        }
    }

    pub fn to_trajectory(&self, u: &Control) -> Trajectory {
        let count = self.nodes.len() / self.m;
        let times = (0..count).map(|n| n as f64 * self.h).collect();
        let states = self.nodes.chunks(self.m).map(<[f64]>::to_vec).collect();
        Trajectory {
            times,
            states,
            control_ref: Some(u.clone()),
            blowup_flag: self.blowup_at.is_some(),
        }
    }
}

pub(crate) fn forward(spec: &ProblemSpec, u: &Control, record_stages: bool) -> Forward {
    let sys = &spec.system;
    let m = spec.dim();
    let steps = spec.intervals * spec.substeps;
    let h = spec.horizon / steps as f64;
    let q = &sys.potential;
    let q_zero = q.is_zero();

    let mut nodes = Vec::with_capacity((steps + 1) * m);
    nodes.extend_from_slice(&spec.x0);
    let mut stages = if record_stages {
        Vec::with_capacity(steps * 4 * m)
    } else {
        Vec::new()
    };
    let mut x = spec.x0.clone();
    let mut tmp = vec![0.0; m];
    let mut k = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    let mut y = vec![0.0; m];
    let mut cost = 0.0;
    let mut blowup_at = None;

    for n in 0..steps {
        let uk = u.interval(n / spec.substeps);
        let u2: f64 = uk.iter().map(|v| v * v).sum();
        let mut qsum = 0.0;
        // stage 1
        if record_stages {
            stages.extend_from_slice(&x);
        }
        sys.rhs_into(&x, uk, &mut k[0], &mut tmp);
        if !q_zero {
            qsum += q.eval(&x);
        }
        // stage 2
        axpy_into(&x, h / 2.0, &k[0], &mut y);
        if record_stages {
            stages.extend_from_slice(&y);
        }
        sys.rhs_into(&y, uk, &mut k[1], &mut tmp);
        if !q_zero {
            qsum += 2.0 * q.eval(&y);
        }
        // stage 3
        axpy_into(&x, h / 2.0, &k[1], &mut y);
        if record_stages {
            stages.extend_from_slice(&y);
        }
        sys.rhs_into(&y, uk, &mut k[2], &mut tmp);
        if !q_zero {
            qsum += 2.0 * q.eval(&y);
        }
        // stage 4
        axpy_into(&x, h, &k[2], &mut y);
        if record_stages {
            stages.extend_from_slice(&y);
        }
        sys.rhs_into(&y, uk, &mut k[3], &mut tmp);
        if !q_zero {
            qsum += q.eval(&y);
        }

        for j in 0..m {
            x[j] += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
        }
        cost += 0.5 * h * u2 - h / 12.0 * qsum;
        if !state_ok(sys, &x) || !cost.is_finite() {
            blowup_at = Some(n);
            break;
        }
        nodes.extend_from_slice(&x);
    }
    Forward {
        m,
        steps,
        h,
        nodes,
        stages,
        cost,
        blowup_at,
    }
}

/// Reverse-mode sweep through the discrete scheme.
///
/// `seed` holds `rows` covectors on the augmented final state `(x(T), C)`,
/// each of length `m + 1`. Returns, for every row, the gradient with respect
/// to the control values (`N * d`, interval-major) and with respect to `x_0`.
/// With seed `(lambda, -1)` the `x_0` part is the initial costate of the
/// normal lift.
pub(crate) fn adjoint_sweep(
    spec: &ProblemSpec,
    u: &Control,
    fwd: &Forward,
    seed: &[f64],
    rows: usize,
) -> (Vec<f64>, Vec<f64>) {
    let sys = &spec.system;
    let m = spec.dim();
    let d = spec.channels();
    let w = m + 1;
    assert_eq!(seed.len(), rows * w);
    assert!(fwd.admissible() && fwd.stages.len() == fwd.steps * 4 * m);
    let h = fwd.h;
    let n_u = spec.intervals * d;

    let mut grad = vec![0.0; rows * n_u];
    let mut a = seed.to_vec();
    let mut ak = vec![0.0; rows * w];
    let mut ay = [vec![0.0; rows * w], vec![0.0; rows * w], vec![0.0; rows * w], vec![0.0; rows * w]];
    let mut jac = vec![0.0; m * m];
    let mut jtmp = vec![0.0; m * m];
    let mut fields = vec![0.0; d * m];
    let mut gq = vec![0.0; m];
    let q_zero = sys.potential.is_zero();

    // coefficients: k_j adjoint = c_a * a + c_y * ay[j+1]
    const CA: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];
    const CY: [f64; 3] = [0.5, 0.5, 1.0];

    for n in (0..fwd.steps).rev() {
        let k = n / spec.substeps;
        let uk = u.interval(k);
        for j in (0..4).rev() {
            let y = &fwd.stages[(n * 4 + j) * m..(n * 4 + j + 1) * m];
            // adjoint of k_j
            for r in 0..rows {
                for c in 0..w {
                    let mut v = CA[j] * h * a[r * w + c];
                    if j < 3 {
                        v += CY[j] * h * ay[j + 1][r * w + c];
                    }
                    ak[r * w + c] = v;
                }
            }
            sys.state_jacobian_into(y, uk, &mut jac, &mut jtmp);
            for (i, field) in sys.controls.iter().enumerate() {
                field.eval_into(y, &mut fields[i * m..(i + 1) * m]);
            }
            if !q_zero {
                sys.potential.gradient_into(y, &mut gq);
            }
            for r in 0..rows {
                let akr = &ak[r * w..(r + 1) * w];
                let ac = akr[m];
                let out = &mut ay[j][r * w..(r + 1) * w];
                for col in 0..m {
                    let mut s = 0.0;
                    for row in 0..m {
                        s += jac[row * m + col] * akr[row];
                    }
                    if !q_zero {
                        s -= 0.5 * ac * gq[col];
                    }
                    out[col] = s;
                }
                out[m] = 0.0;
                let g = &mut grad[r * n_u + k * d..r * n_u + (k + 1) * d];
                for i in 0..d {
                    let mut s = ac * uk[i];
                    for row in 0..m {
                        s += fields[i * m + row] * akr[row];
                    }
                    g[i] += s;
                }
            }
        }
        for idx in 0..rows * w {
            a[idx] += ay[0][idx] + ay[1][idx] + ay[2][idx] + ay[3][idx];
        }
    }
    let mut dx0 = vec![0.0; rows * m];
    for r in 0..rows {
        dx0[r * m..(r + 1) * m].copy_from_slice(&a[r * w..r * w + m]);
    }
    (grad, dx0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;
    use crate::model::Control;

    #[test]
    fn zero_dynamics_keep_state() {
        let spec = benchmarks::by_name("heisenberg").unwrap().spec();
        let tr = integrate(&spec, &spec.zero_control()).unwrap();
        assert!(!tr.blowup_flag);
        assert_eq!(tr.times.len(), spec.intervals * spec.substeps + 1);
        assert!(tr.states.iter().all(|x| x == &spec.x0));
        assert!((tr.times.last().unwrap() - spec.horizon).abs() < 1e-14);
    }

    #[test]
    fn scalar_constant_control_is_exact() {
        let spec = benchmarks::by_name("lq-scalar").unwrap().spec().with_horizon(2.5);
        let u = Control::constant(2.5, spec.intervals, &[0.8]);
        let tr = integrate(&spec, &u).unwrap();
        assert!((tr.final_state()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn double_integrator_unit_push() {
        let spec = benchmarks::by_name("double-integrator").unwrap().spec();
        let u = Control::constant(1.0, spec.intervals, &[1.0]);
        let x = integrate(&spec, &u).unwrap();
        let xf = x.final_state();
        assert!((xf[0] - 0.5).abs() < 1e-10 && (xf[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn chart_exit_sets_blowup_flag() {
        let spec = benchmarks::by_name("lq-scalar").unwrap().spec();
        let u = Control::constant(1.0, spec.intervals, &[50.0]);
        let tr = integrate(&spec, &u).unwrap();
        assert!(tr.blowup_flag);
        assert!(tr.times.last().unwrap() < &spec.horizon);
        assert!(tr.states.iter().all(|x| x[0].is_finite()));
    }

    #[test]
    fn mismatched_control_is_a_shape_error() {
        let spec = benchmarks::by_name("lq-scalar").unwrap().spec();
        let u = Control::zeros(1.0, 3, 1);
        assert!(matches!(integrate(&spec, &u), Err(Error::Shape(_))));
    }

    #[test]
    fn pushforward_identity_on_diagonal_and_exponential_for_linear_drift() {
        let spec = benchmarks::by_name("double-integrator").unwrap().spec();
        let vf = variational_flow(&spec, &spec.zero_control()).unwrap();
        let id = vf.pushforward(0.25, 0.25).unwrap();
        assert_eq!(id, DMatrix::identity(2, 2));
        // exp(tA) for A = [[0,1],[0,0]] is [[1,t],[0,1]]
        let p = vf.pushforward(0.0, 0.75).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.75, 0.0, 1.0]);
        assert!((p - expected).norm() < 1e-8);
    }

    #[test]
    fn pullback_is_adjoint_of_pushforward() {
        let spec = benchmarks::by_name("martinet").unwrap().spec();
        let u = Control::from_fn(spec.horizon, spec.intervals, 2, |t| vec![t.cos(), 1.0 - t]);
        let vf = variational_flow(&spec, &u).unwrap();
        let p = DVector::from_vec(vec![0.3, -1.2, 0.7]);
        let v = DVector::from_vec(vec![-0.5, 0.4, 2.0]);
        let (s, t) = (0.125, 0.875);
        let lhs = vf.pullback_covector(s, t, &p).unwrap().dot(&v);
        let rhs = p.dot(&(vf.pushforward(s, t).unwrap() * &v));
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(vf.pullback_covector(t, t, &p).unwrap(), p);
    }

    #[test]
    fn scalar_pullback_is_identity() {
        let spec = benchmarks::by_name("lq-scalar").unwrap().spec();
        let u = Control::from_fn(1.0, spec.intervals, 1, |t| vec![3.0 * t]);
        let vf = variational_flow(&spec, &u).unwrap();
        let p = DVector::from_vec(vec![1.7]);
        assert!((vf.pullback_covector(0.0, 1.0, &p).unwrap()[0] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn non_node_time_is_rejected() {
        let spec = benchmarks::by_name("lq-scalar").unwrap().spec();
        let vf = variational_flow(&spec, &spec.zero_control()).unwrap();
        assert!(vf.pushforward(0.0, 0.1234567).is_err());
    }

    #[test]
    fn csv_has_header_and_one_row_per_node() {
        let spec = benchmarks::by_name("double-integrator").unwrap().spec().with_intervals(2);
        let tr = integrate(&spec, &spec.zero_control()).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2");
        assert_eq!(lines.len(), tr.times.len() + 1);
    }
}
