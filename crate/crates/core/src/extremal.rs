//! Normal extremals: the Hamiltonian flow of
//!
//! ```text
//! H(p, x) = <p, X_0(x)> + 1/2 sum_i <p, X_i(x)>^2 + 1/2 Q(x)
//! ```
//!
//! its exponential map from `x_0`, the differential of that map, conjugate
//! times and Newton shooting.
//!
//! Conjugate times are detected on the fixed-time block `dx(t)/dp_0` at each
//! node. Criticality jointly in `(t, p_0)` is not tested separately; a joint
//! critical point is singular for the fixed-time block as well.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, fmt_num, state_ok, Trajectory};
use crate::model::{ControlSystem, ProblemSpec};

/// Relative singular value threshold for conjugate points.
pub const CONJUGATE_RTOL: f64 = 1e-6;
/// Newton iteration limit for [`shoot`].
pub const SHOOT_MAX_ITER: usize = 40;

pub fn hamiltonian(sys: &ControlSystem, p: &[f64], x: &[f64]) -> f64 {
    let dot = |f: &crate::VectorField| -> f64 { f.eval(x).iter().zip(p).map(|(a, b)| a * b).sum() };
    let mut h = dot(&sys.drift) + 0.5 * sys.potential.eval(x);
    for f in &sys.controls {
        let u = dot(f);
        h += 0.5 * u * u;
    }
    h
}

/// Controls `u_i = <p, X_i(x)>` of the normal lift.
pub fn normal_control(sys: &ControlSystem, p: &[f64], x: &[f64]) -> Vec<f64> {
    sys.controls
        .iter()
        .map(|f| f.eval(x).iter().zip(p).map(|(a, b)| a * b).sum())
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtremalArc {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub costates: Vec<Vec<f64>>,
    /// `u_i(t) = <p(t), X_i(x(t))>` at every node.
    pub recovered_control: Vec<Vec<f64>>,
    pub initial_covector: Vec<f64>,
    /// `C_T` along the arc.
    pub cost: f64,
    pub blowup_flag: bool,
}

impl ExtremalArc {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("arc has at least one node")
    }

    /// `max_t |H(t) - H(0)| / (1 + |H(0)|)`.
    pub fn hamiltonian_drift(&self, sys: &ControlSystem) -> f64 {
        let h0 = hamiltonian(sys, &self.costates[0], &self.states[0]);
        self.states
            .iter()
            .zip(&self.costates)
            .map(|(x, p)| (hamiltonian(sys, p, x) - h0).abs())
            .fold(0.0, f64::max)
            / (1.0 + h0.abs())
    }

    /// Columns `t, x1..xm, p1..pm, u1..ud`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = self.initial_covector.len();
        let d = self.recovered_control.first().map_or(0, Vec::len);
        write!(w, "t")?;
        for i in 1..=m {
            write!(w, ",x{i}")?;
        }
        for i in 1..=m {
            write!(w, ",p{i}")?;
        }
        for i in 1..=d {
            write!(w, ",u{i}")?;
        }
        writeln!(w)?;
        for n in 0..self.times.len() {
            write!(w, "{}", fmt_num(self.times[n]))?;
            for v in self.states[n].iter().chain(&self.costates[n]).chain(&self.recovered_control[n]) {
                write!(w, ",{}", fmt_num(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Differential of the Hamiltonian flow at every node of the time grid.
#[derive(Clone, Debug)]
pub struct ExpJacobian {
    pub times: Vec<f64>,
    /// `dx(t)/dp_0`.
    pub dxdp: Vec<DMatrix<f64>>,
    /// `dx(t)/dx_0`.
    pub dxdx0: Vec<DMatrix<f64>>,
}

/// Right-hand side of the Hamiltonian system and, optionally, its Jacobian
/// with respect to `(x, p)`.
fn hamiltonian_rhs(sys: &ControlSystem, z: &[f64], jac: Option<&mut DMatrix<f64>>) -> Vec<f64> {
    let m = sys.dim();
    let (x, p) = z.split_at(m);
    let pv = DVector::from_column_slice(p);
    let x0f = sys.drift.eval(x);
    let dx0 = sys.drift.jacobian(x);
    let mut xdot = x0f.clone();
    let mut pdot = -(dx0.transpose() * &pv) - 0.5 * sys.potential.gradient(x);
    let mut fields = Vec::with_capacity(sys.controls.len());
    for f in &sys.controls {
        let xi = f.eval(x);
        let dxi = f.jacobian(x);
        let u = xi.dot(&pv);
        xdot += &xi * u;
        let dxtp = dxi.transpose() * &pv;
        pdot -= &dxtp * u;
        fields.push((xi, dxi, u, dxtp));
    }
    if let Some(j) = jac {
        let mut hpx = dx0.clone();
        let mut hpp = DMatrix::zeros(m, m);
        let mut hxx = 0.5 * sys.potential.hessian(x);
        for k in 0..m {
            if p[k] != 0.0 {
                hxx += sys.drift.component_hessian(k, x) * p[k];
            }
        }
        for ((xi, dxi, u, dxtp), f) in fields.iter().zip(&sys.controls) {
            hpx += dxi * *u + xi * dxtp.transpose();
            hpp += xi * xi.transpose();
            hxx += dxtp * dxtp.transpose();
            for k in 0..m {
                if p[k] != 0.0 && *u != 0.0 {
                    hxx += f.component_hessian(k, x) * (u * p[k]);
                }
            }
        }
        j.view_mut((0, 0), (m, m)).copy_from(&hpx);
        j.view_mut((0, m), (m, m)).copy_from(&hpp);
        j.view_mut((m, 0), (m, m)).copy_from(&(-hxx));
        j.view_mut((m, m), (m, m)).copy_from(&(-hpx.transpose()));
    }
    let mut out = Vec::with_capacity(2 * m);
    out.extend(xdot.iter());
    out.extend(pdot.iter());
    out
}

/// One RK4 step of `(z, c, Phi)` where `c' = 1/2 (|u|^2 - Q)` and `Phi` is
/// the variational matrix (skipped when `None`).
fn rk4_step(sys: &ControlSystem, z: &mut Vec<f64>, c: &mut f64, phi: Option<&mut DMatrix<f64>>, h: f64) {
    let m = sys.dim();
    let lag = |zz: &[f64]| {
        let u = normal_control(sys, &zz[m..], &zz[..m]);
        0.5 * (u.iter().map(|v| v * v).sum::<f64>() - sys.potential.eval(&zz[..m]))
    };
    let shift = |a: &[f64], s: f64, k: &[f64]| -> Vec<f64> { a.iter().zip(k).map(|(x, y)| x + s * y).collect() };
    match phi {
        None => {
            let k1 = hamiltonian_rhs(sys, z, None);
            let z2 = shift(z, h / 2.0, &k1);
            let k2 = hamiltonian_rhs(sys, &z2, None);
            let z3 = shift(z, h / 2.0, &k2);
            let k3 = hamiltonian_rhs(sys, &z3, None);
            let z4 = shift(z, h, &k3);
            let k4 = hamiltonian_rhs(sys, &z4, None);
            *c += h / 6.0 * (lag(z) + 2.0 * lag(&z2) + 2.0 * lag(&z3) + lag(&z4));
            for i in 0..z.len() {
                z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        Some(phi) => {
            let n = 2 * m;
            let mut j = DMatrix::zeros(n, n);
            let k1 = hamiltonian_rhs(sys, z, Some(&mut j));
            let l1 = &j * &*phi;
            let z2 = shift(z, h / 2.0, &k1);
            let k2 = hamiltonian_rhs(sys, &z2, Some(&mut j));
            let l2 = &j * (&*phi + &l1 * (h / 2.0));
            let z3 = shift(z, h / 2.0, &k2);
            let k3 = hamiltonian_rhs(sys, &z3, Some(&mut j));
            let l3 = &j * (&*phi + &l2 * (h / 2.0));
            let z4 = shift(z, h, &k3);
            let k4 = hamiltonian_rhs(sys, &z4, Some(&mut j));
            let l4 = &j * (&*phi + &l3 * h);
            *c += h / 6.0 * (lag(z) + 2.0 * lag(&z2) + 2.0 * lag(&z3) + lag(&z4));
            for i in 0..n {
                z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            *phi += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
        }
    }
}

fn check_covector(spec: &ProblemSpec, p0: &[f64]) -> Result<()> {
    if p0.len() != spec.dim() {
        return Err(Error::Shape(format!(
            "covector has length {}, state dimension is {}",
            p0.len(),
            spec.dim()
        )));
    }
    if p0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("covector has non-finite entries".into()));
    }
    Ok(())
}

fn total_steps(spec: &ProblemSpec) -> usize {
    spec.intervals * spec.substeps
}

struct Sweep {
    times: Vec<f64>,
    z: Vec<Vec<f64>>,
    phi: Vec<DMatrix<f64>>,
    cost: f64,
    blowup: bool,
}

fn sweep(spec: &ProblemSpec, horizon: f64, steps: usize, p0: &[f64], variational: bool) -> Sweep {
    let sys = &spec.system;
    let m = spec.dim();
    let h = horizon / steps as f64;
    let mut z: Vec<f64> = spec.x0.iter().chain(p0).copied().collect();
    let mut phi = variational.then(|| DMatrix::identity(2 * m, 2 * m));
    let mut cost = 0.0;
    let mut out = Sweep {
        times: vec![0.0],
        z: vec![z.clone()],
        phi: phi.iter().cloned().collect(),
        cost: 0.0,
        blowup: false,
    };
    for n in 0..steps {
        rk4_step(sys, &mut z, &mut cost, phi.as_mut(), h);
        if !state_ok(sys, &z[..m]) || z[m..].iter().any(|v| !v.is_finite() || v.abs() > flow::BLOWUP_THRESHOLD) {
            out.blowup = true;
            break;
        }
        out.times.push((n + 1) as f64 * h);
        out.z.push(z.clone());
        if let Some(p) = &phi {
            out.phi.push(p.clone());
        }
    }
    out.cost = cost;
    out
}

/// Projection of the Hamiltonian flow from `(x_0, p_0)` at time `t`.
pub fn exponential(spec: &ProblemSpec, t: f64, p0: &[f64]) -> Result<DVector<f64>> {
    check_covector(spec, p0)?;
    if !(0.0..=spec.horizon * (1.0 + 1e-12)).contains(&t) {
        return Err(Error::Shape(format!("time {t} outside [0, {}]", spec.horizon)));
    }
    if t == 0.0 {
        return Ok(DVector::from_column_slice(&spec.x0));
    }
    let h_nominal = spec.horizon / total_steps(spec) as f64;
    let steps = ((t / h_nominal) - 1e-9).ceil().max(1.0) as usize;
    let s = sweep(spec, t, steps, p0, false);
    if s.blowup {
        return Err(Error::Inadmissible {
            time: *s.times.last().unwrap(),
        });
    }
    Ok(DVector::from_column_slice(&s.z.last().unwrap()[..spec.dim()]))
}

/// Normal extremal on `[0, T]` from `p_0`, sampled at every RK4 node.
pub fn extremal_arc(spec: &ProblemSpec, p0: &[f64]) -> Result<ExtremalArc> {
    check_covector(spec, p0)?;
    let s = sweep(spec, spec.horizon, total_steps(spec), p0, false);
    if s.blowup {
        return Err(Error::Inadmissible {
            time: *s.times.last().unwrap(),
        });
    }
    Ok(arc_from(spec, s, p0))
}

fn arc_from(spec: &ProblemSpec, s: Sweep, p0: &[f64]) -> ExtremalArc {
    let m = spec.dim();
    let states: Vec<Vec<f64>> = s.z.iter().map(|z| z[..m].to_vec()).collect();
    let costates: Vec<Vec<f64>> = s.z.iter().map(|z| z[m..].to_vec()).collect();
    let recovered_control = states
        .iter()
        .zip(&costates)
        .map(|(x, p)| normal_control(&spec.system, p, x))
        .collect();
    ExtremalArc {
        times: s.times,
        states,
        costates,
        recovered_control,
        initial_covector: p0.to_vec(),
        cost: s.cost,
        blowup_flag: s.blowup,
    }
}

pub fn exp_jacobian(spec: &ProblemSpec, p0: &[f64]) -> Result<ExpJacobian> {
    check_covector(spec, p0)?;
    let s = sweep(spec, spec.horizon, total_steps(spec), p0, true);
    if s.blowup {
        return Err(Error::Inadmissible {
            time: *s.times.last().unwrap(),
        });
    }
    Ok(jacobian_from(spec.dim(), &s))
}

fn jacobian_from(m: usize, s: &Sweep) -> ExpJacobian {
    ExpJacobian {
        times: s.times.clone(),
        dxdp: s.phi.iter().map(|p| p.view((0, m), (m, m)).into_owned()).collect(),
        dxdx0: s.phi.iter().map(|p| p.view((0, 0), (m, m)).into_owned()).collect(),
    }
}

fn sigma_min_max(a: &DMatrix<f64>) -> (f64, f64) {
    let sv = a.singular_values();
    (sv.min(), sv.max())
}

/// Times in `(0, T]` where `dx(t)/dp_0` is singular: sign changes of its
/// determinant, and local minima of its smallest singular value below
/// `CONJUGATE_RTOL` times the largest singular value seen on the arc. Each
/// time is refined to better than `1e-3`.
///
/// If the flow leaves the chart, times found up to that point are returned.
pub fn conjugate_times(spec: &ProblemSpec, p0: &[f64]) -> Result<Vec<f64>> {
    check_covector(spec, p0)?;
    let m = spec.dim();
    let s = sweep(spec, spec.horizon, total_steps(spec), p0, true);
    let h = spec.horizon / total_steps(spec) as f64;
    let blocks: Vec<DMatrix<f64>> = s.phi.iter().map(|p| p.view((0, m), (m, m)).into_owned()).collect();
    let dets: Vec<f64> = blocks.iter().map(|b| b.determinant()).collect();
    let sv: Vec<(f64, f64)> = blocks.iter().map(sigma_min_max).collect();
    let smax = sv.iter().map(|v| v.1).fold(0.0, f64::max);
    let tau = CONJUGATE_RTOL * smax;
    if smax == 0.0 {
        return Ok(Vec::new());
    }

    // partial step of length `dt` from node `n`
    let block_at = |n: usize, dt: f64| -> DMatrix<f64> {
        let mut z = s.z[n].clone();
        let mut phi = s.phi[n].clone();
        let mut c = 0.0;
        if dt > 0.0 {
            rk4_step(&spec.system, &mut z, &mut c, Some(&mut phi), dt);
        }
        phi.view((0, m), (m, m)).into_owned()
    };

    let mut times = Vec::new();
    let last = blocks.len() - 1;
    for n in 2..=last {
        if dets[n - 1] * dets[n] < 0.0 || (dets[n] == 0.0 && dets[n - 1] != 0.0) {
            // bisection on the determinant inside step n-1 -> n
            let (mut a, mut b) = (0.0, h);
            let sign_a = dets[n - 1].signum();
            for _ in 0..40 {
                let mid = 0.5 * (a + b);
                if block_at(n - 1, mid).determinant().signum() == sign_a {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            times.push(s.times[n - 1] + 0.5 * (a + b));
            continue;
        }
        let is_touch = n < last && sv[n].0 < tau && sv[n].0 <= sv[n - 1].0 && sv[n].0 <= sv[n + 1].0;
        if is_touch && dets[n] * dets[n + 1] >= 0.0 {
            // golden-section search of sigma_min on [t_{n-1}, t_{n+1}]
            let f = |dt: f64| sigma_min_max(&block_at(n - 1, dt)).0;
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let (mut a, mut b) = (0.0, 2.0 * h);
            for _ in 0..40 {
                let (c, d) = (b - g * (b - a), a + g * (b - a));
                if f(c) < f(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            times.push(s.times[n - 1] + 0.5 * (a + b));
        }
    }
    if last >= 1 && sv[last].0 < tau && times.last().is_none_or(|t| (spec.horizon - t).abs() > 1e-3) {
        times.push(s.times[last]);
    }
    Ok(times)
}

/// Damped Newton on `F(p_0) = x(T; p_0) - x_target`, starting at `p0_init`.
///
/// Steps are halved until `|F|` decreases; a near-singular Jacobian falls back
/// to a Levenberg-Marquardt step. Succeeds when `|F| <= 1e-8 max(1, |x|)`.
/// Failure with a singular Jacobian at `T` (relative to the largest singular
/// value along the arc) is reported as a conjugate obstruction.
pub fn shoot(spec: &ProblemSpec, target: &[f64], p0_init: &[f64]) -> Result<ExtremalArc> {
    check_covector(spec, p0_init)?;
    let m = spec.dim();
    if target.len() != m {
        return Err(Error::Shape("target length does not match state dimension".into()));
    }
    if !spec.system.chart.contains(target) {
        return Err(Error::InvalidModel("target lies outside the chart bounds".into()));
    }
    let tol = 1e-8 * DVector::from_column_slice(target).norm().max(1.0);
    let steps = total_steps(spec);
    let xt = DVector::from_column_slice(target);
    let residual = |p: &[f64]| -> Option<(DVector<f64>, Sweep)> {
        let s = sweep(spec, spec.horizon, steps, p, true);
        if s.blowup {
            return None;
        }
        let f = DVector::from_column_slice(&s.z.last().unwrap()[..m]) - &xt;
        Some((f, s))
    };

    let mut p = p0_init.to_vec();
    let (mut f, mut s) = residual(&p).ok_or(Error::ShootFailed {
        iterations: 0,
        residual: f64::INFINITY,
    })?;
    let mut singular = false;
    for it in 0..=SHOOT_MAX_ITER {
        if f.norm() <= tol {
            return Ok(arc_from(spec, s, &p));
        }
        let jac = s.phi.last().unwrap().view((0, m), (m, m)).into_owned();
        let (smin, smax) = sigma_min_max(&jac);
        let arc_scale = s
            .phi
            .iter()
            .map(|b| sigma_min_max(&b.view((0, m), (m, m)).into_owned()).1)
            .fold(0.0, f64::max);
        singular = smax == 0.0 || smin <= CONJUGATE_RTOL * arc_scale;
        if it == SHOOT_MAX_ITER {
            break;
        }
        let step = if singular {
            let mu = 1e-8 * arc_scale.max(1e-8).powi(2);
            let lhs = jac.transpose() * &jac + DMatrix::identity(m, m) * mu;
            lhs.lu().solve(&(jac.transpose() * &f)).map(|d| -d)
        } else {
            jac.clone().lu().solve(&f).map(|d| -d)
        };
        let Some(step) = step else {
            break;
        };
        let fnorm = f.norm();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + alpha * b).collect();
            if let Some((ft, st)) = residual(&trial) {
                if ft.norm() < (1.0 - 1e-4 * alpha) * fnorm {
                    accepted = Some((trial, ft, st));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((pn, fnew, snew)) = accepted else {
            break;
        };
        p = pn;
        f = fnew;
        s = snew;
    }
    if singular {
        Err(Error::ConjugateObstruction { time: spec.horizon })
    } else {
        Err(Error::ShootFailed {
            iterations: SHOOT_MAX_ITER,
            residual: f.norm(),
        })
    }
}

/// Re-integrates the control system open loop under the recovered control,
/// interpolated between nodes by cubic Lagrange polynomials.
pub fn replay(spec: &ProblemSpec, arc: &ExtremalArc) -> Trajectory {
    let n = arc.times.len() - 1;
    let h = spec.horizon / n as f64;
    let d = spec.channels();
    let control = |t: f64| -> Vec<f64> {
        let k = ((t / h).round() as usize).min(n);
        if (t - arc.times[k]).abs() <= 1e-12 * spec.horizon {
            return arc.recovered_control[k].clone();
        }
        let base = ((t / h).floor() as isize - 1).clamp(0, (n as isize - 3).max(0)) as usize;
        let idx: Vec<usize> = (base..(base + 4).min(n + 1)).collect();
        let mut u = vec![0.0; d];
        for &i in &idx {
            let mut w = 1.0;
            for &j in &idx {
                if j != i {
                    w *= (t - arc.times[j]) / (arc.times[i] - arc.times[j]);
                }
            }
            for c in 0..d {
                u[c] += w * arc.recovered_control[i][c];
            }
        }
        u
    };
    flow::integrate_with(&spec.system, &spec.x0, spec.horizon, n, control)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;

    #[test]
    fn hamiltonian_hand_values() {
        let heis = benchmarks::heisenberg_system();
        assert!((hamiltonian(&heis, &[1.0, 0.0, 0.0], &[0.0; 3]) - 0.5).abs() < 1e-15);
        let osc = benchmarks::oscillator_system();
        assert!((hamiltonian(&osc, &[0.0], &[0.7]) - 0.245).abs() < 1e-15);
        let lq = benchmarks::lq_scalar_system();
        assert_eq!(hamiltonian(&lq, &[3.0], &[1.0]), 4.5);
    }

    #[test]
    fn exponential_closed_forms() {
        let lq = benchmarks::by_name("lq-scalar").unwrap().spec();
        assert_eq!(exponential(&lq, 0.0, &[2.0]).unwrap()[0], 0.0);
        assert!((exponential(&lq, 0.6, &[2.0]).unwrap()[0] - 1.2).abs() < 1e-13);
        let osc = benchmarks::by_name("oscillator-potential").unwrap().spec();
        for t in [0.3, 0.77, 1.0] {
            let x = exponential(&osc, t, &[0.9]).unwrap()[0];
            assert!((x - 0.9 * t.sin()).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn exp_jacobian_scalar_and_initial_block() {
        let lq = benchmarks::by_name("lq-scalar").unwrap().spec();
        let j = exp_jacobian(&lq, &[0.4]).unwrap();
        for (t, b) in j.times.iter().zip(&j.dxdp) {
            assert!((b[(0, 0)] - t).abs() < 1e-12);
        }
        let heis = benchmarks::by_name("heisenberg").unwrap().spec();
        let j = exp_jacobian(&heis, &[0.3, -0.2, 1.0]).unwrap();
        assert_eq!(j.dxdp[0], DMatrix::zeros(3, 3));
        assert_eq!(j.dxdx0[0], DMatrix::identity(3, 3));
    }

    #[test]
    fn conjugate_times_simple_cases() {
        let lq = benchmarks::by_name("lq-scalar").unwrap().spec();
        assert!(conjugate_times(&lq, &[1.0]).unwrap().is_empty());
        let osc = benchmarks::by_name("oscillator-potential").unwrap().spec().with_horizon(4.0);
        let ts = conjugate_times(&osc, &[0.5]).unwrap();
        assert_eq!(ts.len(), 1);
        assert!((ts[0] - std::f64::consts::PI).abs() < 1e-3, "{ts:?}");
        let di = benchmarks::by_name("double-integrator").unwrap().spec();
        assert!(conjugate_times(&di, &[0.7, -1.3]).unwrap().is_empty());
    }

    #[test]
    fn shooting_linear_and_trivial() {
        let lq = benchmarks::by_name("lq-scalar").unwrap().spec();
        for init in [-5.0, 0.0, 3.0] {
            let arc = shoot(&lq, &[0.8], &[init]).unwrap();
            assert!((arc.initial_covector[0] - 0.8).abs() < 1e-9);
        }
        let heis = benchmarks::by_name("heisenberg").unwrap().spec();
        let arc = shoot(&heis, &[0.0; 3], &[0.0; 3]).unwrap();
        assert!(arc.initial_covector.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn oscillator_shot_into_conjugate_time_is_obstructed() {
        let osc = benchmarks::by_name("oscillator-potential").unwrap().spec();
        let osc = osc.with_horizon(std::f64::consts::PI);
        // x(pi) = p0 sin(pi) = 0 for every p0
        let e = shoot(&osc, &[0.2], &[0.3]).unwrap_err();
        assert_eq!(e.category(), "conjugate-obstruction");
    }

    #[test]
    fn replay_reproduces_states() {
        let spec = benchmarks::by_name("drifted-heisenberg").unwrap().spec();
        let arc = extremal_arc(&spec, &[0.4, -0.3, 1.1]).unwrap();
        let tr = replay(&spec, &arc);
        let err = tr
            .states
            .iter()
            .zip(&arc.states)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err:e}");
    }
}
