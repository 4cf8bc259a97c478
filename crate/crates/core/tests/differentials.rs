//! Finite-difference and double-quadrature oracles for the end-point and
//! cost differentials.

use nalgebra::DVector;
use ocplab::benchmarks;
use ocplab::endpoint::{self, d_end_point_midpoint};
use ocplab::flow;
use ocplab::model::{Control, ProblemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_control(spec: &ProblemSpec, rng: &mut ChaCha8Rng, scale: f64) -> Control {
    let n = spec.intervals * spec.channels();
    let values = (0..n).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect();
    Control::new(spec.horizon, spec.intervals, spec.channels(), values).unwrap()
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-8)
}

#[test]
fn central_differences_match_differentials_on_all_benchmarks() {
    let eps = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for b in benchmarks::all() {
        let spec = b.spec();
        let u = random_control(&spec, &mut rng, 0.5);
        let lin = endpoint::linearize(&spec, &u).unwrap();
        let mut worst_e: f64 = 0.0;
        let mut worst_c: f64 = 0.0;
        for _ in 0..5 {
            let v = random_control(&spec, &mut rng, 1.0);
            let up = u.axpy(eps, &v);
            let dn = u.axpy(-eps, &v);
            let fd_e = (endpoint::end_point(&spec, &up).unwrap() - endpoint::end_point(&spec, &dn).unwrap()) / (2.0 * eps);
            worst_e = worst_e.max(rel(&fd_e, &lin.de.apply(&v).unwrap()));
            let fd_c = (endpoint::cost(&spec, &up).unwrap() - endpoint::cost(&spec, &dn).unwrap()) / (2.0 * eps);
            let an_c = lin.dc.pair(&v);
            worst_c = worst_c.max((fd_c - an_c).abs() / an_c.abs().max(fd_c.abs()).max(1e-8));
        }
        assert!(worst_e <= 1e-5, "{}: dE rel err {worst_e:e}", b.name);
        assert!(worst_c <= 1e-5, "{}: dC rel err {worst_c:e}", b.name);
    }
}

#[test]
fn first_order_remainder_is_quadratic() {
    let spec = benchmarks::by_name("heisenberg").unwrap().spec();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = random_control(&spec, &mut rng, 1.0);
    let v = random_control(&spec, &mut rng, 1.0);
    let de = endpoint::d_end_point(&spec, &u).unwrap();
    let e0 = endpoint::end_point(&spec, &u).unwrap();
    let lin = de.apply(&v).unwrap();
    let rem = |eps: f64| (endpoint::end_point(&spec, &u.axpy(eps, &v)).unwrap() - &e0 - &lin * eps).norm();
    let ratio = rem(1e-2) / rem(5e-3);
    assert!((3.0..5.0).contains(&ratio), "remainder ratio {ratio}");
}

#[test]
fn midpoint_formula_converges_to_discrete_differential() {
    let base = benchmarks::by_name("martinet").unwrap().spec();
    let f = |t: f64| vec![(2.0 * t).sin(), 1.0 - t];
    let err = |n: usize| {
        let spec = base.with_intervals(n);
        let u = Control::from_fn(spec.horizon, n, 2, f);
        let exact = endpoint::d_end_point(&spec, &u).unwrap().matrix;
        let mid = d_end_point_midpoint(&spec, &u).unwrap();
        // compare as functionals: scale columns by 1/h
        (exact - mid).norm() / (spec.horizon / n as f64).sqrt()
    };
    let (e1, e2) = (err(16), err(32));
    assert!(e2 < e1 / 3.0, "midpoint error not second order: {e1:e} -> {e2:e}");
}

/// Literal double quadrature of
/// `dC(v) = <u, v> - 1/2 ∫ Q'(x(t)) ∫_0^t sum_i v_i(s) P_{s,t} X_i(x(s)) ds dt`
/// with Simpson's rule on the fine nodes, against the costate sweep.
#[test]
fn adjoint_gradient_matches_direct_double_quadrature() {
    let spec = benchmarks::by_name("oscillator-potential").unwrap().spec();
    let spec = ProblemSpec { intervals: 8, substeps: 64, ..spec };
    let u = Control::from_fn(spec.horizon, 8, 1, |t| vec![0.7 - t * t]);
    let grad = endpoint::d_cost(&spec, &u).unwrap();
    let vf = flow::variational_flow(&spec, &u).unwrap();
    let steps = spec.intervals * spec.substeps;
    let h = spec.horizon / steps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        let v = random_control(&spec, &mut rng, 1.0);
        let v_at = |node: usize, side_right: bool| {
            // value of v on the interval to the right (or left) of a node
            let k = if side_right { node / spec.substeps } else { (node - 1) / spec.substeps };
            v.values[k.min(spec.intervals - 1)]
        };
        // inner(t_j) = ∫_0^{t_j} v(s) P_{s,t_j} X_1(x(s)) ds, Simpson per interval
        let integrand = |s_node: usize, t_node: usize, right: bool| {
            let p = vf.pushforward_nodes(s_node, t_node).unwrap()[(0, 0)];
            let x1 = spec.system.controls[0].eval(&vf.base.states[s_node])[0];
            v_at(s_node, right) * p * x1
        };
        // inner(t) at even nodes: Simpson panels never straddle an interval boundary
        let inner = |t_node: usize| -> f64 {
            (0..t_node)
                .step_by(2)
                .map(|a| {
                    h / 3.0
                        * (integrand(a, t_node, true)
                            + 4.0 * integrand(a + 1, t_node, true)
                            + integrand(a + 2, t_node, false))
                })
                .sum()
        };
        let outer: Vec<f64> = (0..=steps)
            .step_by(2)
            .map(|j| spec.system.potential.gradient(&vf.base.states[j])[0] * inner(j))
            .collect();
        let mut second = 0.0;
        for j in (0..outer.len() - 1).step_by(2) {
            second += 2.0 * h / 3.0 * (outer[j] + 4.0 * outer[j + 1] + outer[j + 2]);
        }
        let first = ocplab::model::l2_inner(&u, &v).unwrap();
        let direct = first - 0.5 * second;
        let adj = grad.pair(&v);
        assert!((direct - adj).abs() <= 1e-8 * (1.0 + adj.abs()), "direct {direct} adjoint {adj}");
    }
}

#[test]
fn fundamental_matrix_matches_initial_state_perturbation() {
    let spec = benchmarks::by_name("drifted-heisenberg").unwrap().spec();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let u = random_control(&spec, &mut rng, 1.0);
    let vf = flow::variational_flow(&spec, &u).unwrap();
    let m_t = vf.fundamental.last().unwrap();
    let eps = 1e-5;
    for j in 0..3 {
        let mut up = spec.clone();
        let mut dn = spec.clone();
        up.x0[j] += eps;
        dn.x0[j] -= eps;
        let col = (endpoint::end_point(&up, &u).unwrap() - endpoint::end_point(&dn, &u).unwrap()) / (2.0 * eps);
        let exact = m_t.column(j).into_owned();
        assert!(rel(&col, &exact) <= 1e-4);
        assert!(m_t.determinant().abs() > 1e-12);
    }
}

#[test]
fn rk4_is_fourth_order_on_the_oscillator() {
    // open-loop u(t) = cos(3t)(1 + t) on x' = u from 0, integrated in closed form
    let sys = benchmarks::oscillator_system();
    let err = |steps: usize| {
        let tr = flow::integrate_with(&sys, &[0.0], 2.0, steps, |t| vec![(3.0 * t).cos() * (1.0 + t)]);
        let exact = {
            // ∫_0^2 cos(3t)(1+t) dt
            let f = |t: f64| (3.0 * t).sin() * (1.0 + t) / 3.0 + (3.0 * t).cos() / 9.0;
            f(2.0) - f(0.0)
        };
        (tr.final_state()[0] - exact).abs()
    };
    let ratio = err(20) / err(40);
    assert!((8.0..=32.0).contains(&ratio), "halving ratio {ratio}");
}
