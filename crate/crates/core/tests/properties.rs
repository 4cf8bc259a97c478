//! Property tests for the structural invariants of each module.

use nalgebra::{DMatrix, DVector};
use ocplab::benchmarks;
use ocplab::classify::{self, ClassifyOptions, Verdict, TAU_NORMAL};
use ocplab::direct::{self, SolveOptions};
use ocplab::endpoint;
use ocplab::extremal;
use ocplab::flow;
use ocplab::json;
use ocplab::model::{self, ChartBounds, Control, ControlSystem, Potential, ProblemSpec, VectorField};
use ocplab::poly::{Monomial, Polynomial};
use ocplab::sweep::{self, CellLabel, GridSpec, SweepOptions, WarmOrder};
use proptest::prelude::*;

const M: usize = 3;

fn polynomial() -> impl Strategy<Value = Polynomial> {
    prop::collection::vec((-1.0..1.0f64, prop::collection::vec(0u32..=1, M)), 1..4)
        .prop_map(|terms| {
            let terms = terms.into_iter().map(|(coeff, powers)| Monomial { coeff, powers }).collect();
            Polynomial::from_terms(M, terms).unwrap()
        })
}

fn field() -> impl Strategy<Value = VectorField> {
    prop::collection::vec(polynomial(), M).prop_map(|c| VectorField::new(c).unwrap())
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, M)
}

fn benchmark_index() -> impl Strategy<Value = usize> {
    0..benchmarks::all().len()
}

fn control_for(spec: &ProblemSpec, raw: &[f64]) -> Control {
    let n = spec.intervals * spec.channels();
    let values = (0..n).map(|k| raw[k % raw.len()] * (1.0 + 0.1 * (k as f64).sin())).collect();
    Control::new(spec.horizon, spec.intervals, spec.channels(), values).unwrap()
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.amax()
}

fn light_solve() -> SolveOptions {
    SolveOptions {
        multistart_count: 4,
        ..SolveOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jacobian_matches_central_differences(f in field(), x in point()) {
        let jac = f.jacobian(&x);
        let eps = 1e-6;
        for j in 0..M {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += eps;
            xm[j] -= eps;
            let fd = (f.eval(&xp) - f.eval(&xm)) / (2.0 * eps);
            for i in 0..M {
                prop_assert!((fd[i] - jac[(i, j)]).abs() <= 1e-5 * (1.0 + jac[(i, j)].abs()));
            }
        }
        prop_assert_eq!(f.eval(&x).len(), M);
    }

    #[test]
    fn potential_gradient_matches_central_differences(q in polynomial(), x in point()) {
        let q = Potential::new(q, None);
        let g = q.gradient(&x);
        let eps = 1e-6;
        for j in 0..M {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += eps;
            xm[j] -= eps;
            let fd = (q.eval(&xp) - q.eval(&xm)) / (2.0 * eps);
            prop_assert!((fd - g[j]).abs() <= 1e-5 * (1.0 + g[j].abs()));
        }
    }

    #[test]
    fn bracket_is_antisymmetric(a in field(), b in field(), x in point()) {
        let ab = model::lie_bracket(&a, &b, &x).unwrap();
        let ba = model::lie_bracket(&b, &a, &x).unwrap();
        prop_assert_eq!(ab, -ba);
    }

    #[test]
    fn symbolic_bracket_matches_pointwise(a in field(), b in field(), x in point()) {
        let sym = a.bracket(&b).eval(&x);
        let num = model::lie_bracket(&a, &b, &x).unwrap();
        prop_assert!(max_abs(&(sym - num)) <= 1e-12);
    }

    #[test]
    fn jacobi_identity(a in field(), b in field(), c in field(), x in point()) {
        let r = a.bracket(&b.bracket(&c)).eval(&x)
            + b.bracket(&c.bracket(&a)).eval(&x)
            + c.bracket(&a.bracket(&b)).eval(&x);
        prop_assert!(max_abs(&r) <= 1e-10);
    }

    #[test]
    fn hormander_rank_is_monotone_and_bounded(drift in field(), x1 in field(), x in point()) {
        let sys = ControlSystem::new(drift, vec![x1], Potential::zero(M), ChartBounds::cube(M, 10.0)).unwrap();
        let ranks: Vec<usize> = (0..=4).map(|k| model::weak_hormander_rank(&sys, &x, k)).collect();
        prop_assert!(ranks.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(ranks.iter().all(|&r| r <= M));
    }

    #[test]
    fn control_norm_is_exact_and_refinement_preserves_it(
        values in prop::collection::vec(-2.0..2.0f64, 12),
        other in prop::collection::vec(-2.0..2.0f64, 12),
        factor in 1usize..5,
    ) {
        let u = Control::new(1.5, 6, 2, values.clone()).unwrap();
        let v = Control::new(1.5, 6, 2, other).unwrap();
        let exact: f64 = values.iter().map(|a| a * a).sum::<f64>() * 0.25;
        prop_assert!((u.norm_squared() - exact).abs() <= 1e-12 * (1.0 + exact));
        let (uf, vf) = (u.refine(factor), v.refine(factor));
        prop_assert!((uf.norm_squared() - exact).abs() <= 1e-12 * (1.0 + exact));
        let ip = model::l2_inner(&u, &v).unwrap();
        prop_assert!((model::l2_inner(&uf, &vf).unwrap() - ip).abs() <= 1e-12 * (1.0 + ip.abs()));
    }

    #[test]
    fn json_floats_round_trip(x in any::<f64>()) {
        let s = json::to_string(&x).unwrap();
        if x.is_finite() {
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        } else {
            prop_assert_eq!(s, "null");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trajectory_grid_and_flow_invariants(b in benchmark_index(), raw in prop::collection::vec(-1.0..1.0f64, 1..8)) {
        let spec = benchmarks::all()[b].spec().with_intervals(16);
        let u = control_for(&spec, &raw);
        let traj = flow::integrate(&spec, &u).unwrap();
        prop_assert!(!traj.blowup_flag);
        prop_assert_eq!(traj.times.len(), spec.intervals * spec.substeps + 1);
        prop_assert_eq!(traj.times[0], 0.0);
        prop_assert!((traj.times.last().unwrap() - spec.horizon).abs() <= 1e-12);
        prop_assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(&traj.states[0], &spec.x0);
        prop_assert!(traj.states.iter().flatten().all(|v| v.is_finite()));

        let vf = flow::variational_flow(&spec, &u).unwrap();
        let m = spec.dim();
        prop_assert_eq!(&vf.fundamental[0], &DMatrix::identity(m, m));
        prop_assert!(vf.fundamental.iter().all(|f| f.determinant().abs() > 1e-12));
        let n = vf.fundamental.len();
        let (r, s, t) = (n / 7, n / 3, n - 1);
        let err = (vf.pushforward_nodes(s, t).unwrap() * vf.pushforward_nodes(r, s).unwrap()
            - vf.pushforward_nodes(r, t).unwrap()).norm();
        prop_assert!(err <= 1e-9);
    }

    #[test]
    fn fundamental_matrix_matches_perturbed_initial_states(b in benchmark_index(), raw in prop::collection::vec(-1.0..1.0f64, 1..6)) {
        let spec = benchmarks::all()[b].spec().with_intervals(16);
        let u = control_for(&spec, &raw);
        let vf = flow::variational_flow(&spec, &u).unwrap();
        let mt = vf.fundamental.last().unwrap();
        let eps = 1e-5;
        for j in 0..spec.dim() {
            let mut sp = spec.clone();
            sp.x0[j] += eps;
            let xp = endpoint::end_point(&sp, &u).unwrap();
            sp.x0[j] -= 2.0 * eps;
            let xm = endpoint::end_point(&sp, &u).unwrap();
            let fd = (xp - xm) / (2.0 * eps);
            let col = mt.column(j).into_owned();
            prop_assert!((&fd - &col).norm() <= 1e-4 * col.norm().max(1.0));
        }
    }

    #[test]
    fn differential_rank_is_bounded(b in benchmark_index(), n in 1usize..4, raw in prop::collection::vec(-1.0..1.0f64, 1..6)) {
        let spec = benchmarks::all()[b].spec().with_intervals(n);
        let u = control_for(&spec, &raw);
        let (rank, sv) = classify::rank_dE(&spec, &u).unwrap();
        prop_assert!(rank <= spec.dim().min(n * spec.channels()));
        prop_assert!(sv.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn exp_jacobian_starts_at_identity(b in benchmark_index(), p0 in prop::collection::vec(-1.0..1.0f64, 3)) {
        let spec = benchmarks::all()[b].spec().with_intervals(16);
        let p0 = &p0[..spec.dim()];
        let j = extremal::exp_jacobian(&spec, p0).unwrap();
        let m = spec.dim();
        prop_assert_eq!(&j.dxdp[0], &DMatrix::zeros(m, m));
        prop_assert_eq!(&j.dxdx0[0], &DMatrix::identity(m, m));
    }

    #[test]
    fn extremals_conserve_energy_and_replay(b in benchmark_index(), p0 in prop::collection::vec(-1.0..1.0f64, 3)) {
        let spec = benchmarks::all()[b].spec();
        let arc = extremal::extremal_arc(&spec, &p0[..spec.dim()]).unwrap();
        prop_assert!(arc.hamiltonian_drift(&spec.system) <= 1e-6);
        let replayed = extremal::replay(&spec, &arc);
        let err = replayed
            .states
            .iter()
            .zip(&arc.states)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        prop_assert!(err <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn candidate_sets_are_sorted_and_feasible(x in -0.9..0.9f64, seed in 0u64..1000) {
        let spec = benchmarks::by_name("oscillator-potential").unwrap().spec().with_intervals(32);
        let opts = SolveOptions { seed, ..light_solve() };
        let set = direct::solve_fixed_endpoint(&spec, &[x], &opts).unwrap();
        prop_assert!(set.candidates.windows(2).all(|w| w[0].cost_value <= w[1].cost_value));
        for c in &set.candidates {
            let end = endpoint::end_point(&spec, &c.control).unwrap();
            prop_assert!((c.endpoint_residual - (end[0] - x).abs()).abs() <= 1e-12);
            prop_assert!((c.cost_value - endpoint::cost(&spec, &c.control).unwrap()).abs() <= 1e-12);
            if c.converged {
                prop_assert!(c.endpoint_residual <= opts.constraint_tol);
            }
        }
    }

    #[test]
    fn reports_are_internally_consistent(which in 0usize..3, raw in prop::collection::vec(-0.8..0.8f64, 3)) {
        let (name, target) = match which {
            0 => ("lq-scalar", vec![raw[0]]),
            1 => ("oscillator-potential", vec![raw[0]]),
            _ => ("martinet", vec![raw[0] * 0.5, raw[1], raw[2] * 0.1]),
        };
        let spec = benchmarks::by_name(name).unwrap().spec().with_intervals(32);
        let opts = ClassifyOptions { solve: light_solve(), ..ClassifyOptions::default() };
        let report = classify::classify_point(&spec, &target, &opts).unwrap();
        let m = spec.dim();
        let near = report.candidates.near_optimal();
        let near_ranks: Vec<usize> = near.iter().filter_map(|&i| report.analyses[i].as_ref().map(|a| a.rank)).collect();
        prop_assert_eq!(report.class_x, near_ranks.iter().copied().min());
        if report.tame == Verdict::True {
            prop_assert!(near_ranks.iter().all(|&r| r == m));
        }
        if report.smooth == Verdict::True {
            prop_assert!(report.fair == Verdict::True && report.tame == Verdict::True && report.conjugate_cleared);
        }
        if let (Some(xi), Some(class)) = (&report.xi, report.class_x) {
            prop_assert_eq!(xi.dimension(), m - class);
        }
        for (i, an) in report.analyses.iter().enumerate() {
            let Some(an) = an else { continue };
            if an.strictly_normal() {
                prop_assert!(an.abnormal.is_empty());
            }
            if an.strictly_abnormal() {
                prop_assert!(an.normal_fit.residual > TAU_NORMAL);
            }
            prop_assert_eq!(an.abnormal.len(), m - an.rank);
            let de = endpoint::d_end_point(&spec, &report.candidates.candidates[i].control).unwrap();
            let tau = 1e-8 * an.singular_values.first().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
            for k in &an.abnormal {
                let xi = DVector::from_column_slice(&k.lambda_t);
                prop_assert!((xi.norm() - 1.0).abs() <= 1e-12);
                prop_assert!((de.matrix.transpose() * &xi).norm() <= tau.max(1e-12));
            }
        }
    }

    #[test]
    fn warm_sweeps_never_lose_to_cold_ones(lo in -1.0..0.0f64, width in 0.5..1.0f64, seed in 0u64..1000) {
        let spec = benchmarks::by_name("oscillator-potential").unwrap().spec().with_intervals(16);
        let grid = GridSpec::line(0, lo, lo + width, 6, vec![0.0]).unwrap();
        let mut opts = SweepOptions::default();
        opts.solve.seed = seed;
        let warm = sweep::value_map(&spec, &grid, &opts).unwrap();
        opts.order = WarmOrder::Cold;
        let cold = sweep::value_map(&spec, &grid, &opts).unwrap();
        for k in 0..grid.len() {
            prop_assert!(warm.values[k] <= cold.values[k] + 1e-6);
            for map in [&warm, &cold] {
                prop_assert!(map.class_labels[k] == CellLabel::Unreached || map.values[k].is_finite());
            }
        }
        let fine = sweep::value_map(&spec.with_intervals(32), &grid, &opts).unwrap();
        for k in 0..grid.len() {
            prop_assert!(fine.values[k] <= cold.values[k] + 1e-6);
        }
    }
}
