//! Qualitative properties: integrator order, weak continuity of the
//! end-point map, local optimality of short normal arcs, semicontinuity of
//! the rank and stationarity of converged candidates.

use ocplab::benchmarks;
use ocplab::classify::{self, TAU_NORMAL};
use ocplab::direct::{self, SolveOptions};
use ocplab::endpoint;
use ocplab::extremal;
use ocplab::model::Control;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn rk4_is_fourth_order_on_the_oscillator_lift() {
    // x(t) = p0 sin t along the Hamiltonian flow of the oscillator
    let base = benchmarks::by_name("oscillator-potential").unwrap().spec();
    let p0 = 0.8;
    let err = |substeps: usize| {
        let mut spec = base.with_intervals(4);
        spec.substeps = substeps;
        let x = extremal::exponential(&spec, spec.horizon, &[p0]).unwrap();
        (x[0] - p0 * spec.horizon.sin()).abs()
    };
    for s in [1, 2, 4] {
        let ratio = err(s) / err(2 * s);
        assert!((8.0..=32.0).contains(&ratio), "substeps {s}: ratio {ratio}");
    }
}

#[test]
fn oscillating_controls_weakly_vanish_on_driftless_benchmarks() {
    for name in ["lq-scalar", "heisenberg", "martinet"] {
        let spec = benchmarks::by_name(name).unwrap().spec().with_intervals(1024);
        let e0 = endpoint::end_point(&spec, &spec.zero_control()).unwrap();
        let gaps: Vec<f64> = [1usize, 3, 7, 15, 31]
            .iter()
            .map(|&n| {
                let u = Control::from_fn(spec.horizon, spec.intervals, spec.channels(), |t| {
                    let mut v = vec![0.0; spec.channels()];
                    v[0] = (n as f64 * std::f64::consts::PI * t / spec.horizon).sin();
                    v
                });
                (endpoint::end_point(&spec, &u).unwrap() - &e0).norm()
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{name}: {gaps:?}");
        assert!(gaps[4] < 0.05 * gaps[0], "{name}: {gaps:?}");
    }
}

#[test]
fn short_normal_arcs_are_locally_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let opts = SolveOptions {
        multistart_count: 8,
        ..SolveOptions::default()
    };
    for name in ["double-integrator", "oscillator-potential", "heisenberg", "martinet"] {
        let spec = benchmarks::by_name(name).unwrap().spec().with_horizon(0.25).with_intervals(32);
        let p0: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let arc = extremal::extremal_arc(&spec, &p0).unwrap();
        let v = direct::value_estimate(&spec, arc.final_state(), &opts);
        assert!(v >= arc.cost - 1e-4, "{name}: direct {v} below arc {}", arc.cost);
    }
}

#[test]
fn rank_is_lower_semicontinuous_along_converging_controls() {
    let spec = benchmarks::by_name("martinet").unwrap().spec().with_intervals(64);
    let u = benchmarks::martinet_abnormal_control(&spec);
    let (rank_u, _) = classify::rank_dE(&spec, &u).unwrap();
    assert_eq!(rank_u, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = Control::new(
        spec.horizon,
        spec.intervals,
        2,
        (0..2 * spec.intervals).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    for k in 0..8 {
        let un = u.axpy(0.5f64.powi(k), &w);
        let (rank_n, _) = classify::rank_dE(&spec, &un).unwrap();
        assert!(rank_n >= rank_u, "step {k}: rank {rank_n}");
    }
}

#[test]
fn converged_candidates_are_stationary_or_abnormal() {
    let opts = SolveOptions {
        multistart_count: 4,
        ..SolveOptions::default()
    };
    for b in benchmarks::all() {
        let spec = b.spec();
        for target in &b.targets {
            let set = direct::solve_fixed_endpoint(&spec, target, &opts).unwrap();
            for c in set.candidates.iter().filter(|c| c.converged) {
                let an = classify::multipliers(&spec, &c.control, target).unwrap();
                assert!(
                    an.normal_fit.residual <= TAU_NORMAL || !an.abnormal.is_empty(),
                    "{} {target:?}: residual {}",
                    b.name,
                    an.normal_fit.residual
                );
            }
        }
    }
}
