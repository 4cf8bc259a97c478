//! Quick closed-form oracle checks on the builtin benchmarks, reported as a
//! pass/fail table.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::benchmarks;
use crate::classify;
use crate::direct::{self, SolveOptions};
use crate::endpoint;
use crate::extremal;
use crate::flow;
use crate::model::{Control, ProblemSpec};
use crate::par::Execution;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteRow {
    pub check: String,
    pub benchmark: String,
    pub passed: bool,
    pub error: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

fn row(check: &str, bench: &str, error: f64, tolerance: f64, started: Instant) -> SuiteRow {
    SuiteRow {
        check: check.into(),
        benchmark: bench.into(),
        passed: error <= tolerance,
        error,
        tolerance,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn random_control(spec: &ProblemSpec, rng: &mut ChaCha8Rng, scale: f64) -> Control {
    let n = spec.intervals * spec.channels();
    let values = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    Control::new(spec.horizon, spec.intervals, spec.channels(), values).expect("grid matches")
}

/// Runs every check; failures to compute count as failed rows with infinite error.
pub fn run_suite(execution: Execution, seed: u64) -> Vec<SuiteRow> {
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = SolveOptions {
        seed,
        execution,
        ..SolveOptions::default()
    };

    for b in benchmarks::all() {
        let spec = b.spec();
        let t0 = Instant::now();
        let u = random_control(&spec, &mut rng, 0.5);
        let mut worst: f64 = 0.0;
        if let Ok(lin) = endpoint::linearize(&spec, &u) {
            for _ in 0..3 {
                let v = random_control(&spec, &mut rng, 1.0);
                let eps = 1e-6;
                let fd = endpoint::end_point(&spec, &u.axpy(eps, &v))
                    .and_then(|a| endpoint::end_point(&spec, &u.axpy(-eps, &v)).map(|b| (a - b) / (2.0 * eps)));
                match (fd, lin.de.apply(&v)) {
                    (Ok(fd), Ok(an)) => worst = worst.max((&fd - &an).norm() / an.norm().max(1e-8)),
                    _ => worst = f64::INFINITY,
                }
            }
        } else {
            worst = f64::INFINITY;
        }
        rows.push(row("dE central differences", b.name, worst, 1e-5, t0));

        let t0 = Instant::now();
        let err = flow::variational_flow(&spec, &u)
            .and_then(|vf| {
                let n = vf.fundamental.len();
                let (r, s, t) = (n / 5, n / 2, n - 1);
                let lhs = vf.pushforward_nodes(s, t)? * vf.pushforward_nodes(r, s)?;
                Ok((lhs - vf.pushforward_nodes(r, t)?).norm())
            })
            .unwrap_or(f64::INFINITY);
        rows.push(row("pushforward composition", b.name, err, 1e-9, t0));

        let t0 = Instant::now();
        let p0: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let drift = extremal::extremal_arc(&spec, &p0).map_or(f64::INFINITY, |a| a.hamiltonian_drift(&spec.system));
        rows.push(row("hamiltonian conservation", b.name, drift, 1e-6, t0));
    }

    let lq = benchmarks::by_name("lq-scalar").expect("builtin");
    let spec = lq.spec();
    for x in [-0.8, 0.5, 1.0] {
        let t0 = Instant::now();
        let v = direct::value_estimate(&spec, &[x], &opts);
        rows.push(row(&format!("value at {x}"), lq.name, (v - x * x / 2.0).abs(), 1e-4, t0));
    }

    let di = benchmarks::by_name("double-integrator").expect("builtin");
    // piecewise-constant controls shift the Gramian by O(h^2); refine the grid
    let spec = di.spec().with_intervals(256);
    let g = benchmarks::double_integrator_gramian(spec.horizon);
    for _ in 0..3 {
        let t0 = Instant::now();
        let xi = DVector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let oracle = 0.5 * xi.dot(&(g.clone().lu().solve(&xi).expect("Gramian invertible")));
        let v = direct::value_estimate(&spec, xi.as_slice(), &opts);
        rows.push(row("gramian value", di.name, (v - oracle).abs(), 1e-3, t0));
    }

    let t0 = Instant::now();
    let osc = benchmarks::by_name("oscillator-potential").expect("builtin").spec();
    let err = extremal::conjugate_times(&osc.with_horizon(4.0), &[0.5])
        .ok()
        .and_then(|t| t.first().copied())
        .map_or(f64::INFINITY, |t| (t - std::f64::consts::PI).abs());
    rows.push(row("first conjugate time", "oscillator-potential", err, 1e-3, t0));

    let t0 = Instant::now();
    let err = extremal::exponential(&osc, 1.0, &[0.8]).map_or(f64::INFINITY, |x| (x[0] - 0.8 * 1f64.sin()).abs());
    rows.push(row("exponential x(t) = p0 sin t", "oscillator-potential", err, 1e-8, t0));

    let t0 = Instant::now();
    let heis = benchmarks::by_name("heisenberg").expect("builtin").spec();
    let z = 0.1;
    let v = direct::value_estimate(&heis, &[0.0, 0.0, z], &opts);
    let oracle = 4.0 * std::f64::consts::PI * z / (2.0 * heis.horizon);
    rows.push(row("value on the z-axis (relative)", "heisenberg", (v - oracle).abs() / oracle, 2e-2, t0));

    let t0 = Instant::now();
    let mart = benchmarks::by_name("martinet").expect("builtin").spec().with_intervals(128);
    let u = benchmarks::martinet_abnormal_control(&mart);
    let err = endpoint::end_point(&mart, &u)
        .and_then(|x| classify::multipliers(&mart, &u, x.as_slice()))
        .map_or(f64::INFINITY, |an| {
            let cos = an.abnormal.first().map_or(0.0, |m| m.lambda_t[2].abs());
            (an.rank as f64 - 2.0).abs() + (0.999 - cos).max(0.0)
        });
    rows.push(row("abnormal rank 2 and covector dz", "martinet", err, 0.0, t0));

    rows
}

/// Fixed-width table, one row per check.
pub fn format_table(rows: &[SuiteRow]) -> String {
    let mut out = format!("{:<6} {:<22} {:<34} {:>12} {:>10}\n", "status", "benchmark", "check", "error", "tol");
    for r in rows {
        out.push_str(&format!(
            "{:<6} {:<22} {:<34} {:>12.3e} {:>10.1e}\n",
            if r.passed { "pass" } else { "FAIL" },
            r.benchmark,
            r.check,
            r.error,
            r.tolerance
        ));
    }
    out
}
