//! Direct solution of `inf { C_T(u) : E(u) = x }` on the discretized control
//! space: augmented Lagrangian outer loop, L-BFGS inner loop, random
//! multistart, and clustering of the converged candidates.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::endpoint;
use crate::error::{Error, Result};
use crate::flow::fmt_num;
use crate::model::{l2_distance, Control, ProblemSpec};
use crate::optim::lbfgs;
use crate::par::{self, Execution};

/// Relative cost gap defining the near-optimal set.
pub const NEAR_OPTIMAL_GAP: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Tolerance on the L^2 norm of the Lagrangian gradient, relative to `1 + |u|`.
    pub grad_tol: f64,
    /// Tolerance on `|E(u) - x|`, relative to `max(1, |x|)`.
    pub constraint_tol: f64,
    pub multistart_count: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            penalty_init: 10.0,
            penalty_growth: 10.0,
            max_outer: 25,
            max_inner: 400,
            grad_tol: 1e-8,
            constraint_tol: 1e-6,
            multistart_count: 16,
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.penalty_init, self.grad_tol, self.constraint_tol];
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.penalty_growth > 1.0) {
            return Err(Error::config(
                "solve",
                "tolerances and penalty must be positive, penalty_growth > 1",
            ));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::config("solve", "iteration limits must be positive"));
        }
        Ok(())
    }

    fn absolute_constraint_tol(&self, target: &[f64]) -> f64 {
        let scale = target.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
        self.constraint_tol * scale
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Candidate {
    pub control: Control,
    pub endpoint_residual: f64,
    pub cost_value: f64,
    pub converged: bool,
    /// `lambda_T` estimated from the augmented Lagrangian multiplier.
    pub multiplier_estimate: Vec<f64>,
    /// L^2 norm of the Lagrangian gradient at exit.
    pub stationarity: f64,
    /// Index of the start (injected seeds first, then random starts).
    pub start: usize,
    /// Inner iterations summed over the outer loop.
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    Unreachable,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateSet {
    pub target: Vec<f64>,
    /// Sorted ascending by cost; converged candidates first.
    pub candidates: Vec<Candidate>,
    /// Partition of the converged candidates (indices into `candidates`)
    /// by single linkage at L^2 distance `1e-2 * max(1, |u|)`.
    pub clusters: Vec<Vec<usize>>,
    pub status: SolveStatus,
}

impl CandidateSet {
    pub fn best(&self) -> Option<&Candidate> {
        self.candidates.first().filter(|c| c.converged)
    }

    /// Minimum converged cost, `+inf` when none converged.
    pub fn value(&self) -> f64 {
        self.best().map_or(f64::INFINITY, |c| c.cost_value)
    }

    /// Indices of converged candidates within the near-optimal cost gap.
    pub fn near_optimal(&self) -> Vec<usize> {
        let v = self.value();
        if !v.is_finite() {
            return Vec::new();
        }
        let cut = v + NEAR_OPTIMAL_GAP * (1.0 + v.abs());
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.converged && c.cost_value <= cut)
            .map(|(i, _)| i)
            .collect()
    }

    /// Clusters restricted to near-optimal candidates.
    pub fn near_optimal_clusters(&self) -> Vec<Vec<usize>> {
        let near = self.near_optimal();
        self.clusters
            .iter()
            .map(|c| c.iter().copied().filter(|i| near.contains(i)).collect::<Vec<_>>())
            .filter(|c: &Vec<usize>| !c.is_empty())
            .collect()
    }
}

impl CandidateSet {
    /// Interval values of every candidate: `candidate,k,t,u1..ud` with `t`
    /// the left end of interval `k`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.candidates.first().map_or(0, |c| c.control.channels);
        write!(w, "candidate,k,t")?;
        for i in 1..=d {
            write!(w, ",u{i}")?;
        }
        writeln!(w)?;
        for (j, c) in self.candidates.iter().enumerate() {
            let h = c.control.step();
            for k in 0..c.control.intervals {
                write!(w, "{j},{k},{}", fmt_num(k as f64 * h))?;
                for v in c.control.interval(k) {
                    write!(w, ",{}", fmt_num(*v))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Metadata without the control values.
    pub fn summary_json(&self) -> serde_json::Value {
        let cands: Vec<_> = self
            .candidates
            .iter()
            .map(|c| {
                serde_json::json!({
                    "start": c.start,
                    "converged": c.converged,
                    "cost_value": c.cost_value,
                    "endpoint_residual": c.endpoint_residual,
                    "stationarity": c.stationarity,
                    "multiplier_estimate": c.multiplier_estimate,
                    "iterations": c.iterations,
                    "control_norm": c.control.norm(),
                })
            })
            .collect();
        serde_json::json!({
            "target": self.target,
            "status": self.status,
            "value": self.value(),
            "near_optimal": self.near_optimal(),
            "clusters": self.clusters,
            "candidates": cands,
        })
    }
}

/// Solves the fixed-endpoint problem from random starts.
pub fn solve_fixed_endpoint(spec: &ProblemSpec, target: &[f64], opts: &SolveOptions) -> Result<CandidateSet> {
    solve_seeded(spec, target, opts, &[])
}

/// As [`solve_fixed_endpoint`], with extra starting controls tried first.
/// Seeds on another grid are resampled onto the problem grid.
pub fn solve_seeded(
    spec: &ProblemSpec,
    target: &[f64],
    opts: &SolveOptions,
    seeds: &[Control],
) -> Result<CandidateSet> {
    opts.validate()?;
    if target.len() != spec.dim() {
        return Err(Error::Shape(format!(
            "target has length {}, state dimension is {}",
            target.len(),
            spec.dim()
        )));
    }
    if !spec.system.chart.contains(target) {
        return Err(Error::InvalidModel("target lies outside the chart bounds".into()));
    }
    let starts = starting_controls(spec, target, opts, seeds);
    let results = par::map_indexed(opts.execution, starts.len(), |k| {
        solve_from(spec, target, opts, starts[k].clone(), k)
    });
    Ok(assemble(target, results.into_iter().flatten().collect()))
}

fn starting_controls(spec: &ProblemSpec, target: &[f64], opts: &SolveOptions, seeds: &[Control]) -> Vec<Control> {
    let mut starts: Vec<Control> = seeds
        .iter()
        .map(|s| {
            let r = s.resample(spec.intervals);
            Control { horizon: spec.horizon, ..r }
        })
        .filter(|s| s.channels == spec.channels())
        .collect();
    let dist = target
        .iter()
        .zip(&spec.x0)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = dist / spec.horizon;
    let n = spec.intervals * spec.channels();
    if scale == 0.0 {
        if starts.is_empty() || opts.multistart_count > 0 {
            starts.push(spec.zero_control());
        }
        return starts;
    }
    for k in 0..opts.multistart_count {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64));
        let values = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        starts.push(Control::new(spec.horizon, spec.intervals, spec.channels(), values).expect("grid matches"));
    }
    starts
}

/// One augmented Lagrangian run. `None` when the start is inadmissible.
fn solve_from(spec: &ProblemSpec, target: &[f64], opts: &SolveOptions, start: Control, index: usize) -> Option<Candidate> {
    let m = spec.dim();
    let h = start.step();
    let ctol = opts.absolute_constraint_tol(target);
    let dot = |a: &[f64], b: &[f64]| h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let mut u = start;
    let mut mu = vec![0.0; m];
    let mut rho = opts.penalty_init;
    let mut prev_res = f64::INFINITY;
    let mut stationarity = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..opts.max_outer {
        let template = u.clone();
        let merit = |x: &[f64]| {
            let ctrl = Control {
                values: x.to_vec(),
                ..template.clone()
            };
            endpoint::weighted_gradient(spec, &ctrl, |e, c| {
                let mut value = c;
                let mut seed = vec![0.0; m + 1];
                for j in 0..m {
                    let r = e[j] - target[j];
                    value += mu[j] * r + 0.5 * rho * r * r;
                    seed[j] = mu[j] + rho * r;
                }
                seed[m] = 1.0;
                (value, seed)
            })
            // Riesz representative: divide coefficient gradient by h
            .map(|(_, _, v, g)| (v, g.into_iter().map(|gi| gi / h).collect::<Vec<_>>()))
        };
        let gtol = opts.grad_tol * (1.0 + u.norm());
        // loose inner solves while the constraint is far from satisfied
        let inner_tol = gtol.max((0.1 * prev_res).min(1e-3));
        let res = lbfgs(merit, u.values.clone(), dot, inner_tol, opts.max_inner)?;
        u.values = res.x;
        stationarity = res.grad_norm;
        iterations += res.iters;


        let (e, _) = endpoint::evaluate(spec, &u)?;
        let r: Vec<f64> = e.iter().zip(target).map(|(a, b)| a - b).collect();
        let res_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..m {
            mu[j] += rho * r[j];
        }
        if res_norm <= ctol && stationarity <= gtol {
            break;
        }
        if res_norm > 0.25 * prev_res {
            rho *= opts.penalty_growth;
        }
        prev_res = res_norm;
        if !rho.is_finite() || rho > 1e14 {
            break;
        }
    }

    restore_feasibility(spec, target, &mut u, ctol);
    let (e, c) = endpoint::evaluate(spec, &u)?;
    let residual = e
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    // stationarity reads dC + mu dE = 0, so lambda_T = -mu
    let multiplier_estimate = mu.iter().map(|v| -v).collect();
    let gtol = opts.grad_tol * (1.0 + u.norm());
    Some(Candidate {
        endpoint_residual: residual,
        cost_value: c,
        converged: residual <= ctol && stationarity <= 100.0 * gtol,
        multiplier_estimate,
        stationarity,
        control: u,
        start: index,
        iterations,
    })
}

/// Minimal-norm Gauss-Newton corrections onto `E(u) = x` while `dE_u` has
/// full rank. Leaves `u` unchanged when a step would not reduce the residual.
fn restore_feasibility(spec: &ProblemSpec, target: &[f64], u: &mut Control, ctol: f64) {
    for _ in 0..4 {
        let Ok(lin) = endpoint::linearize(spec, u) else { return };
        let r = &lin.endpoint - DVector::from_column_slice(target);
        let rn = r.norm();
        if rn <= 1e-3 * ctol {
            return;
        }
        let a = &lin.de.matrix;
        let gram: DMatrix<f64> = a * a.transpose();
        let Some(y) = gram.lu().solve(&r) else { return };
        let delta = a.transpose() * y;
        let trial = Control {
            values: u.values.iter().zip(delta.iter()).map(|(v, d)| v - d).collect(),
            ..u.clone()
        };
        match endpoint::evaluate(spec, &trial) {
            Some((e, _)) => {
                let tn = e
                    .iter()
                    .zip(target)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if tn < rn {
                    *u = trial;
                } else {
                    return;
                }
            }
            None => return,
        }
    }
}

fn assemble(target: &[f64], mut candidates: Vec<Candidate>) -> CandidateSet {
    candidates.sort_by(|a, b| {
        b.converged
            .cmp(&a.converged)
            .then(a.cost_value.total_cmp(&b.cost_value))
            .then(a.start.cmp(&b.start))
    });
    let conv: Vec<usize> = (0..candidates.len()).filter(|&i| candidates[i].converged).collect();
    // union-find over converged candidates
    let mut parent: Vec<usize> = (0..candidates.len()).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for (a, &i) in conv.iter().enumerate() {
        for &j in &conv[a + 1..] {
            let (ui, uj) = (&candidates[i].control, &candidates[j].control);
            let delta = 1e-2 * ui.norm().max(uj.norm()).max(1.0);
            if l2_distance(ui, uj).map_or(false, |d| d < delta) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    for &i in &conv {
        let r = find(&mut parent, i);
        match roots.iter().position(|&x| x == r) {
            Some(k) => clusters[k].push(i),
            None => {
                roots.push(r);
                clusters.push(vec![i]);
            }
        }
    }
    let status = if conv.is_empty() {
        SolveStatus::Unreachable
    } else {
        SolveStatus::Converged
    };
    CandidateSet {
        target: target.to_vec(),
        candidates,
        clusters,
        status,
    }
}

/// Numeric value function at `target`: minimum converged cost, or `+inf`.
pub fn value_estimate(spec: &ProblemSpec, target: &[f64], opts: &SolveOptions) -> f64 {
    solve_fixed_endpoint(spec, target, opts).map_or(f64::INFINITY, |s| s.value())
}

/// Values on successively finer grids; each level is seeded with the best
/// control of the previous one, which embeds exactly into the finer grid.
pub fn value_refinement(
    spec: &ProblemSpec,
    target: &[f64],
    opts: &SolveOptions,
    levels: &[usize],
) -> Result<Vec<f64>> {
    let mut seeds: Vec<Control> = Vec::new();
    let mut out = Vec::with_capacity(levels.len());
    for &n in levels {
        let s = spec.with_intervals(n);
        let set = solve_seeded(&s, target, opts, &seeds)?;
        out.push(set.value());
        if let Some(b) = set.best() {
            seeds = vec![b.control.clone()];
        }
    }
    Ok(out)
}
