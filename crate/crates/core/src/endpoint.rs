//! End-point map `E(u) = x_u(T)`, its differential, the cost `C_T` and the
//! cost differential on the discretized control space.
//!
//! Differentials are exact derivatives of the RK4-discretized maps, obtained
//! by one backward costate sweep. The continuous formulas (midpoint-sampled
//! pushforwards, double quadrature for the cost) are kept as oracles in tests
//! and in [`d_end_point_midpoint`].

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flow::{self, fmt_num, Trajectory};
use crate::model::{Control, ProblemSpec};

/// `dE_u` as an `m x (N d)` matrix acting on interval-major control values.
#[derive(Clone, Debug)]
pub struct EndpointDifferential {
    pub matrix: DMatrix<f64>,
    /// Quadrature weight of each interval (`T / N`).
    pub weights: Vec<f64>,
    pub base_control: Control,
    pub base_trajectory: Trajectory,
}

impl EndpointDifferential {
    pub fn apply(&self, v: &Control) -> Result<DVector<f64>> {
        if !v.same_grid(&self.base_control) {
            return Err(Error::Shape("direction lives on a different grid".into()));
        }
        Ok(&self.matrix * DVector::from_column_slice(&v.values))
    }

    /// Coefficients of the functional `lambda^T dE_u`.
    pub fn adjoint_apply(&self, lambda: &DVector<f64>) -> DVector<f64> {
        self.matrix.transpose() * lambda
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in 0..self.matrix.nrows() {
            let row: Vec<String> = self.matrix.row(r).iter().map(|v| fmt_num(*v)).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Coefficient-space gradient of `C_T`: pairing with `v` is `vector . v`.
#[derive(Clone, Debug)]
pub struct CostGradient {
    pub vector: DVector<f64>,
    pub weights: Vec<f64>,
}

impl CostGradient {
    pub fn pair(&self, v: &Control) -> f64 {
        self.vector.dot(&DVector::from_column_slice(&v.values))
    }

    /// Riesz representative in discretized L^2.
    pub fn riesz(&self, channels: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.vector.len(),
            self.vector
                .iter()
                .enumerate()
                .map(|(j, g)| g / self.weights[j / channels]),
        )
    }
}

/// Everything first-order about a control in one forward/backward pass.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub endpoint: DVector<f64>,
    pub cost: f64,
    pub de: EndpointDifferential,
    pub dc: CostGradient,
}

pub fn end_point(spec: &ProblemSpec, u: &Control) -> Result<DVector<f64>> {
    spec.check_control(u)?;
    let fwd = flow::forward(spec, u, false);
    if !fwd.admissible() {
        return Err(fwd.inadmissible_error());
    }
    Ok(DVector::from_column_slice(fwd.final_state()))
}

/// `C_T(u) = 1/2 ∫ (|u|^2 - Q(x_u)) dt`; the control term is exact and the
/// potential term uses the RK4 stage quadrature (Simpson on each substep).
pub fn cost(spec: &ProblemSpec, u: &Control) -> Result<f64> {
    spec.check_control(u)?;
    let fwd = flow::forward(spec, u, false);
    if !fwd.admissible() {
        return Err(fwd.inadmissible_error());
    }
    Ok(fwd.cost)
}

/// End-point and cost together, or `None` when inadmissible.
pub(crate) fn evaluate(spec: &ProblemSpec, u: &Control) -> Option<(Vec<f64>, f64)> {
    let fwd = flow::forward(spec, u, false);
    fwd.admissible().then(|| (fwd.final_state().to_vec(), fwd.cost))
}

/// Value and coefficient gradient of `w . (E(u), C(u))` for a covector `w`
/// of length `m + 1`, or `None` when inadmissible.
pub(crate) fn weighted_gradient(
    spec: &ProblemSpec,
    u: &Control,
    weight: impl Fn(&[f64], f64) -> (f64, Vec<f64>),
) -> Option<(Vec<f64>, f64, f64, Vec<f64>)> {
    let fwd = flow::forward(spec, u, true);
    if !fwd.admissible() {
        return None;
    }
    let e = fwd.final_state().to_vec();
    let (value, seed) = weight(&e, fwd.cost);
    let (grad, _) = flow::adjoint_sweep(spec, u, &fwd, &seed, 1);
    Some((e, fwd.cost, value, grad))
}

pub fn linearize(spec: &ProblemSpec, u: &Control) -> Result<Linearization> {
    spec.check_control(u)?;
    let m = spec.dim();
    let fwd = flow::forward(spec, u, true);
    if !fwd.admissible() {
        return Err(fwd.inadmissible_error());
    }
    let mut seed = vec![0.0; (m + 1) * (m + 1)];
    for r in 0..=m {
        seed[r * (m + 1) + r] = 1.0;
    }
    let (grad, _) = flow::adjoint_sweep(spec, u, &fwd, &seed, m + 1);
    let n_u = spec.intervals * spec.channels();
    let matrix = DMatrix::from_row_slice(m, n_u, &grad[..m * n_u]);
    let weights = vec![u.step(); spec.intervals];
    let dc = CostGradient {
        vector: DVector::from_column_slice(&grad[m * n_u..]),
        weights: weights.clone(),
    };
    Ok(Linearization {
        endpoint: DVector::from_column_slice(fwd.final_state()),
        cost: fwd.cost,
        de: EndpointDifferential {
            matrix,
            weights,
            base_control: u.clone(),
            base_trajectory: fwd.to_trajectory(u),
        },
        dc,
    })
}

pub fn d_end_point(spec: &ProblemSpec, u: &Control) -> Result<EndpointDifferential> {
    linearize(spec, u).map(|l| l.de)
}

/// Gradient of `C_T` via the backward costate sweep.
pub fn d_cost(spec: &ProblemSpec, u: &Control) -> Result<CostGradient> {
    spec.check_control(u)?;
    let m = spec.dim();
    let fwd = flow::forward(spec, u, true);
    if !fwd.admissible() {
        return Err(fwd.inadmissible_error());
    }
    let mut seed = vec![0.0; m + 1];
    seed[m] = 1.0;
    let (grad, _) = flow::adjoint_sweep(spec, u, &fwd, &seed, 1);
    Ok(CostGradient {
        vector: DVector::from_vec(grad),
        weights: vec![u.step(); spec.intervals],
    })
}

/// Initial covector `p(0)` of the normal lift whose final covector is
/// `lambda`: the gradient of `lambda . E - C` with respect to `x_0`.
pub fn initial_costate(spec: &ProblemSpec, u: &Control, lambda: &DVector<f64>) -> Result<DVector<f64>> {
    spec.check_control(u)?;
    let m = spec.dim();
    if lambda.len() != m {
        return Err(Error::Shape("covector length does not match state dimension".into()));
    }
    let fwd = flow::forward(spec, u, true);
    if !fwd.admissible() {
        return Err(fwd.inadmissible_error());
    }
    let mut seed: Vec<f64> = lambda.iter().copied().collect();
    seed.push(-1.0);
    let (_, p0) = flow::adjoint_sweep(spec, u, &fwd, &seed, 1);
    Ok(DVector::from_vec(p0))
}

/// The continuous differential formula with each interval sampled at its
/// midpoint: column `(k, i)` is `h (P_{s_k,T})_* X_i(x_u(s_k))`. Error is
/// `O(h^2)` relative to [`d_end_point`].
pub fn d_end_point_midpoint(spec: &ProblemSpec, u: &Control) -> Result<DMatrix<f64>> {
    let vf = flow::variational_flow(spec, u)?;
    if vf.base.blowup_flag {
        return Err(Error::Inadmissible {
            time: *vf.base.times.last().unwrap_or(&0.0),
        });
    }
    let m = spec.dim();
    let d = spec.channels();
    let s = spec.substeps;
    let last = vf.fundamental.len() - 1;
    let h = u.step();
    let mut out = DMatrix::zeros(m, spec.intervals * d);
    for k in 0..spec.intervals {
        // midpoint node, or the mean of the two central nodes for odd substeps
        let (a, b) = if s % 2 == 0 {
            (k * s + s / 2, k * s + s / 2)
        } else {
            (k * s + s / 2, k * s + s / 2 + 1)
        };
        for i in 0..d {
            let mut col = DVector::zeros(m);
            for node in [a, b] {
                let p = vf.pushforward_nodes(node, last)?;
                col += p * spec.system.controls[i].eval(&vf.base.states[node]) * 0.5;
            }
            out.set_column(k * d + i, &(col * h));
        }
    }
    Ok(out)
}
