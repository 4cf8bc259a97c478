//! Lagrange multipliers, ranks of the end-point differential and the point
//! taxonomy (fair, tame, smooth) built on top of the direct solver.
//!
//! All dual norms are those of discretized L^2: a functional with
//! coefficient vector `g` has norm `|g| / sqrt(h)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::direct::{self, CandidateSet, SolveOptions, SolveStatus};
use crate::endpoint::{self, Linearization};
use crate::error::{Error, Result};
use crate::extremal;
use crate::flow;
use crate::linalg::{left_null_space, lstsq, numerical_rank, singular_values};
use crate::model::{Control, ProblemSpec};

/// Normalized least-squares residual below which a control admits a normal lift.
pub const TAU_NORMAL: f64 = 1e-4;
/// Relative agreement between shot and direct costs that certifies a verdict.
pub const CROSS_CHECK_RTOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub lambda_t: Vec<f64>,
    /// `-1` for normal, `0` for abnormal.
    pub nu: i8,
    pub residual: f64,
}

/// Multiplier data of one control.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiplierAnalysis {
    /// Least-squares fit of `lambda^T dE = dC`, whatever its residual.
    pub normal_fit: Multiplier,
    /// Unit covectors annihilating the image of `dE_u`.
    pub abnormal: Vec<Multiplier>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

impl MultiplierAnalysis {
    pub fn admits_normal(&self) -> bool {
        self.normal_fit.residual <= TAU_NORMAL
    }

    pub fn strictly_normal(&self) -> bool {
        self.admits_normal() && self.abnormal.is_empty()
    }

    pub fn strictly_abnormal(&self) -> bool {
        !self.admits_normal() && !self.abnormal.is_empty()
    }

    /// Normal and abnormal multipliers, normal first.
    pub fn all(&self) -> Vec<Multiplier> {
        let mut out = Vec::new();
        if self.admits_normal() {
            out.push(self.normal_fit.clone());
        }
        out.extend(self.abnormal.iter().cloned());
        out
    }
}

/// Abnormal directions and their affine shift, at `x` and pulled back to `x_0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AbnormalStructure {
    /// Orthonormal basis of `ker (dE_u)^*`.
    pub kernel_basis: Vec<Vec<f64>>,
    /// Normal covector `eta_x` orthogonal to the kernel, when one exists.
    pub xi_affine: Option<Vec<f64>>,
    pub pulled_back: PulledBack,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PulledBack {
    pub kernel_basis: Vec<Vec<f64>>,
    pub xi_affine: Option<Vec<f64>>,
}

impl AbnormalStructure {
    pub fn dimension(&self) -> usize {
        self.kernel_basis.len()
    }
}

fn dual_norm(coeffs: &DVector<f64>, h: f64) -> f64 {
    coeffs.norm() / h.sqrt()
}

/// Numerical rank of `dE_u` and its singular values (descending).
#[allow(non_snake_case)]
pub fn rank_dE(spec: &ProblemSpec, u: &Control) -> Result<(usize, Vec<f64>)> {
    let de = endpoint::d_end_point(spec, u)?;
    let sv = singular_values(&de.matrix);
    Ok((numerical_rank(&sv), sv))
}

fn check_reaches(lin: &Linearization, x: &[f64]) -> Result<()> {
    if x.len() != lin.endpoint.len() {
        return Err(Error::Shape("target length does not match state dimension".into()));
    }
    let gap = (&lin.endpoint - DVector::from_column_slice(x)).norm();
    let scale = DVector::from_column_slice(x).norm().max(1.0);
    if gap > 1e-4 * scale {
        return Err(Error::Degenerate(format!("control ends at distance {gap:e} from the target")));
    }
    Ok(())
}

fn analyze(lin: &Linearization) -> MultiplierAnalysis {
    let a = &lin.de.matrix;
    let g = &lin.dc.vector;
    let h = lin.dc.weights.first().copied().unwrap_or(1.0);
    let at = a.transpose();
    let lambda = lstsq(&at, g);
    let resid = dual_norm(&(&at * &lambda - g), h) / (1.0 + dual_norm(g, h));
    let (kernel, sv) = left_null_space(a);
    let abnormal = kernel
        .column_iter()
        .map(|xi| Multiplier {
            lambda_t: xi.iter().copied().collect(),
            nu: 0,
            residual: dual_norm(&(&at * xi), h),
        })
        .collect();
    MultiplierAnalysis {
        normal_fit: Multiplier {
            lambda_t: lambda.iter().copied().collect(),
            nu: -1,
            residual: resid,
        },
        abnormal,
        rank: numerical_rank(&sv),
        singular_values: sv,
    }
}

/// Lagrange multipliers of `u` as a critical point of `C_T` on `E = x`.
pub fn multipliers(spec: &ProblemSpec, u: &Control, x: &[f64]) -> Result<MultiplierAnalysis> {
    let lin = endpoint::linearize(spec, u)?;
    check_reaches(&lin, x)?;
    Ok(analyze(&lin))
}

pub fn xi_space(spec: &ProblemSpec, u: &Control, x: &[f64]) -> Result<AbnormalStructure> {
    let lin = endpoint::linearize(spec, u)?;
    check_reaches(&lin, x)?;
    let an = analyze(&lin);
    let vf = flow::variational_flow(spec, u)?;
    let pull = |c: &[f64]| -> Result<Vec<f64>> {
        let v = vf.pullback_covector(0.0, spec.horizon, &DVector::from_column_slice(c))?;
        Ok(v.iter().copied().collect())
    };
    let kernel_basis: Vec<Vec<f64>> = an.abnormal.iter().map(|m| m.lambda_t.clone()).collect();
    let xi_affine = an.admits_normal().then(|| an.normal_fit.lambda_t.clone());
    let pulled_back = PulledBack {
        kernel_basis: kernel_basis.iter().map(|k| pull(k)).collect::<Result<_>>()?,
        xi_affine: xi_affine.as_deref().map(pull).transpose()?,
    };
    Ok(AbnormalStructure {
        kernel_basis,
        xi_affine,
        pulled_back,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    True,
    False,
    Inconclusive,
}

impl Verdict {
    fn from_bool(b: bool) -> Self {
        if b {
            Verdict::True
        } else {
            Verdict::False
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Confidence {
    /// Direct solver and shooting agree on the value.
    CertifiedNumeric,
    /// Verdicts rest on multistart coverage alone.
    Heuristic,
    /// No converged candidate.
    Inconclusive,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyOptions {
    pub solve: SolveOptions,
    /// Extra starting controls for the direct solver.
    #[serde(skip)]
    pub seeds: Vec<Control>,
}

/// The shot extremal used for the smoothness test.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShotSummary {
    pub initial_covector: Vec<f64>,
    pub cost: f64,
    pub final_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub target: Vec<f64>,
    pub candidates: CandidateSet,
    /// Multiplier analysis per candidate; `None` for non-converged ones.
    pub analyses: Vec<Option<MultiplierAnalysis>>,
    /// Minimum rank over the near-optimal candidates.
    pub class_x: Option<usize>,
    pub fair: Verdict,
    pub tame: Verdict,
    pub smooth: Verdict,
    pub conjugate_cleared: bool,
    pub conjugate_times: Vec<f64>,
    pub shot: Option<ShotSummary>,
    /// Ξ-data of the near-optimal candidate of least rank.
    pub xi: Option<AbnormalStructure>,
    pub confidence: Confidence,
    pub notes: Vec<String>,
}

impl ClassificationReport {
    pub fn value(&self) -> f64 {
        self.candidates.value()
    }

    pub fn ranks(&self) -> Vec<Option<usize>> {
        self.analyses.iter().map(|a| a.as_ref().map(|a| a.rank)).collect()
    }

    /// Normal multiplier `lambda_T` of the best candidate, if it has one.
    pub fn normal_covector(&self) -> Option<&[f64]> {
        match self.analyses.first() {
            Some(Some(a)) if a.admits_normal() && self.candidates.best().is_some() => Some(&a.normal_fit.lambda_t),
            _ => None,
        }
    }

    /// JSON summary; `verbosity >= 1` adds per-candidate multipliers,
    /// `verbosity >= 2` singular values, Ξ-data and control values.
    pub fn to_json(&self, verbosity: u8) -> Value {
        let mut v = json!({
            "target": self.target,
            "status": self.candidates.status,
            "value": self.value(),
            "class_x": self.class_x,
            "fair": self.fair,
            "tame": self.tame,
            "smooth": self.smooth,
            "conjugate_cleared": self.conjugate_cleared,
            "conjugate_times": self.conjugate_times,
            "confidence": self.confidence,
            "near_optimal": self.candidates.near_optimal(),
            "clusters": self.candidates.clusters,
            "ranks": self.ranks(),
            "normal_covector": self.normal_covector(),
            "shot": self.shot,
            "notes": self.notes,
        });
        if verbosity >= 1 {
            let per: Vec<Value> = self
                .candidates
                .candidates
                .iter()
                .zip(&self.analyses)
                .map(|(c, a)| {
                    let mut e = json!({
                        "start": c.start,
                        "converged": c.converged,
                        "cost_value": c.cost_value,
                        "endpoint_residual": c.endpoint_residual,
                    });
                    if let Some(a) = a {
                        e["rank"] = json!(a.rank);
                        e["normal"] = json!(a.normal_fit);
                        e["abnormal"] = json!(a.abnormal);
                        e["strictly_normal"] = json!(a.strictly_normal());
                        e["strictly_abnormal"] = json!(a.strictly_abnormal());
                        if verbosity >= 2 {
                            e["singular_values"] = json!(a.singular_values);
                        }
                    }
                    if verbosity >= 2 {
                        e["control"] = json!(c.control.values);
                    }
                    e
                })
                .collect();
            v["candidates"] = Value::Array(per);
        }
        if verbosity >= 2 {
            v["xi"] = json!(self.xi);
        }
        v
    }
}

/// Solves for `x_target` and labels the point.
///
/// `fair` needs exactly one near-optimal cluster whose best candidate admits a
/// normal multiplier; `tame` needs full rank on every near-optimal candidate;
/// `smooth` adds that the normal extremal, shot from the fitted covector, has
/// no conjugate time in `(0, T]`. When the direct solver finds nothing, the
/// extremal is still shot from `p_0 = 0` so that a conjugate time can refute
/// smoothness.
pub fn classify_point(spec: &ProblemSpec, x_target: &[f64], opts: &ClassifyOptions) -> Result<ClassificationReport> {
    let set = direct::solve_seeded(spec, x_target, &opts.solve, &opts.seeds)?;
    let m = spec.dim();
    let mut notes = Vec::new();

    let analyses: Vec<Option<MultiplierAnalysis>> = set
        .candidates
        .iter()
        .map(|c| {
            c.converged
                .then(|| endpoint::linearize(spec, &c.control).ok().map(|l| analyze(&l)))
                .flatten()
        })
        .collect();

    let near = set.near_optimal();
    let near_ranks: Vec<(usize, usize)> = near
        .iter()
        .filter_map(|&i| analyses[i].as_ref().map(|a| (i, a.rank)))
        .collect();
    let class_x = near_ranks.iter().map(|r| r.1).min();

    if set.status == SolveStatus::Unreachable {
        notes.push("no converged candidate; verdicts inconclusive".into());
        let (cleared, times, shot) = shot_check(spec, x_target, &vec![0.0; m], &mut notes);
        let smooth = if !times.is_empty() { Verdict::False } else { Verdict::Inconclusive };
        return Ok(ClassificationReport {
            target: x_target.to_vec(),
            analyses,
            class_x: None,
            fair: Verdict::Inconclusive,
            tame: Verdict::Inconclusive,
            smooth,
            conjugate_cleared: cleared && shot.is_some(),
            conjugate_times: times,
            shot,
            xi: None,
            confidence: Confidence::Inconclusive,
            notes,
            candidates: set,
        });
    }

    let clusters = set.near_optimal_clusters();
    let best = &analyses[0];
    let best_normal = best.as_ref().is_some_and(|a| a.admits_normal());
    let fair = Verdict::from_bool(clusters.len() == 1 && best_normal);
    let tame = if near_ranks.len() == near.len() {
        Verdict::from_bool(near_ranks.iter().all(|r| r.1 == m))
    } else {
        notes.push("linearization failed on a near-optimal candidate".into());
        Verdict::Inconclusive
    };
    if clusters.len() > 1 {
        notes.push(format!("{} distinct near-optimal clusters", clusters.len()));
    }

    let xi = near_ranks
        .iter()
        .min_by_key(|r| r.1)
        .and_then(|&(i, _)| xi_space(spec, &set.candidates[i].control, x_target).ok());

    let mut cleared = false;
    let mut times = Vec::new();
    let mut shot = None;
    if best_normal {
        let a = best.as_ref().expect("checked above");
        let lambda = DVector::from_column_slice(&a.normal_fit.lambda_t);
        match endpoint::initial_costate(spec, &set.candidates[0].control, &lambda) {
            Ok(p0) => {
                let p0: Vec<f64> = p0.iter().copied().collect();
                (cleared, times, shot) = shot_check(spec, x_target, &p0, &mut notes);
            }
            Err(e) => notes.push(format!("covector pullback failed: {e}")),
        }
    }
    let smooth = match (fair, tame) {
        (Verdict::False, _) | (_, Verdict::False) => Verdict::False,
        _ if !times.is_empty() => Verdict::False,
        (Verdict::True, Verdict::True) if cleared => Verdict::True,
        _ => Verdict::Inconclusive,
    };

    let v = set.value();
    let agrees = shot
        .as_ref()
        .is_some_and(|s| (s.cost - v).abs() <= CROSS_CHECK_RTOL * (1.0 + v.abs()));
    let confidence = if agrees && fair == Verdict::True {
        Confidence::CertifiedNumeric
    } else {
        Confidence::Heuristic
    };

    Ok(ClassificationReport {
        target: x_target.to_vec(),
        analyses,
        class_x,
        fair,
        tame,
        smooth,
        conjugate_cleared: cleared,
        conjugate_times: times,
        shot,
        xi,
        confidence,
        notes,
        candidates: set,
    })
}

/// Polishes `p0` by shooting, then looks for conjugate times along the
/// resulting extremal. Returns `(cleared, times, shot)`.
fn shot_check(
    spec: &ProblemSpec,
    x_target: &[f64],
    p0: &[f64],
    notes: &mut Vec<String>,
) -> (bool, Vec<f64>, Option<ShotSummary>) {
    let (p, shot) = match extremal::shoot(spec, x_target, p0) {
        Ok(arc) => {
            let res = arc
                .final_state()
                .iter()
                .zip(x_target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let s = ShotSummary {
                initial_covector: arc.initial_covector.clone(),
                cost: arc.cost,
                final_residual: res,
            };
            (arc.initial_covector, Some(s))
        }
        Err(e) => {
            notes.push(format!("shooting: {e}"));
            (p0.to_vec(), None)
        }
    };
    match extremal::conjugate_times(spec, &p) {
        Ok(times) => (times.is_empty() && shot.is_some(), times, shot),
        Err(e) => {
            notes.push(format!("conjugate test: {e}"));
            (false, Vec::new(), shot)
        }
    }
}

/// `dE` of `u` as a dense matrix, for diagnostics.
pub fn end_point_matrix(spec: &ProblemSpec, u: &Control) -> Result<DMatrix<f64>> {
    Ok(endpoint::d_end_point(spec, u)?.matrix)
}
