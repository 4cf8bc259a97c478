//! Limited-memory BFGS with Armijo backtracking, used as the inner solver of
//! the augmented Lagrangian loop.
//!
//! The objective returns `None` for inadmissible points; the line search
//! treats those as `+inf` and backtracks.

use std::collections::VecDeque;

pub(crate) struct LbfgsResult {
    pub x: Vec<f64>,
    pub grad_norm: f64,
    pub iters: usize,
}

/// Minimizes `f` from `x0`. `f` returns `(value, gradient)`; `norm` measures
/// gradients for the stopping test and `dot` is the inner product of the
/// search space.
pub(crate) fn lbfgs(
    mut f: impl FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
    x0: Vec<f64>,
    dot: impl Fn(&[f64], &[f64]) -> f64,
    gtol: f64,
    max_iter: usize,
) -> Option<LbfgsResult> {
    const MEMORY: usize = 12;
    const ARMIJO: f64 = 1e-4;

    let (mut fx, mut g) = f(&x0)?;
    let mut x = x0;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let norm = |v: &[f64]| dot(v, v).sqrt();
    let mut rejected = 0;

    for it in 0..max_iter {
        let gn = norm(&g);
        if gn <= gtol {
            return Some(LbfgsResult {
                x,
                grad_norm: gn,
                iters: it,
            });
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            for qi in q.iter_mut() {
                *qi *= gamma;
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hist.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Some((ft, gt)) = f(&trial) {
                // near roundoff the decrease test is meaningless; accept a
                // flat step that reduces the gradient instead
                let flat = ft <= fx + 1e-13 * (1.0 + fx.abs()) && norm(&gt) < gn;
                let armijo = ft <= fx + ARMIJO * step * slope;
                if armijo || flat {
                    accepted = Some((trial, ft, gt, armijo));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn_, armijo)) = accepted else {
            // no descent possible at working precision
            return Some(LbfgsResult {
                x,
                grad_norm: gn,
                iters: it,
            });
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn_.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * norm(&s) * norm(&y) {
            if hist.len() == MEMORY {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
            rejected = 0;
        } else if armijo {
            // repeated negative curvature away from roundoff: the stored
            // scaling is stale
            rejected += 1;
            if rejected >= 3 {
                hist.clear();
                rejected = 0;
            }
        }
        x = xn;
        fx = fn_;
        g = gn_;
    }
    let gn = norm(&g);
    Some(LbfgsResult {
        x,
        grad_norm: gn,
        iters: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Some((v, g))
        };
        let r = lbfgs(f, vec![-1.2, 1.0], dot, 1e-10, 500).unwrap();
        assert!(r.grad_norm <= 1e-10);
        assert!((r.x[0] - 1.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn backtracks_out_of_forbidden_region() {
        // objective undefined for x > 1.5
        let f = |x: &[f64]| (x[0] <= 1.5).then(|| ((x[0] - 1.0).powi(2), vec![2.0 * (x[0] - 1.0)]));
        let r = lbfgs(f, vec![-3.0], dot, 1e-12, 100).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-10);
    }
}
