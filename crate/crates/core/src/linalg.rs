//! Small dense helpers on top of nalgebra: tolerance-aware rank, left null
//! spaces and minimum-norm least squares.

use nalgebra::{DMatrix, DVector};

/// Relative rank tolerance used for every rank decision in the crate.
pub const RANK_RTOL: f64 = 1e-8;

/// Singular values (descending) of `a`.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Absolute threshold `RANK_RTOL * sigma_max`, or `RANK_RTOL` when all are zero.
pub fn rank_threshold(sv: &[f64]) -> f64 {
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax > 0.0 {
        RANK_RTOL * smax
    } else {
        RANK_RTOL
    }
}

pub fn numerical_rank(sv: &[f64]) -> usize {
    let tol = rank_threshold(sv);
    sv.iter().filter(|&&s| s >= tol).count()
}

/// Orthonormal basis (as columns) of `{ y : y^T a = 0 }`, numerically.
///
/// Uses the eigen-decomposition of `a a^T`, whose size is the row count, so it
/// works for short-and-wide operators such as `dE`.
pub fn left_null_space(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let m = a.nrows();
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let s = &svd.singular_values;
    let mut pairs: Vec<(f64, usize)> = (0..s.len()).map(|i| (s[i], i)).collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let sv: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tol = rank_threshold(&sv);

    // Columns of U beyond min(m, n) are not produced by nalgebra's thin SVD;
    // complete the basis by Gram-Schmidt against the range.
    let mut range: Vec<DVector<f64>> = Vec::new();
    let mut kernel: Vec<DVector<f64>> = Vec::new();
    for &(sigma, i) in &pairs {
        let col = u.column(i).into_owned();
        if sigma >= tol {
            range.push(col);
        } else {
            kernel.push(col);
        }
    }
    let mut basis: Vec<DVector<f64>> = range.iter().chain(kernel.iter()).cloned().collect();
    for e in 0..m {
        if basis.len() >= m {
            break;
        }
        let mut v = DVector::zeros(m);
        v[e] = 1.0;
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let n = v.norm();
        if n > 1e-8 {
            v /= n;
            basis.push(v.clone());
            kernel.push(v);
        }
    }
    let k = kernel.len();
    let mut out = DMatrix::zeros(m, k);
    for (j, v) in kernel.iter().enumerate() {
        out.set_column(j, v);
    }
    (out, sv)
}

/// Minimum-norm solution of `min |a x - b|` via SVD with the crate rank tolerance.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    let tol = if smax > 0.0 { RANK_RTOL * smax } else { RANK_RTOL };
    svd.solve(b, tol).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_rank_deficient_matrix() {
        let a = DMatrix::from_row_slice(3, 4, &[1., 2., 3., 4., 2., 4., 6., 8., 0., 1., 0., 1.]);
        assert_eq!(numerical_rank(&singular_values(&a)), 2);
    }

    #[test]
    fn left_null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(3, 5, &[1., 0., 1., 0., 2., 0., 1., 0., 1., 0., 0., 0., 0., 0., 0.]);
        let (k, _) = left_null_space(&a);
        assert_eq!(k.ncols(), 1);
        assert!((k[(2, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((k.transpose() * &a).norm() < 1e-12);
    }

    #[test]
    fn zero_matrix_has_full_left_kernel() {
        let a = DMatrix::<f64>::zeros(2, 3);
        let (k, sv) = left_null_space(&a);
        assert_eq!(k.ncols(), 2);
        assert_eq!(numerical_rank(&sv), 0);
    }

    #[test]
    fn lstsq_min_norm() {
        let a = DMatrix::from_row_slice(2, 2, &[1., 1., 1., 1.]);
        let x = lstsq(&a, &DVector::from_vec(vec![2., 2.]));
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
