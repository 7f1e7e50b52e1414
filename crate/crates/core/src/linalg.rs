//! Small dense kernels: least squares by Gram-Schmidt QR and SPD inversion.

/// Result of a least-squares fit.
#[cfg_attr(not(test), allow(dead_code))]
#[derive(Debug, Clone)]
pub(crate) struct LeastSquares {
    pub coef: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    /// Columns found linearly dependent on earlier ones (coefficient 0).
    pub dropped: Vec<usize>,
}

/// Minimises `||X b - y||` for a column-major design `cols`.
///
/// Uses modified Gram-Schmidt with one reorthogonalization pass. A column
/// whose component orthogonal to the preceding columns is below `rel_tol`
/// of its norm is treated as dependent and gets coefficient zero.
pub(crate) fn least_squares(cols: &[Vec<f64>], y: &[f64], rel_tol: f64) -> LeastSquares {
    let n = y.len();
    let p = cols.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
    // r[j] holds the coefficients of column j on the kept basis vectors.
    let mut r: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut kept: Vec<usize> = Vec::with_capacity(p);
    let mut diag: Vec<f64> = Vec::with_capacity(p);
    let mut dropped = Vec::new();

    for (j, col) in cols.iter().enumerate() {
        debug_assert_eq!(col.len(), n);
        let norm0 = dot(col, col).sqrt();
        let mut v = col.clone();
        let mut rj = vec![0.0; q.len()];
        for _ in 0..2 {
            for (k, qk) in q.iter().enumerate() {
                let c = dot(qk, &v);
                rj[k] += c;
                axpy(-c, qk, &mut v);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm0 == 0.0 || norm <= rel_tol * norm0 {
            dropped.push(j);
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
        rj.push(norm);
        diag.push(norm);
        r.push(rj);
        kept.push(j);
    }

    // Project y and solve the triangular system R b = Q' y.
    let mut resid = y.to_vec();
    let mut qty = vec![0.0; q.len()];
    for _ in 0..2 {
        for (k, qk) in q.iter().enumerate() {
            let c = dot(qk, &resid);
            qty[k] += c;
            axpy(-c, qk, &mut resid);
        }
    }
    let m = q.len();
    let mut b = vec![0.0; m];
    for i in (0..m).rev() {
        let mut s = qty[i];
        for (k, bk) in b.iter().enumerate().skip(i + 1) {
            s -= r[k][i] * bk;
        }
        b[i] = s / diag[i];
    }
    let mut coef = vec![0.0; p];
    for (i, &j) in kept.iter().enumerate() {
        coef[j] = b[i];
    }
    let rss = dot(&resid, &resid);
    LeastSquares {
        coef,
        residuals: resid,
        rss,
        dropped,
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Inverse of a symmetric positive-definite matrix via Cholesky, or `None`
/// if the matrix is not numerically positive definite.
pub(crate) fn spd_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // Invert L, then A^-1 = L^-T L^-1.
    let mut li = vec![vec![0.0; n]; n];
    for i in 0..n {
        li[i][i] = 1.0 / l[i][i];
        for j in 0..i {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i][k] * li[k][j];
            }
            li[i][j] = s / l[i][i];
        }
    }
    let mut inv = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (i..n).map(|k| li[k][i] * li[k][j]).sum();
            inv[i][j] = s;
            inv[j][i] = s;
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_and_orthogonal_residuals() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let ones = vec![1.0; 20];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v + (v * 1.7).sin()).collect();
        let fit = least_squares(&[ones.clone(), x.clone()], &y, 1e-10);
        let ynorm = dot(&y, &y).sqrt();
        for c in [&ones, &x] {
            let cn = dot(c, c).sqrt();
            assert!(dot(c, &fit.residuals).abs() <= 1e-8 * cn * ynorm);
        }
        let exact = least_squares(&[ones, x.clone()], &x.iter().map(|v| 1.0 + v).collect::<Vec<_>>(), 1e-10);
        assert!((exact.coef[0] - 1.0).abs() < 1e-12);
        assert!((exact.coef[1] - 1.0).abs() < 1e-12);
        assert!(exact.rss < 1e-20);
    }

    #[test]
    fn dependent_columns_are_dropped() {
        let a: Vec<f64> = (0..10).map(f64::from).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let zero = vec![0.0; 10];
        let fit = least_squares(&[a.clone(), b, zero], &a, 1e-10);
        assert_eq!(fit.dropped, vec![1, 2]);
        assert!((fit.coef[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spd_inverse_round_trip() {
        let a = vec![vec![4.0, 1.0, 0.5], vec![1.0, 3.0, 0.2], vec![0.5, 0.2, 2.0]];
        let inv = spd_inverse(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| a[i][k] * inv[k][j]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert!(spd_inverse(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_none());
    }
}
