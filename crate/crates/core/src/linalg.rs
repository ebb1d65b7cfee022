//! Small dense solvers for the L×L and normal-equation systems.

/// Solves `A x = b` in place for a symmetric positive definite `A`
/// (row-major, `n × n`) by Cholesky factorization. `b` is overwritten with
/// `x`. Returns `None` if `A` is not numerically positive definite.
pub(crate) fn solve_spd(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    debug_assert_eq!(a.len(), n * n);
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > scale * 1e-14) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Some(())
}

/// Gaussian elimination with partial pivoting for a general square system.
/// Returns `None` when a pivot falls below `1e-13` of the largest entry.
pub(crate) fn solve_general(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if !(a[piv * n + col].abs() > 1e-13 * scale) {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for i in col + 1..n {
            let f = a[i * n + col] / a[col * n + col];
            for k in col..n {
                a[i * n + k] -= f * a[col * n + k];
            }
            b[i] -= f * b[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Some(())
}

/// Least squares `min ‖X B − Y‖` by Householder QR. `x` is `rows × cols`,
/// `y` is `rows × nrhs`, both row-major; returns `B` (`cols × nrhs`) or
/// `None` when `X` is numerically rank deficient.
pub(crate) fn lstsq(x: &[f64], y: &[f64], rows: usize, cols: usize, nrhs: usize) -> Option<Vec<f64>> {
    if rows < cols {
        return None;
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    let mut diag = vec![0.0; cols];
    let col_scale = (0..cols)
        .map(|j| (0..rows).map(|i| a[i * cols + j].powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    for j in 0..cols {
        let norm = (j..rows).map(|i| a[i * cols + j].powi(2)).sum::<f64>().sqrt();
        if norm <= col_scale * 1e-12 {
            return None;
        }
        let alpha = if a[j * cols + j] > 0.0 { -norm } else { norm };
        // v = a[j..,j] - alpha e_1, stored in place
        a[j * cols + j] -= alpha;
        let vnorm2: f64 = (j..rows).map(|i| a[i * cols + j].powi(2)).sum();
        if vnorm2 > 0.0 {
            for k in j + 1..cols {
                let dot: f64 = (j..rows).map(|i| a[i * cols + j] * a[i * cols + k]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in j..rows {
                    a[i * cols + k] -= f * a[i * cols + j];
                }
            }
            for r in 0..nrhs {
                let dot: f64 = (j..rows).map(|i| a[i * cols + j] * b[i * nrhs + r]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in j..rows {
                    b[i * nrhs + r] -= f * a[i * cols + j];
                }
            }
        }
        diag[j] = alpha;
    }
    let mut out = vec![0.0; cols * nrhs];
    for r in 0..nrhs {
        for j in (0..cols).rev() {
            let mut s = b[j * nrhs + r];
            for k in j + 1..cols {
                s -= a[j * cols + k] * out[k * nrhs + r];
            }
            out[j * nrhs + r] = s / diag[j];
        }
    }
    Some(out)
}
