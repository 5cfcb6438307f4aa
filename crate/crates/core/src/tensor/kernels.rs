use alloc::vec;
use alloc::vec::Vec;

/// `y += alpha * x`.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `A[m×k] · B[k×n]`.
///
/// Row-axpy loop order; zero entries of `A` are skipped, which pays off for
/// binary images and ReLU activations.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], row);
            }
        }
    }
    out
}

/// `dA += dC[m×n] · B[k×n]ᵀ`.
pub(crate) fn accumulate_grad_lhs(
    dc: &[f64],
    b: &[f64],
    da: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    // Bᵀ once, then the same axpy pattern as the forward product.
    let mut bt = vec![0.0; n * k];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j];
        }
    }
    for i in 0..m {
        let row = &mut da[i * k..(i + 1) * k];
        for j in 0..n {
            let g = dc[i * n + j];
            if g != 0.0 {
                axpy(g, &bt[j * k..(j + 1) * k], row);
            }
        }
    }
}

/// `dB += A[m×k]ᵀ · dC[m×n]`.
pub(crate) fn accumulate_grad_rhs(
    a: &[f64],
    dc: &[f64],
    db: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let grow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, grow, &mut db[p * n..(p + 1) * n]);
            }
        }
    }
}
