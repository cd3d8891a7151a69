//! Row-major matrix product kernels used by the convolution adjoints.
//! Inner loops run over contiguous rows so the compiler can vectorize them.

/// c[m x n] += a[m x k] * b[k x n]
pub fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for q in 0..k {
            let av = a[i * k + q];
            if av == 0.0 {
                continue;
            }
            let brow = &b[q * n..(q + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c[m x n] += a[m x p] * b[n x p]^T  (rows of both operands are contiguous)
pub fn matmul_abt_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, p: usize, n: usize) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), n * p);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * p..(j + 1) * p];
            let mut s = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            crow[j] += s;
        }
    }
}

/// c[k x n] += a[m x k]^T * b[m x n]
pub fn matmul_atb_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for q in 0..k {
            let av = a[i * k + q];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[q * n..(q + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}
