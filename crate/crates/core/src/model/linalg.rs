//! Row-major dense kernels. Loop orders keep the innermost loop contiguous so it
//! vectorizes; reductions use four independent accumulators in a fixed order, so
//! results are bitwise reproducible.

/// `c[m,n] = a[m,k] · b[k,n]` (overwrites `c`).
pub fn matmul(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    c[..m * n].fill(0.0);
    matmul_acc(a, b, c, m, k, n);
}

/// `c[m,n] += a[m,k] · b[k,n]`.
///
/// Register-blocked over 4×8 tiles of `c`. Every element still accumulates its
/// `k` products one at a time in increasing `p`, starting from its old value.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    const R: usize = 4;
    const W: usize = 8;
    let (m_main, n_main) = (m - m % R, n - n % W);
    for i0 in (0..m_main).step_by(R) {
        for j0 in (0..n_main).step_by(W) {
            let mut acc = [[0.0f64; W]; R];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i0 + r) * n + j0..(i0 + r) * n + j0 + W]);
            }
            for p in 0..k {
                let bv: &[f64; W] = b[p * n + j0..p * n + j0 + W].try_into().unwrap();
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i0 + r) * k + p];
                    for w in 0..W {
                        row[w] += av * bv[w];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i0 + r) * n + j0..(i0 + r) * n + j0 + W].copy_from_slice(row);
            }
        }
        if n_main < n {
            for r in 0..R {
                let i = i0 + r;
                for p in 0..k {
                    axpy(a[i * k + p], &b[p * n + n_main..(p + 1) * n], &mut c[i * n + n_main..(i + 1) * n]);
                }
            }
        }
    }
    for i in m_main..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(a[i * k + p], &b[p * n..(p + 1) * n], c_row);
        }
    }
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = x[i * cols + j];
        }
    }
    t
}

/// `c[m,n] = a[m,k] · b[n,k]ᵀ` (overwrites `c`).
pub fn matmul_bt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    matmul(a, &transpose(&b[..n * k], n, k), c, m, k, n);
}

/// `c[k,n] += a[m,k]ᵀ · b[m,n]`.
pub fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() >= m * k && b.len() >= m * n && c.len() >= k * n);
    matmul_acc(&transpose(&a[..m * k], m, k), b, c, k, m, n);
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        acc[0] += a[0] * b[0];
        acc[1] += a[1] * b[1];
        acc[2] += a[2] * b[2];
        acc[3] += a[3] * b[3];
    }
    let mut tail = 0.0;
    for (a, b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Adds `bias` to every row of `x[rows, bias.len()]`.
pub fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// `out += column sums of x[rows, out.len()]`.
pub fn col_sum_acc(x: &[f64], out: &mut [f64]) {
    for row in x.chunks_exact(out.len()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Numerically stable log-sum-exp.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// In-place log-softmax.
pub fn log_softmax(x: &mut [f64]) {
    let lse = log_sum_exp(x);
    for v in x {
        *v -= lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn kernels_agree_with_naive_product() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        let close = |x: &[f64]| x.iter().zip(&want).all(|(p, q)| (p - q).abs() < 1e-12);

        let mut c = vec![9.0; m * n];
        matmul(&a, &b, &mut c, m, k, n);
        assert!(close(&c));

        matmul_bt(&a, &transpose(&b, k, n), &mut c, m, k, n);
        assert!(close(&c));

        let mut c = vec![0.0; m * n];
        matmul_at_acc(&transpose(&a, m, k), &b, &mut c, k, m, n);
        assert!(close(&c));
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut x = vec![1000.0, 1001.0, -5.0, 0.0];
        log_softmax(&mut x);
        let total: f64 = x.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
