// Row-major matrix kernels. Each output row is independent, so rows are
// split across the rayon pool once the work is large enough. The per-row
// arithmetic order does not depend on the thread count.

use rayon::prelude::*;

const PAR_THRESHOLD: usize = 1 << 15;

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |(i, out_row): (usize, &mut [f64])| {
        out_row.iter_mut().for_each(|v| *v = 0.0);
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
}

/// `a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let row = |(i, out_row): (usize, &mut [f64])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            *o = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `a[k×m]ᵀ · b[k×n]`
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let at = transpose(a, k, m);
    let mut out = vec![0.0; m * n];
    matmul_into(&at, b, &mut out, m, k, n);
    out
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    #[test]
    fn variants_agree_with_triple_loop() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expect = naive(&a, &b, m, k, n);
        let mut out = vec![0.0; m * n];
        matmul_into(&a, &b, &mut out, m, k, n);
        let nt = matmul_nt(&a, &transpose(&b, k, n), m, k, n);
        let tn = matmul_tn(&transpose(&a, m, k), &b, k, m, n);
        for i in 0..m * n {
            assert!((out[i] - expect[i]).abs() < 1e-12);
            assert!((nt[i] - expect[i]).abs() < 1e-12);
            assert!((tn[i] - expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_path_matches_serial() {
        let (m, k, n) = (64, 64, 64);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 31 % 17) as f64) - 8.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 7 % 13) as f64) * 0.5).collect();
        let mut out = vec![0.0; m * n];
        matmul_into(&a, &b, &mut out, m, k, n);
        assert_eq!(out, naive(&a, &b, m, k, n));
    }
}
