//! Matrix products on raw row-major slices plus the checked `matmul` op.
//!
//! All kernels accumulate into `c` (`c += op(a) · op(b)`) with a fixed
//! reduction order, so results are bitwise reproducible.

use crate::error::{ensure_dim, Result};
use crate::tensor::Tensor;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &api) in a_row.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += api * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Dot product with eight interleaved partial sums.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub fn transpose(rows: usize, cols: usize, src: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    ensure_dim!(t.rank() == 2, "{what} must be rank 2, got {:?}", t.shape());
    Ok((t.shape()[0], t.shape()[1]))
}

/// `a[M×K] · b[K×N]`
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul lhs")?;
    let (k2, n) = matrix_dims(b, "matmul rhs")?;
    ensure_dim!(k == k2, "matmul inner dimensions {k} and {k2} differ");
    let mut out = vec![0.0; m * n];
    gemm_nn(m, k, n, a.data(), b.data(), &mut out);
    Tensor::new(&[m, n], out)
}

/// Returns `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k) = matrix_dims(a, "matmul lhs")?;
    let (k2, n) = matrix_dims(b, "matmul rhs")?;
    ensure_dim!(k == k2, "matmul inner dimensions {k} and {k2} differ");
    ensure_dim!(
        grad_out.shape() == [m, n],
        "matmul output gradient {:?}, expected [{m}, {n}]",
        grad_out.shape()
    );
    let mut da = vec![0.0; m * k];
    gemm_nt(m, n, k, grad_out.data(), b.data(), &mut da);
    let mut db = vec![0.0; k * n];
    gemm_tn(k, m, n, a.data(), grad_out.data(), &mut db);
    Ok((Tensor::new(&[m, k], da)?, Tensor::new(&[k, n], db)?))
}
