// Slice-level matrix kernels. All matrices are row-major and `out` is
// accumulated into, never overwritten.

use alloc::vec;

const MR: usize = 4;
const NR: usize = 8;
// Below this many rows the transposed variants skip the packing copy.
const SMALL: usize = 16;

/// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let full_cols = n - n % NR;
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j < full_cols {
            block_4x8(a, b, out, i, j, k, n);
            j += NR;
        }
        if full_cols < n {
            axpy_rows(a, b, out, i..i + MR, full_cols..n, k, n);
        }
        i += MR;
    }
    if i < m {
        axpy_rows(a, b, out, i..m, 0..n, k, n);
    }
}

// Register-blocked tile: the 4×8 accumulator stays in vector registers
// across the whole k loop.
#[inline(always)]
fn block_4x8(a: &[f64], b: &[f64], out: &mut [f64], i: usize, j: usize, k: usize, n: usize) {
    let mut acc = [[0.0f64; NR]; MR];
    let rows: [&[f64]; MR] = core::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
    for p in 0..k {
        let bp: &[f64; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
        for r in 0..MR {
            let ar = rows[r][p];
            for c in 0..NR {
                acc[r][c] += ar * bp[c];
            }
        }
    }
    for r in 0..MR {
        let o = &mut out[(i + r) * n + j..(i + r) * n + j + NR];
        for c in 0..NR {
            o[c] += acc[r][c];
        }
    }
}

fn axpy_rows(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    rows: core::ops::Range<usize>,
    cols: core::ops::Range<usize>,
    k: usize,
    n: usize,
) {
    for i in rows {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n + cols.start..i * n + cols.end];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n + cols.start..p * n + cols.end];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if m < SMALL {
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
            }
        }
        return;
    }
    let mut bt = vec![0.0; k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm_nn(a, &bt, out, m, k, n);
}

/// out[k×n] += a[m×k]ᵀ · b[m×n]
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    if m < SMALL {
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            let b_row = &b[i * n..(i + 1) * n];
            for (p, &a_ip) in a_row.iter().enumerate() {
                for (o, &b_ij) in out[p * n..(p + 1) * n].iter_mut().zip(b_row) {
                    *o += a_ip * b_ij;
                }
            }
        }
        return;
    }
    let mut at = vec![0.0; k * m];
    for i in 0..m {
        for p in 0..k {
            at[p * m + i] = a[i * k + p];
        }
    }
    gemm_nn(&at, b, out, k, m, n);
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}
