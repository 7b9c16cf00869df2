//! Row-major matrix products with a fixed accumulation order.
//!
//! Every output element is `c + sum_p a[i, p] * b[p, j]` with `p` ascending
//! and the sum formed from zero before it is added to `c`. Vectorisation only
//! ever runs across `j`, so results do not depend on the target's SIMD width.

use crate::nn::Real;

const MR: usize = 4;
const NR: usize = 16;

/// `c[m x n] (+)= a[m x k] * b[k x n]`.
pub fn gemm<T: Real>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "lhs length");
    assert_eq!(b.len(), k * n, "rhs length");
    assert_eq!(c.len(), m * n, "output length");
    if !accumulate {
        c.iter_mut().for_each(|v| *v = T::zero());
    }
    if k == 0 {
        return;
    }
    let mut i0 = 0;
    while i0 < m {
        let mr = MR.min(m - i0);
        let mut j0 = 0;
        while j0 < n {
            let nr = NR.min(n - j0);
            if mr == MR && nr == NR {
                kernel_full(n, k, &a[i0 * k..(i0 + MR) * k], b, j0, &mut c[i0 * n..]);
            } else {
                kernel_edge(
                    n,
                    k,
                    mr,
                    nr,
                    &a[i0 * k..(i0 + mr) * k],
                    b,
                    j0,
                    &mut c[i0 * n..],
                );
            }
            j0 += NR;
        }
        i0 += MR;
    }
}

#[inline(always)]
fn kernel_full<T: Real>(n: usize, k: usize, a: &[T], b: &[T], j0: usize, c: &mut [T]) {
    let mut acc = [[T::zero(); NR]; MR];
    let (a0, rest) = a.split_at(k);
    let (a1, rest) = rest.split_at(k);
    let (a2, a3) = rest.split_at(k);
    for p in 0..k {
        let row: &[T; NR] = b[p * n + j0..p * n + j0 + NR].try_into().unwrap();
        let av = [a0[p], a1[p], a2[p], a3[p]];
        for r in 0..MR {
            let ar = av[r];
            let accr = &mut acc[r];
            for j in 0..NR {
                accr[j] = accr[j] + ar * row[j];
            }
        }
    }
    for r in 0..MR {
        let out = &mut c[r * n + j0..r * n + j0 + NR];
        for j in 0..NR {
            out[j] = out[j] + acc[r][j];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn kernel_edge<T: Real>(
    n: usize,
    k: usize,
    mr: usize,
    nr: usize,
    a: &[T],
    b: &[T],
    j0: usize,
    c: &mut [T],
) {
    for r in 0..mr {
        let ar = &a[r * k..(r + 1) * k];
        let mut acc = [T::zero(); NR];
        for p in 0..k {
            let row = &b[p * n + j0..p * n + j0 + nr];
            let av = ar[p];
            for j in 0..nr {
                acc[j] = acc[j] + av * row[j];
            }
        }
        let out = &mut c[r * n + j0..r * n + j0 + nr];
        for j in 0..nr {
            out[j] = out[j] + acc[j];
        }
    }
}

/// Writes the transpose of row-major `src[rows x cols]` into `dst[cols x rows]`.
pub fn transpose<T: Real>(rows: usize, cols: usize, src: &[T], dst: &mut [T]) {
    assert_eq!(src.len(), rows * cols);
    assert_eq!(dst.len(), rows * cols);
    const BLOCK: usize = 32;
    for r0 in (0..rows).step_by(BLOCK) {
        for c0 in (0..cols).step_by(BLOCK) {
            for r in r0..(r0 + BLOCK).min(rows) {
                for c in c0..(c0 + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}
