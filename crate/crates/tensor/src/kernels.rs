//! Raw buffer kernels shared by forward and backward passes.

use crate::Scalar;

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        out[d] = out[d + 1] * shape[d + 1];
    }
    out
}

/// `c ← alpha·op(a)·op(b) + beta·c` where `a` is stored `a_dims` row-major
/// and `op` optionally transposes.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    alpha: T,
    a: &[T],
    a_dims: (usize, usize),
    ta: bool,
    b: &[T],
    b_dims: (usize, usize),
    tb: bool,
    beta: T,
    c: &mut [T],
) {
    let (ar, ac) = a_dims;
    let (br, bc) = b_dims;
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(k, kb, "gemm inner dimension");
    assert!(a.len() >= ar * ac && b.len() >= br * bc && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if m * k * n <= SMALL_GEMM && !(ta && tb) {
        small_gemm(alpha, a, ac, ta, b, bc, tb, beta, &mut c[..m * n], (m, k, n));
        return;
    }
    let (rsa, csa) = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let (rsb, csb) = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    // SAFETY: extents checked against buffer lengths above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Products up to this many multiply-adds skip the packing kernel.
const SMALL_GEMM: usize = 32 * 32 * 32;

fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let tail: T = xc.remainder().iter().zip(yc.remainder()).fold(T::zero(), |s, (a, b)| s + *a * *b);
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] = acc[l] + a[l] * b[l];
        }
    }
    acc.iter().fold(tail, |s, v| s + *v)
}

/// Direct loops for small products; `a` and `b` have `ac` and `bc` columns.
#[allow(clippy::too_many_arguments)]
fn small_gemm<T: Scalar>(
    alpha: T,
    a: &[T],
    ac: usize,
    ta: bool,
    b: &[T],
    bc: usize,
    tb: bool,
    beta: T,
    c: &mut [T],
    (m, k, n): (usize, usize, usize),
) {
    if beta == T::zero() {
        c.fill(T::zero());
    } else if beta != T::one() {
        c.iter_mut().for_each(|v| *v = *v * beta);
    }
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let row = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let s = alpha * a[i * ac + p];
                    for (cv, bv) in row.iter_mut().zip(&b[p * bc..p * bc + n]) {
                        *cv = *cv + s * *bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let ar = &a[i * ac..i * ac + k];
                for j in 0..n {
                    c[i * n + j] = c[i * n + j] + alpha * dot(ar, &b[j * bc..j * bc + k]);
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let br = &b[p * bc..p * bc + n];
                for i in 0..m {
                    let s = alpha * a[p * ac + i];
                    for (cv, bv) in c[i * n..(i + 1) * n].iter_mut().zip(br) {
                        *cv = *cv + s * *bv;
                    }
                }
            }
        }
        (true, true) => unreachable!("handled by the packing kernel"),
    }
}

/// Copies `data` (shaped `shape`) into the axis order `axes`.
pub(crate) fn permute<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> Vec<T> {
    let rank = shape.len();
    if rank == 0 {
        return data.to_vec();
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let inner = out_shape[rank - 1];
    let inner_stride = src[rank - 1];
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank - 1];
    loop {
        let base: usize = idx.iter().zip(&src).map(|(i, s)| i * s).sum();
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| data[base + j * inner_stride]));
        }
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Inverse of an axis permutation.
pub(crate) fn invert_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// In-place numerically stable softmax over consecutive rows of width `w`.
pub(crate) fn softmax_rows<T: Scalar>(data: &mut [T], w: usize) {
    for row in data.chunks_mut(w) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
}

pub(crate) fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[5]), vec![1]);
    }

    #[test]
    fn permute_matches_index_formula() {
        let shape = [2, 3, 4];
        let data: Vec<usize> = (0..24).collect();
        let out = permute(&data, &shape, &[2, 0, 1]);
        // out[c][a][b] = data[a][b][c]
        for a in 0..2 {
            for b in 0..3 {
                for c in 0..4 {
                    assert_eq!(out[c * 6 + a * 3 + b], data[a * 12 + b * 4 + c]);
                }
            }
        }
        let back = permute(&out, &[4, 2, 3], &invert_axes(&[2, 0, 1]));
        assert_eq!(back, data);
    }

    #[test]
    fn small_path_matches_packed_path() {
        let (m, k, n) = (5, 11, 7);
        let a: Vec<f64> = (0..m * k).map(|x| (x as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|x| (x as f64 * 0.91).cos()).collect();
        for (ta, tb) in [(false, false), (false, true), (true, false)] {
            let a_dims = if ta { (k, m) } else { (m, k) };
            let b_dims = if tb { (n, k) } else { (k, n) };
            let mut small: Vec<f64> = (0..m * n).map(|x| x as f64).collect();
            let mut packed = small.clone();
            small_gemm(0.5, &a, a_dims.1, ta, &b, b_dims.1, tb, 2.0, &mut small, (m, k, n));
            let (rsa, csa) = if ta { (1, a_dims.1 as isize) } else { (a_dims.1 as isize, 1) };
            let (rsb, csb) = if tb { (1, b_dims.1 as isize) } else { (b_dims.1 as isize, 1) };
            unsafe {
                f64::gemm_raw(m, k, n, 0.5, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, 2.0, packed.as_mut_ptr(), n as isize, 1)
            };
            for (x, y) in small.iter().zip(&packed) {
                assert!((x - y).abs() < 1e-12, "{ta} {tb}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn gemm_transposed_operands() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]; aᵀ·bᵀ = [[23,31],[34,46]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(1.0, &a, (2, 2), true, &b, (2, 2), true, 0.0, &mut c);
        assert_eq!(c, [23.0, 31.0, 34.0, 46.0]);
    }
}
