//! Dense kernels shared by matmul, conv2d and conv_transpose2d.

use rayon::prelude::*;

use super::Scalar;

/// `out[m x n] += a[m x k] * b[k x n]` (row-major). `out` must be zeroed by
/// the caller when a plain product is wanted.
pub(crate) fn gemm_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    // Parallel over output rows; the i-k-j order keeps the inner loop
    // contiguous over `b` and `out`.
    let body = |(i, out_row): (usize, &mut [T])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il == T::zero() {
                continue;
            }
            let b_row = &b[l * n..(l + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_il * bv;
            }
        }
    };
    if m * n * k >= 32_768 && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.chunks_mut(n).enumerate().for_each(body);
    }
}

/// Output extent of a convolution along one spatial axis, or `None` when the
/// extent is not integral or not positive.
pub(crate) fn conv_out_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Option<usize> {
    let span = dilation.checked_mul(kernel.checked_sub(1)?)?;
    let numer = (input + 2 * padding).checked_sub(span + 1)?;
    if numer % stride != 0 {
        return None;
    }
    Some(numer / stride + 1)
}

pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Gathers dilated k x k patches into a `(cin*k*k) x (out_h*out_w)` matrix.
/// Out-of-bounds taps read as zero.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let rows = g.cin * g.k * g.k;
    let cols = g.out_h * g.out_w;
    let mut out = vec![T::zero(); rows * cols];
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (c * g.k + kh) * g.k + kw;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + kh * g.dilation) as isize - g.padding as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.out_w {
                        let iw = (ow * g.stride + kw * g.dilation) as isize - g.padding as isize;
                        if iw < 0 || iw >= g.w as isize {
                            continue;
                        }
                        dst[oh * g.out_w + ow] = src_row[iw as usize];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-adds patch columns back into an image.
pub(crate) fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, x_out: &mut [T]) {
    let n_cols = g.out_h * g.out_w;
    debug_assert_eq!(cols.len(), g.cin * g.k * g.k * n_cols);
    debug_assert_eq!(x_out.len(), g.cin * g.h * g.w);
    for c in 0..g.cin {
        let plane = &mut x_out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for kh in 0..g.k {
            for kw in 0..g.k {
                let row = (c * g.k + kh) * g.k + kw;
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + kh * g.dilation) as isize - g.padding as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for ow in 0..g.out_w {
                        let iw = (ow * g.stride + kw * g.dilation) as isize - g.padding as isize;
                        if iw < 0 || iw >= g.w as isize {
                            continue;
                        }
                        plane[ih as usize * g.w + iw as usize] += src[oh * g.out_w + ow];
                    }
                }
            }
        }
    }
}
