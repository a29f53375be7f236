//! Flat-slice compute kernels: three matmul layouts and the im2col pair
//! used by the convolution forward/backward paths. Inner loops run over
//! contiguous slices so the compiler can vectorize them.

use super::Scalar;

/// `out += a * b` with `a: m x k`, `b: k x n`, `out: m x n`, all row-major.
pub fn mm_nn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aik == F::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += aik * bv;
            }
        }
    }
}

/// `out += a * b^T` with `a: m x k`, `b: n x k`, `out: m x n`.
pub fn mm_nt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// `out += a^T * b` with `a: k x m`, `b: k x n`, `out: m x n`.
pub fn mm_tn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == F::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += aki * bv;
            }
        }
    }
}

/// Output spatial size for a convolution: `floor((dim + 2*pad - k) / stride) + 1`.
pub fn conv_out_dim(dim: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (dim + 2 * pad - kernel) / stride + 1
}

/// Unfold `x: n x c x h x w` into a `(c*kh*kw) x (n*ho*wo)` matrix, with
/// zeros for padded positions.
#[allow(clippy::too_many_arguments)]
pub fn im2col<F: Scalar>(
    x: &[F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<F> {
    let ho = conv_out_dim(h, kh, stride, pad);
    let wo = conv_out_dim(w, kw, stride, pad);
    let cols = n * ho * wo;
    let mut col = vec![F::zero(); c * kh * kw * cols];
    for ci in 0..c {
        for u in 0..kh {
            for v in 0..kw {
                let row = &mut col[((ci * kh + u) * kw + v) * cols..][..cols];
                for ni in 0..n {
                    let x_chan = &x[(ni * c + ci) * h * w..][..h * w];
                    for i in 0..ho {
                        let yy = (i * stride + u) as isize - pad as isize;
                        let dst = &mut row[(ni * ho + i) * wo..][..wo];
                        if yy < 0 || yy >= h as isize {
                            continue; // stays zero
                        }
                        let src = &x_chan[yy as usize * w..][..w];
                        for (j, d) in dst.iter_mut().enumerate() {
                            let xx = (j * stride + v) as isize - pad as isize;
                            if xx >= 0 && xx < w as isize {
                                *d = src[xx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Fold a `(c*kh*kw) x (n*ho*wo)` gradient back onto the input layout,
/// accumulating into `dx`.
#[allow(clippy::too_many_arguments)]
pub fn col2im<F: Scalar>(
    dcol: &[F],
    dx: &mut [F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) {
    let ho = conv_out_dim(h, kh, stride, pad);
    let wo = conv_out_dim(w, kw, stride, pad);
    let cols = n * ho * wo;
    for ci in 0..c {
        for u in 0..kh {
            for v in 0..kw {
                let row = &dcol[((ci * kh + u) * kw + v) * cols..][..cols];
                for ni in 0..n {
                    let dx_chan = &mut dx[(ni * c + ci) * h * w..][..h * w];
                    for i in 0..ho {
                        let yy = (i * stride + u) as isize - pad as isize;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        let src = &row[(ni * ho + i) * wo..][..wo];
                        let dst = &mut dx_chan[yy as usize * w..][..w];
                        for (j, &s) in src.iter().enumerate() {
                            let xx = (j * stride + v) as isize - pad as isize;
                            if xx >= 0 && xx < w as isize {
                                dst[xx as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}
