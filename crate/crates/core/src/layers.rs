//! Batched layer kernels in NHWC layout with hand-written backward passes.
//!
//! Convolution and transposed convolution share one patch geometry: a
//! "large" grid (conv input / deconv output) and a "small" grid
//! (conv output / deconv input) related by
//! `large = small * stride - pad + kernel_offset`.

use crate::scalar::{gemm, Scalar, Trans};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub batch: usize,
    pub large_h: usize,
    pub large_w: usize,
    pub small_h: usize,
    pub small_w: usize,
    /// Channels living on the large grid.
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PatchGeometry {
    pub fn rows(&self) -> usize {
        self.batch * self.small_h * self.small_w
    }

    pub fn cols(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    /// Gathers patches of `large` (`batch x large_h x large_w x channels`)
    /// into a `rows() x cols()` matrix; out-of-range taps read zero.
    pub fn im2col<S: Scalar>(&self, large: &[S]) -> Vec<S> {
        debug_assert_eq!(large.len(), self.batch * self.large_h * self.large_w * self.channels);
        let c = self.channels;
        let mut cols = vec![S::zero(); self.rows() * self.cols()];
        let mut row = 0;
        for b in 0..self.batch {
            for sy in 0..self.small_h {
                for sx in 0..self.small_w {
                    let out = &mut cols[row * self.cols()..(row + 1) * self.cols()];
                    for ky in 0..self.kernel {
                        let ly = (sy * self.stride + ky) as isize - self.pad as isize;
                        if ly < 0 || ly >= self.large_h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let lx = (sx * self.stride + kx) as isize - self.pad as isize;
                            if lx < 0 || lx >= self.large_w as isize {
                                continue;
                            }
                            let src = ((b * self.large_h + ly as usize) * self.large_w + lx as usize) * c;
                            let dst = (ky * self.kernel + kx) * c;
                            out[dst..dst + c].copy_from_slice(&large[src..src + c]);
                        }
                    }
                    row += 1;
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds patch rows back onto the large grid.
    pub fn col2im<S: Scalar>(&self, cols: &[S]) -> Vec<S> {
        debug_assert_eq!(cols.len(), self.rows() * self.cols());
        let c = self.channels;
        let mut large = vec![S::zero(); self.batch * self.large_h * self.large_w * c];
        let mut row = 0;
        for b in 0..self.batch {
            for sy in 0..self.small_h {
                for sx in 0..self.small_w {
                    let src_row = &cols[row * self.cols()..(row + 1) * self.cols()];
                    for ky in 0..self.kernel {
                        let ly = (sy * self.stride + ky) as isize - self.pad as isize;
                        if ly < 0 || ly >= self.large_h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let lx = (sx * self.stride + kx) as isize - self.pad as isize;
                            if lx < 0 || lx >= self.large_w as isize {
                                continue;
                            }
                            let dst = ((b * self.large_h + ly as usize) * self.large_w + lx as usize) * c;
                            let src = (ky * self.kernel + kx) * c;
                            for (d, s) in large[dst..dst + c].iter_mut().zip(&src_row[src..src + c]) {
                                *d += *s;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        large
    }
}

/// `y = x * W^T + b` for `x: batch x in`, `W: out x in`.
pub fn linear_forward<S: Scalar>(x: &[S], w: &[S], b: &[S], batch: usize, inp: usize, out: usize) -> Vec<S> {
    let mut y = vec![S::zero(); batch * out];
    gemm(Trans::No, Trans::Yes, batch, out, inp, x, w, &mut y, false);
    add_bias(&mut y, b);
    y
}

/// Accumulates `dW`, `db` and returns `dx` when requested.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    dy: &[S],
    batch: usize,
    inp: usize,
    out: usize,
    dw: &mut [S],
    db: &mut [S],
    want_dx: bool,
) -> Option<Vec<S>> {
    gemm(Trans::Yes, Trans::No, out, inp, batch, dy, x, dw, true);
    bias_grad(dy, db);
    want_dx.then(|| {
        let mut dx = vec![S::zero(); batch * inp];
        gemm(Trans::No, Trans::No, batch, inp, out, dy, w, &mut dx, false);
        dx
    })
}

pub fn add_bias<S: Scalar>(y: &mut [S], b: &[S]) {
    for row in y.chunks_mut(b.len()) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += *bb;
        }
    }
}

pub fn bias_grad<S: Scalar>(dy: &[S], db: &mut [S]) {
    for row in dy.chunks(db.len()) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += *d;
        }
    }
}

pub fn relu_inplace<S: Scalar>(v: &mut [S]) {
    v.iter_mut().for_each(|x| {
        if *x < S::zero() {
            *x = S::zero()
        }
    });
}

/// Zeroes `grad` wherever the post-activation value is not positive.
pub fn relu_backward_inplace<S: Scalar>(grad: &mut [S], activated: &[S]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= S::zero() {
            *g = S::zero();
        }
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Strided 3x3-style convolution. Weights are `cout x (k*k*cin)` in
/// `(ky, kx, cin)` order. Returns `(output, im2col matrix)`.
pub fn conv2d_forward<S: Scalar>(x: &[S], w: &[S], b: &[S], geo: &PatchGeometry, cout: usize) -> (Vec<S>, Vec<S>) {
    let cols = geo.im2col(x);
    let mut y = vec![S::zero(); geo.rows() * cout];
    gemm(Trans::No, Trans::Yes, geo.rows(), cout, geo.cols(), &cols, w, &mut y, false);
    add_bias(&mut y, b);
    (y, cols)
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<S: Scalar>(
    cols: &[S],
    w: &[S],
    dy: &[S],
    geo: &PatchGeometry,
    cout: usize,
    dw: &mut [S],
    db: &mut [S],
    want_dx: bool,
) -> Option<Vec<S>> {
    gemm(Trans::Yes, Trans::No, cout, geo.cols(), geo.rows(), dy, cols, dw, true);
    bias_grad(dy, db);
    want_dx.then(|| {
        let mut dcols = vec![S::zero(); geo.rows() * geo.cols()];
        gemm(Trans::No, Trans::No, geo.rows(), geo.cols(), cout, dy, w, &mut dcols, false);
        geo.col2im(&dcols)
    })
}

/// Transposed convolution. Weights are `cin x (k*k*cout)`; `geo.channels`
/// is `cout` and the small grid is the input.
pub fn conv_transpose2d_forward<S: Scalar>(x: &[S], w: &[S], b: &[S], geo: &PatchGeometry, cin: usize) -> Vec<S> {
    let mut cols = vec![S::zero(); geo.rows() * geo.cols()];
    gemm(Trans::No, Trans::No, geo.rows(), geo.cols(), cin, x, w, &mut cols, false);
    let mut y = geo.col2im(&cols);
    add_bias(&mut y, b);
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    dy: &[S],
    geo: &PatchGeometry,
    cin: usize,
    dw: &mut [S],
    db: &mut [S],
    want_dx: bool,
) -> Option<Vec<S>> {
    bias_grad(dy, db);
    let dcols = geo.im2col(dy);
    gemm(Trans::Yes, Trans::No, cin, geo.cols(), geo.rows(), x, &dcols, dw, true);
    want_dx.then(|| {
        let mut dx = vec![S::zero(); geo.rows() * cin];
        gemm(Trans::No, Trans::Yes, geo.rows(), cin, geo.cols(), &dcols, w, &mut dx, false);
        dx
    })
}
