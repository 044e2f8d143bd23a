//! im2col/GEMM convolution kernels shared by `conv2d` and `conv2d_transpose`.

use crate::element::{gemm, Element};

/// Spatial padding rule for [`Graph::conv2d`](crate::Graph::conv2d).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`; any odd leftover row
    /// or column of padding goes to the bottom/right.
    Same,
    /// No padding; `out = (in - k) / stride + 1`.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

fn same_pad(extent: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = extent.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(extent);
    (out, total / 2)
}

impl ConvGeom {
    /// Returns `None` when a valid convolution would produce an empty output.
    pub fn new(channels: usize, h: usize, w: usize, k: usize, stride: usize, padding: Padding) -> Option<Self> {
        let (out_h, pad_top, out_w, pad_left) = match padding {
            Padding::Same => {
                let (oh, pt) = same_pad(h, k, stride);
                let (ow, pl) = same_pad(w, k, stride);
                (oh, pt, ow, pl)
            }
            Padding::Valid => {
                if h < k || w < k {
                    return None;
                }
                ((h - k) / stride + 1, 0, (w - k) / stride + 1, 0)
            }
        };
        if out_h == 0 || out_w == 0 {
            return None;
        }
        Some(Self { channels, h, w, k, stride, pad_top, pad_left, out_h, out_w })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }
}

/// Unfolds one image `[C, H, W]` into `[C*k*k, out_h*out_w]`.
pub(crate) fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    debug_assert_eq!(x.len(), g.channels * g.h * g.w);
    debug_assert_eq!(cols.len(), g.col_rows() * g.col_cols());
    let n = g.col_cols();
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad_left as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `[C, H, W]`.
pub(crate) fn col2im<T: Element>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    debug_assert_eq!(x.len(), g.channels * g.h * g.w);
    let n = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad_left as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `out[b] = W · im2col(x[b])`, W viewed as `[Cout, Cin*k*k]`.
pub(crate) fn conv_forward<T: Element>(x: &[T], batch: usize, w: &[T], c_out: usize, g: &ConvGeom) -> Vec<T> {
    let in_len = g.channels * g.h * g.w;
    let out_len = c_out * g.col_cols();
    let mut out = vec![T::zero(); batch * out_len];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.col_rows() * g.col_cols()] };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let ob = &mut out[b * out_len..(b + 1) * out_len];
        let src = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        gemm(c_out, g.col_rows(), g.col_cols(), w, false, src, false, ob, T::zero());
    }
    out
}

/// Gradient of [`conv_forward`] with respect to its input.
pub(crate) fn conv_backward_input<T: Element>(dout: &[T], batch: usize, w: &[T], c_out: usize, g: &ConvGeom) -> Vec<T> {
    let in_len = g.channels * g.h * g.w;
    let out_len = c_out * g.col_cols();
    let mut dx = vec![T::zero(); batch * in_len];
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for b in 0..batch {
        let db = &dout[b * out_len..(b + 1) * out_len];
        let dxb = &mut dx[b * in_len..(b + 1) * in_len];
        if g.is_pointwise() {
            gemm(g.col_rows(), c_out, g.col_cols(), w, true, db, false, dxb, T::zero());
        } else {
            gemm(g.col_rows(), c_out, g.col_cols(), w, true, db, false, &mut cols, T::zero());
            col2im(&cols, g, dxb);
        }
    }
    dx
}

/// Gradient of [`conv_forward`] with respect to its weight.
pub(crate) fn conv_backward_weight<T: Element>(x: &[T], dout: &[T], batch: usize, c_out: usize, g: &ConvGeom) -> Vec<T> {
    let in_len = g.channels * g.h * g.w;
    let out_len = c_out * g.col_cols();
    let mut dw = vec![T::zero(); c_out * g.col_rows()];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.col_rows() * g.col_cols()] };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let db = &dout[b * out_len..(b + 1) * out_len];
        let src = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        gemm(c_out, g.col_cols(), g.col_rows(), db, false, src, true, &mut dw, T::one());
    }
    dw
}
