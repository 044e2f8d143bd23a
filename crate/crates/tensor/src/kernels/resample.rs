//! Align-corners bilinear interpolation.

use crate::element::Element;

/// Interpolation taps along one axis: `(lo, hi, frac)` per output index.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct AxisTaps<T> {
    pub taps: Vec<(usize, usize, T)>,
}

impl<T: Element> AxisTaps<T> {
    pub fn new(src: usize, dst: usize) -> Self {
        let taps = (0..dst)
            .map(|o| {
                if dst == 1 || src == 1 {
                    return (0, 0, T::zero());
                }
                // o * (src - 1) is exact in f64 for all realistic sizes.
                let pos = (o * (src - 1)) as f64 / (dst - 1) as f64;
                let lo = (pos.floor() as usize).min(src - 1);
                let hi = (lo + 1).min(src - 1);
                (lo, hi, T::from_f64(pos - lo as f64))
            })
            .collect();
        Self { taps }
    }
}

/// Resamples each `[H, W]` plane of `x` (`planes` of them) to `[oh, ow]`.
pub(crate) fn resample_forward<T: Element>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    ys: &AxisTaps<T>,
    xs: &AxisTaps<T>,
) -> Vec<T> {
    let (oh, ow) = (ys.taps.len(), xs.taps.len());
    if oh == h && ow == w {
        return x.to_vec();
    }
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ys.taps.iter().enumerate() {
            let r0 = &src[y0 * w..(y0 + 1) * w];
            let r1 = &src[y1 * w..(y1 + 1) * w];
            for (ox, &(x0, x1, fx)) in xs.taps.iter().enumerate() {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                dst[oy * ow + ox] = top + (bot - top) * fy;
            }
        }
    }
    out
}

pub(crate) fn resample_backward<T: Element>(
    dout: &[T],
    planes: usize,
    h: usize,
    w: usize,
    ys: &AxisTaps<T>,
    xs: &AxisTaps<T>,
) -> Vec<T> {
    let (oh, ow) = (ys.taps.len(), xs.taps.len());
    if oh == h && ow == w {
        return dout.to_vec();
    }
    let one = T::one();
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let g = &dout[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.taps.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.taps.iter().enumerate() {
                let v = g[oy * ow + ox];
                d[y0 * w + x0] += v * (one - fy) * (one - fx);
                d[y0 * w + x1] += v * (one - fy) * fx;
                d[y1 * w + x0] += v * fy * (one - fx);
                d[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    dx
}
