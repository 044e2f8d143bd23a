//! The 5×5 Gaussian used for blurred targets and blurred masks.

use crate::image::Image;

pub const BLUR_RADIUS: usize = 2;
pub const BLUR_SIGMA: f64 = 2.5;

/// Normalized 1-D taps `exp(-x²/(2σ²))` for `x = -2..=2`. The 2-D kernel is
/// their outer product.
pub fn gaussian_taps() -> [f64; 2 * BLUR_RADIUS + 1] {
    let mut taps = [0.0; 2 * BLUR_RADIUS + 1];
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - BLUR_RADIUS as f64;
        *t = (-x * x / (2.0 * BLUR_SIGMA * BLUR_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Full 5×5 kernel, row-major, summing to one.
pub fn gaussian_kernel() -> [[f64; 5]; 5] {
    let t = gaussian_taps();
    let mut k = [[0.0; 5]; 5];
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = t[i] * t[j];
        }
    }
    k
}

/// Mirror index for half-sample symmetric padding: `-1 → 0`, `n → n-1`.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Separable 5×5 Gaussian blur with mirrored borders. Computed in `f64`.
/// The border rule makes the blur matrix symmetric, so the image sum is
/// preserved up to rounding.
pub fn gaussian_blur(image: &Image) -> Image {
    let (h, w) = image.dims();
    if h == 0 || w == 0 {
        return image.clone();
    }
    let taps = gaussian_taps();
    let r = BLUR_RADIUS as isize;
    let src = image.data();
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = reflect(x as isize + k as isize - r, w);
                acc += t * src[y * w + xx] as f64;
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = reflect(y as isize + k as isize - r, h);
                acc += t * tmp[yy * w + x];
            }
            out[y * w + x] = acc as f32;
        }
    }
    Image::new(h, w, out).expect("same extents")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_is_half_sample_symmetric() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
        assert_eq!(reflect(-2, 1), 0);
    }

    #[test]
    fn kernel_sums_to_one_and_center_matches_closed_form() {
        let k = gaussian_kernel();
        let s: f64 = k.iter().flatten().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let z: f64 = (-2..=2)
            .flat_map(|y| (-2..=2).map(move |x| (-((x * x + y * y) as f64) / 12.5).exp()))
            .sum();
        assert!((k[2][2] - 1.0 / z).abs() < 1e-12);
    }
}
