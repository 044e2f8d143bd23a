//! Crops to training examples: normalization, augmentation, blurred
//! targets, partial-scan selection and nearest-neighbour infill.

use rand::Rng;

use crate::distance;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scanpath::{self, NoiseModel, PathMask};

pub use crate::filter::gaussian_blur;

/// Intensity span below which a crop is treated as uniform.
pub const UNIFORM_SPAN: f64 = 1e-6;

/// Replaces non-finite values with 0, then maps `[min, max]` onto `[-1, 1]`.
/// Uniform crops become identically 0.
pub fn normalize(crop: &Image) -> Image {
    let clean: Vec<f64> = crop.data().iter().map(|&v| if v.is_finite() { v as f64 } else { 0.0 }).collect();
    let (lo, hi) = clean.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let data = if clean.is_empty() || hi - lo < UNIFORM_SPAN {
        vec![0.0; clean.len()]
    } else {
        let span = hi - lo;
        clean.iter().map(|&v| (2.0 * (v - lo) / span - 1.0) as f32).collect()
    };
    Image::new(crop.height(), crop.width(), data).expect("same extents")
}

/// Applies element `code` of the dihedral group of the square: an optional
/// horizontal flip (`code >= 4`) followed by `code % 4`
/// quarter turns counter-clockwise.
pub fn augment(crop: &Image, code: u8) -> Result<Image> {
    if code >= 8 {
        return Err(Error::contract(format!("augmentation code {code} outside 0..8")));
    }
    let (h, w) = crop.dims();
    if code % 2 == 1 && h != w {
        return Err(Error::contract("odd quarter turns need a square crop"));
    }
    let flipped = if code >= 4 { Image::from_fn(h, w, |r, c| crop.get(r, w - 1 - c)) } else { crop.clone() };
    let mut out = flipped;
    for _ in 0..code % 4 {
        let (h, w) = out.dims();
        let src = out;
        // counter-clockwise: new(r, c) = old(c, w - 1 - r)
        out = Image::from_fn(w, h, |r, c| src.get(c, w - 1 - r));
    }
    Ok(out)
}

/// Code of the inverse group element.
pub fn augment_inverse(code: u8) -> u8 {
    if code >= 4 {
        code
    } else {
        (4 - code) % 4
    }
}

/// Code equivalent to applying `first` then `second`.
pub fn augment_compose(first: u8, second: u8) -> u8 {
    let (f1, r1) = (first >= 4, first % 4);
    let (f2, r2) = (second >= 4, second % 4);
    // a flip conjugates a rotation into its inverse: F∘R^k = R^{-k}∘F
    let (flip, rot) = if f2 { (!f1, (4 - r1) % 4 + r2) } else { (f1, r1 + r2) };
    (rot % 4) + if flip { 4 } else { 0 }
}

/// `I_scan = Φ·I_N`, followed by dwell noise for blurred masks when a noise
/// model is given.
pub fn select_partial(normalized: &Image, mask: &PathMask, noise: Option<&NoiseModel>) -> Result<Image> {
    let scan = normalized.zip_map(mask.weights(), |v, phi| v * phi)?;
    match noise {
        None => Ok(scan),
        Some(_) if !mask.is_blurred() => Err(Error::contract("binary masks never receive noise")),
        Some(model) => scanpath::apply_noise(&scan, mask, model),
    }
}

/// Like [`select_partial`] but draws the noise from `rng`.
pub fn select_partial_with(normalized: &Image, mask: &PathMask, noise: Option<(&NoiseModel, &mut dyn rand::RngCore)>) -> Result<Image> {
    let scan = normalized.zip_map(mask.weights(), |v, phi| v * phi)?;
    match noise {
        None => Ok(scan),
        Some(_) if !mask.is_blurred() => Err(Error::contract("binary masks never receive noise")),
        Some((model, mut rng)) => scanpath::apply_noise_with(&scan, mask, model, &mut rng),
    }
}

/// Fills every off-path pixel with its nearest on-path value; ties go to the
/// smaller row, then the smaller column.
pub fn nn_infill(scan: &Image, mask: &PathMask) -> Result<Image> {
    scan.ensure_same_dims(mask.weights(), "nn_infill")?;
    if mask.is_blurred() {
        return Err(Error::contract("nearest-neighbour infill needs a binary mask"));
    }
    let (h, w) = scan.dims();
    let nearest = distance::nearest_on(&mask.on_pixels(), h, w).ok_or_else(|| Error::contract("mask has no on-path pixels"))?;
    let data = nearest.iter().map(|&i| scan.data()[i]).collect();
    Image::new(h, w, data)
}

/// Half-size bilinear (align-corners) downsample used for the auxiliary pair.
pub fn downsample_half(image: &Image) -> Image {
    let (h, w) = image.dims();
    resize(image, (h / 2).max(1), (w / 2).max(1))
}

pub fn resize(image: &Image, out_h: usize, out_w: usize) -> Image {
    let t = image.to_tensor().resized(out_h, out_w).expect("positive target");
    Image::from_tensor(&t).expect("single plane")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExampleConfig {
    /// Nearest-neighbour infill for binary masks.
    pub infill: bool,
    /// Dwell noise for blurred masks.
    pub noise: bool,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        Self { infill: true, noise: true }
    }
}

/// One generator input/target set. All images share the crop side except
/// the `_half` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    /// Network input `(I_scan + 1)/2`, infilled when configured.
    pub input_scan: Image,
    /// Mask weights `Φ`, fed as a second input channel.
    pub path_channel: Image,
    /// `(blur(I_N) + 1)/2`.
    pub target_full: Image,
    pub target_half: Image,
}

impl TrainingExample {
    pub fn side(&self) -> usize {
        self.input_scan.height()
    }

    /// Target in the `[-1, 1]` domain the critics see.
    pub fn real_for_critic(&self) -> Image {
        self.target_full.map(|v| 2.0 * v - 1.0)
    }
}

/// Builds a training example from a normalized crop.
pub fn make_example(crop: &Image, mask: &PathMask, cfg: &ExampleConfig, noise_rng: &mut dyn rand::RngCore) -> Result<TrainingExample> {
    crop.ensure_same_dims(mask.weights(), "make_example")?;
    let target_full = gaussian_blur(crop).map(|v| (v + 1.0) / 2.0);
    let noise = NoiseModel::new(0);
    let scan = if mask.is_blurred() && cfg.noise {
        select_partial_with(crop, mask, Some((&noise, noise_rng)))?
    } else {
        select_partial(crop, mask, None)?
    };
    let mut input_scan = scan.map(|v| (v + 1.0) / 2.0);
    if cfg.infill && !mask.is_blurred() {
        input_scan = nn_infill(&input_scan, mask)?;
    }
    let target_half = downsample_half(&target_full);
    Ok(TrainingExample { input_scan, path_channel: mask.weights().clone(), target_full, target_half })
}

/// Picks a uniformly random augmentation code.
pub fn random_code(rng: &mut impl Rng) -> u8 {
    rng.gen_range(0..8)
}
