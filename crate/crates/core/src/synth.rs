//! Synthetic STEM-like lattice micrographs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lattice {
    Square,
    Hexagonal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticSource {
    pub lattice: Lattice,
    /// Nearest-neighbour site distance in pixels.
    pub spacing: f64,
    /// Gaussian peak standard deviation in pixels.
    pub peak_width: f64,
    /// Lattice rotation in radians.
    pub orientation: f64,
    /// Relative peak amplitude spread.
    pub amplitude_spread: f64,
    /// Probability that a site is empty.
    pub vacancy: f64,
    /// Amplitude of the smooth amorphous background.
    pub background: f64,
    /// Shot-like noise level; zero disables noise.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSource {
    /// Square lattice without noise, background, vacancies or amplitude spread.
    pub fn plain(spacing: f64, seed: u64) -> Self {
        Self {
            lattice: Lattice::Square,
            spacing,
            peak_width: spacing / 6.0,
            orientation: 0.0,
            amplitude_spread: 0.0,
            vacancy: 0.0,
            background: 0.0,
            noise: 0.0,
            seed,
        }
    }

    /// Randomized source for desk-scale datasets. Spacings scale with `side`.
    pub fn random(side: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5EED);
        let scale = side as f64 / 64.0;
        let spacing = (rng.gen_range(6.0..12.0) * scale).max(4.0);
        Self {
            lattice: if rng.gen_bool(0.5) { Lattice::Square } else { Lattice::Hexagonal },
            spacing,
            peak_width: spacing * rng.gen_range(0.12..0.22),
            orientation: rng.gen_range(0.0..std::f64::consts::PI),
            amplitude_spread: rng.gen_range(0.0..0.3),
            vacancy: rng.gen_range(0.0..0.08),
            background: rng.gen_range(0.0..0.4),
            noise: rng.gen_range(0.0..0.08),
            seed,
        }
    }
}

/// Lattice sites whose centers fall inside `[0, side) × [0, side)`, in
/// `(row, col)` pixel coordinates. The lattice origin is offset by a
/// seed-dependent fraction of a cell.
pub fn lattice_sites(source: &SyntheticSource, side: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(source.seed);
    let (ox, oy) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
    let s = source.spacing;
    let (b1, b2) = match source.lattice {
        Lattice::Square => ((s, 0.0), (0.0, s)),
        Lattice::Hexagonal => ((s, 0.0), (s / 2.0, s * 3f64.sqrt() / 2.0)),
    };
    let (sn, cs) = source.orientation.sin_cos();
    let rot = |(x, y): (f64, f64)| (x * cs - y * sn, x * sn + y * cs);
    let (a1, a2) = (rot(b1), rot(b2));
    let origin = (ox * a1.0 + oy * a2.0, ox * a1.1 + oy * a2.1);
    let n = side as f64;
    // enough cells to cover the frame from any rotation
    let reach = ((2.0 * n) / (s * 0.5)).ceil() as i64 + 2;
    let mut sites = Vec::new();
    for i in -reach..=reach {
        for j in -reach..=reach {
            let x = origin.0 + i as f64 * a1.0 + j as f64 * a2.0;
            let y = origin.1 + i as f64 * a1.1 + j as f64 * a2.1;
            if (0.0..n).contains(&x) && (0.0..n).contains(&y) {
                sites.push((y, x));
            }
        }
    }
    sites.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    sites
}

/// Renders a micrograph: Gaussian peaks at occupied lattice sites plus an
/// optional smooth background and shot-like noise.
pub fn synth_micrograph(source: &SyntheticSource, side: usize) -> Result<Image> {
    if source.spacing < 4.0 {
        return Err(Error::contract(format!("lattice spacing {} below 4 px", source.spacing)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(source.seed.wrapping_add(1));
    let mut acc = vec![0.0f64; side * side];
    let w = source.peak_width.max(0.1);
    let radius = (4.0 * w).ceil() as i64;
    for (py, px) in lattice_sites(source, side) {
        let occupied = !rng.gen_bool(source.vacancy.clamp(0.0, 1.0));
        let amp = 1.0 + source.amplitude_spread * rng.gen_range(-1.0..1.0);
        if !occupied {
            continue;
        }
        let (cy, cx) = (py.round() as i64, px.round() as i64);
        for r in (cy - radius).max(0)..=(cy + radius).min(side as i64 - 1) {
            for c in (cx - radius).max(0)..=(cx + radius).min(side as i64 - 1) {
                let d2 = (r as f64 - py).powi(2) + (c as f64 - px).powi(2);
                acc[r as usize * side + c as usize] += amp * (-d2 / (2.0 * w * w)).exp();
            }
        }
    }
    if source.background > 0.0 {
        // a few long-wavelength plane waves
        let waves: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                let k = rng.gen_range(0.5..2.5) * std::f64::consts::TAU / side as f64;
                let dir = rng.gen_range(0.0..std::f64::consts::TAU);
                (k * dir.cos(), k * dir.sin(), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.3..1.0))
            })
            .collect();
        let norm: f64 = waves.iter().map(|w| w.3).sum();
        for r in 0..side {
            for c in 0..side {
                let v: f64 = waves.iter().map(|&(kx, ky, ph, a)| a * (1.0 + (kx * c as f64 + ky * r as f64 + ph).cos()) / 2.0).sum();
                acc[r * side + c] += source.background * v / norm;
            }
        }
    }
    if source.noise > 0.0 {
        for v in &mut acc {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += source.noise * (v.max(0.0) + 0.05).sqrt() * z;
        }
    }
    Image::new(side, side, acc.into_iter().map(|v| v as f32).collect())
}
