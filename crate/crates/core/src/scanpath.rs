//! Scan paths, their rasterized masks, and the dwell-time noise model.
//!
//! Pixel `(r, c)` has its center at continuous coordinates `(r, c)`. A pixel
//! is on the path when its center lies within half a pixel of the path.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distance;
use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::image::{self, Image};

pub const MIN_SIDE: usize = 32;
pub const MIN_COVERAGE: f64 = 1.0 / 200.0;
pub const MAX_COVERAGE: f64 = 0.25;
pub const CALIBRATION_STEPS: usize = 64;
/// Calibration stops early once this close to nominal.
const CALIBRATION_AIM: f64 = 0.01;
/// Largest accepted relative coverage error.
pub const CALIBRATION_TOLERANCE: f64 = 0.10;
/// Longest distance between consecutive continuous path samples.
const SAMPLE_STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PathKind {
    Spiral,
    JitteredGrid,
    /// Loaded from a file or built directly from weights.
    Custom,
}

impl PathKind {
    pub fn name(self) -> &'static str {
        match self {
            PathKind::Spiral => "spiral",
            PathKind::JitteredGrid => "grid",
            PathKind::Custom => "custom",
        }
    }
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PathKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spiral" => Ok(PathKind::Spiral),
            "grid" | "jittered_grid" | "jittered-grid" => Ok(PathKind::JitteredGrid),
            other => Err(Error::Config(format!("unknown path kind `{other}` (expected spiral or grid)"))),
        }
    }
}

/// Options for the jittered grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridOptions {
    /// Fast-scan segment length in pixels.
    pub segment_len: usize,
    /// Vertical jitter half-width as a fraction of the row spacing.
    pub jitter: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { segment_len: 16, jitter: 0.25 }
    }
}

/// Per-pixel scan weights plus the traversal that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct PathMask {
    weights: Image,
    traversal: Vec<(i32, i32)>,
    nominal_coverage: f64,
    measured_coverage: f64,
    kind: PathKind,
    blurred: bool,
}

impl PathMask {
    /// Binary mask from explicit weights; every weight must be 0 or 1.
    pub fn from_binary(weights: Image) -> Result<Self> {
        if weights.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::contract("binary mask weights must be 0 or 1"));
        }
        let measured = on_fraction(&weights);
        if measured == 0.0 {
            return Err(Error::contract("mask has no on-path pixels"));
        }
        let traversal = raster_order(&weights);
        Ok(Self { weights, traversal, nominal_coverage: measured, measured_coverage: measured, kind: PathKind::Custom, blurred: false })
    }

    /// Graded mask from weights in `[0, 1]`.
    pub fn from_weights(weights: Image) -> Result<Self> {
        if weights.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::contract("mask weights must lie in [0, 1]"));
        }
        if weights.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Self::from_binary(weights);
        }
        let measured = on_fraction(&weights);
        let traversal = raster_order(&weights);
        Ok(Self { weights, traversal, nominal_coverage: measured, measured_coverage: measured, kind: PathKind::Custom, blurred: true })
    }

    /// Every pixel on the path.
    pub fn full(height: usize, width: usize) -> Self {
        Self::from_binary(Image::filled(height, width, 1.0)).expect("non-empty")
    }

    pub fn weights(&self) -> &Image {
        &self.weights
    }

    pub fn traversal(&self) -> &[(i32, i32)] {
        &self.traversal
    }

    pub fn nominal_coverage(&self) -> f64 {
        self.nominal_coverage
    }

    pub fn measured_coverage(&self) -> f64 {
        self.measured_coverage
    }

    pub fn kind(&self) -> PathKind {
        self.kind
    }

    pub fn is_blurred(&self) -> bool {
        self.blurred
    }

    pub fn dims(&self) -> (usize, usize) {
        self.weights.dims()
    }

    /// Pixels with nonzero weight.
    pub fn on_pixels(&self) -> Vec<bool> {
        self.weights.data().iter().map(|&v| v > 0.0).collect()
    }
}

fn on_fraction(weights: &Image) -> f64 {
    weights.data().iter().filter(|&&v| v > 0.0).count() as f64 / weights.len().max(1) as f64
}

fn raster_order(weights: &Image) -> Vec<(i32, i32)> {
    let w = weights.width();
    (0..weights.len()).filter(|&i| weights.data()[i] > 0.0).map(|i| ((i / w) as i32, (i % w) as i32)).collect()
}

fn check_request(side: usize, nominal: f64) -> Result<()> {
    if side < MIN_SIDE {
        return Err(Error::contract(format!("side {side} is below the minimum of {MIN_SIDE}")));
    }
    if !(nominal > MIN_COVERAGE && nominal <= MAX_COVERAGE) {
        return Err(Error::contract(format!("coverage {nominal} outside (1/200, 1/4]")));
    }
    Ok(())
}

/// Boolean raster of line segments, counting marked pixels.
struct Raster {
    side: usize,
    on: Vec<bool>,
    count: usize,
}

impl Raster {
    fn new(side: usize) -> Self {
        Self { side, on: vec![false; side * side], count: 0 }
    }

    fn mark_segment(&mut self, a: (f64, f64), b: (f64, f64)) {
        let n = self.side as f64;
        let r0 = (a.0.min(b.0) - 0.5).ceil().max(0.0);
        let r1 = (a.0.max(b.0) + 0.5).floor().min(n - 1.0);
        let c0 = (a.1.min(b.1) - 0.5).ceil().max(0.0);
        let c1 = (a.1.max(b.1) + 0.5).floor().min(n - 1.0);
        if r0 > r1 || c0 > c1 {
            return;
        }
        let (dr, dc) = (b.0 - a.0, b.1 - a.1);
        let len2 = dr * dr + dc * dc;
        for r in r0 as usize..=r1 as usize {
            for c in c0 as usize..=c1 as usize {
                let (pr, pc) = (r as f64 - a.0, c as f64 - a.1);
                let t = if len2 > 0.0 { ((pr * dr + pc * dc) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let (er, ec) = (pr - t * dr, pc - t * dc);
                if er * er + ec * ec <= 0.25 {
                    let idx = r * self.side + c;
                    if !self.on[idx] {
                        self.on[idx] = true;
                        self.count += 1;
                    }
                }
            }
        }
    }

    fn mark_polyline(&mut self, pts: &[(f64, f64)]) {
        if pts.len() == 1 {
            self.mark_segment(pts[0], pts[0]);
        }
        for w in pts.windows(2) {
            self.mark_segment(w[0], w[1]);
        }
    }

    fn coverage(&self) -> f64 {
        self.count as f64 / (self.side * self.side) as f64
    }

    fn into_image(self) -> Image {
        let side = self.side;
        Image::new(side, side, self.on.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect()).expect("square")
    }
}

/// Rounds continuous samples to pixel cells, dropping consecutive repeats.
/// Cells outside the frame are kept so the sequence stays continuous.
fn to_cells(points: &[(f64, f64)]) -> Vec<(i32, i32)> {
    let mut out: Vec<(i32, i32)> = Vec::with_capacity(points.len());
    for &(r, c) in points {
        let cell = (r.round() as i32, c.round() as i32);
        if out.last() != Some(&cell) {
            out.push(cell);
        }
    }
    out
}

/// Inserts points so no two consecutive samples are more than `SAMPLE_STEP` apart.
fn densify(vertices: &[(f64, f64)], out: &mut Vec<(f64, f64)>) {
    for (i, &v) in vertices.iter().enumerate() {
        if i == 0 {
            if out.last() != Some(&v) {
                out.push(v);
            }
            continue;
        }
        let u = vertices[i - 1];
        let len = ((v.0 - u.0).powi(2) + (v.1 - u.1).powi(2)).sqrt();
        let n = (len / SAMPLE_STEP).ceil().max(1.0) as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            out.push((u.0 + t * (v.0 - u.0), u.1 + t * (v.1 - u.1)));
        }
    }
}

/// Bisection on a spacing parameter in log space. `coverage_of` must
/// decrease as spacing grows.
fn calibrate(kind: &'static str, nominal: f64, lo: f64, hi: f64, mut coverage_of: impl FnMut(f64) -> f64) -> Result<f64> {
    let (mut lo, mut hi) = (lo.ln(), hi.ln());
    let mut best: Option<(f64, f64, f64)> = None;
    for _ in 0..CALIBRATION_STEPS {
        let mid = 0.5 * (lo + hi);
        let spacing = mid.exp();
        let cov = coverage_of(spacing);
        let rel = (cov - nominal).abs() / nominal;
        if best.map_or(true, |(r, _, _)| rel < r) {
            best = Some((rel, spacing, cov));
        }
        if rel <= CALIBRATION_AIM {
            break;
        }
        if cov > nominal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rel, spacing, cov) = best.expect("at least one step");
    if rel > CALIBRATION_TOLERANCE {
        return Err(Error::Calibration { kind, achieved: cov, nominal });
    }
    Ok(spacing)
}

/// Continuous spiral samples `r = aθ` with ring spacing `2πa`, starting at
/// the image center and reaching past the corners.
fn spiral_points(side: usize, ring_spacing: f64, phase: f64) -> Vec<(f64, f64)> {
    let a = ring_spacing / (2.0 * std::f64::consts::PI);
    let center = (side as f64 - 1.0) / 2.0;
    // one extra ring past the half-diagonal so the corners are fully swept
    let r_max = side as f64 / std::f64::consts::SQRT_2 + ring_spacing;
    let mut pts = Vec::new();
    let mut theta = 0.0f64;
    loop {
        let r = a * theta;
        let ang = theta + phase;
        pts.push((center + r * ang.sin(), center + r * ang.cos()));
        if r >= r_max {
            break;
        }
        // arc length element is sqrt(r² + a²) dθ; shrink until the chord fits
        let mut dtheta = SAMPLE_STEP * 0.95 / (r * r + a * a).sqrt();
        loop {
            let (t, rr) = (theta + dtheta, a * (theta + dtheta));
            let (dy, dx) = (rr * (t + phase).sin() - r * ang.sin(), rr * (t + phase).cos() - r * ang.cos());
            if (dy * dy + dx * dx).sqrt() <= SAMPLE_STEP {
                break;
            }
            dtheta *= 0.8;
        }
        theta += dtheta;
    }
    pts
}

/// Archimedes spiral cropped to a `side×side` frame, ring spacing calibrated
/// so the rasterized coverage matches `nominal`. The phase is drawn from `seed`.
pub fn archimedes_spiral(side: usize, nominal: f64, seed: u64) -> Result<PathMask> {
    check_request(side, nominal)?;
    let phase = ChaCha8Rng::seed_from_u64(seed).gen_range(0.0..std::f64::consts::TAU);
    let coverage_of = |p: f64| {
        let mut raster = Raster::new(side);
        raster.mark_polyline(&spiral_points(side, p, phase));
        raster.coverage()
    };
    let spacing = calibrate("spiral", nominal, 1.0, 4.0 * side as f64, coverage_of)?;
    let pts = spiral_points(side, spacing, phase);
    let mut raster = Raster::new(side);
    raster.mark_polyline(&pts);
    let measured = raster.coverage();
    Ok(PathMask {
        weights: raster.into_image(),
        traversal: to_cells(&pts),
        nominal_coverage: nominal,
        measured_coverage: measured,
        kind: PathKind::Spiral,
        blurred: false,
    })
}

/// Vertices of the grid path in visiting order. Vertex pairs `(2i, 2i+1)`
/// are fast-scan segments; the edges between pairs are beam moves that are
/// not scanned. Rows alternate direction and turn around outside the frame.
fn grid_vertices(side: usize, spacing: f64, opts: &GridOptions, unit_jitter: &[f64], per_row: usize) -> Vec<(f64, f64)> {
    let last = side as f64 - 1.0;
    let rows = ((last / spacing).floor() as usize + 1).min(side);
    // center the block of rows; an integral offset keeps unjittered rows
    // off the half-pixel boundary where a line would mark two pixel rows
    let y0 = ((last - (rows - 1) as f64 * spacing) / 2.0).floor();
    let amp = opts.jitter * spacing;
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(rows * (2 * per_row + 2));
    for k in 0..rows {
        let y = y0 + k as f64 * spacing;
        let mut row = Vec::with_capacity(2 * per_row);
        for j in 0..per_row {
            let yy = y + amp * unit_jitter[k * per_row + j];
            let start = j * opts.segment_len;
            let end = ((j + 1) * opts.segment_len).min(side) - 1;
            row.push((yy, start as f64));
            row.push((yy, end as f64));
        }
        if k % 2 == 1 {
            row.reverse();
        }
        out.extend(row);
    }
    out
}

/// Full traversal through the grid vertices, inserting the out-of-frame
/// turnaround between rows.
fn grid_traversal(side: usize, vertices: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let last = side as f64 - 1.0;
    let mut path: Vec<(f64, f64)> = Vec::with_capacity(vertices.len() * 2);
    for pair in vertices.chunks(2) {
        if let Some(&prev) = path.last() {
            if prev.1 == pair[0].1 || (prev.1 - pair[0].1).abs() > 1.0 {
                // end of a row: leave the frame, step to the next row, come back
                let outside = if prev.1 > 0.0 { last + 2.0 } else { -2.0 };
                path.push((prev.0, outside));
                path.push((pair[0].0, outside));
            }
        }
        path.extend_from_slice(pair);
    }
    let mut samples = Vec::new();
    densify(&path, &mut samples);
    samples
}

/// Widely spaced horizontal fast-scan lines built from jittered segments,
/// visited in boustrophedon order, with the row spacing calibrated to `nominal`.
pub fn jittered_grid(side: usize, nominal: f64, seed: u64) -> Result<PathMask> {
    jittered_grid_with(side, nominal, seed, &GridOptions::default())
}

pub fn jittered_grid_with(side: usize, nominal: f64, seed: u64, opts: &GridOptions) -> Result<PathMask> {
    check_request(side, nominal)?;
    if opts.segment_len == 0 || !(0.0..0.5).contains(&opts.jitter) {
        return Err(Error::contract("grid segments need positive length and jitter in [0, 0.5)"));
    }
    let per_row = side.div_ceil(opts.segment_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit_jitter: Vec<f64> = (0..side * per_row).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let rasterize = |vertices: &[(f64, f64)]| {
        let mut raster = Raster::new(side);
        for pair in vertices.chunks(2) {
            raster.mark_segment(pair[0], pair[1]);
        }
        raster
    };
    let coverage_of = |s: f64| rasterize(&grid_vertices(side, s, opts, &unit_jitter, per_row)).coverage();
    let spacing = calibrate("grid", nominal, 1.0, 2.0 * side as f64, coverage_of)?;
    let vertices = grid_vertices(side, spacing, opts, &unit_jitter, per_row);
    let raster = rasterize(&vertices);
    let measured = raster.coverage();
    Ok(PathMask {
        weights: raster.into_image(),
        traversal: to_cells(&grid_traversal(side, &vertices)),
        nominal_coverage: nominal,
        measured_coverage: measured,
        kind: PathKind::JitteredGrid,
        blurred: false,
    })
}

/// Dispatches on `kind`; `Custom` is not generatable.
pub fn generate(kind: PathKind, side: usize, nominal: f64, seed: u64, grid: &GridOptions) -> Result<PathMask> {
    match kind {
        PathKind::Spiral => archimedes_spiral(side, nominal, seed),
        PathKind::JitteredGrid => jittered_grid_with(side, nominal, seed, grid),
        PathKind::Custom => Err(Error::contract("custom paths cannot be generated")),
    }
}

/// Blurs a binary mask with the 5×5 Gaussian and rescales so the largest
/// weight is 1.
pub fn blur_mask(mask: &PathMask) -> Result<PathMask> {
    if mask.blurred {
        return Err(Error::contract("mask is already blurred"));
    }
    let blurred = gaussian_blur(&mask.weights);
    let (_, max) = blurred.min_max();
    if max <= 0.0 {
        return Err(Error::contract("cannot blur an empty mask"));
    }
    let weights = blurred.map(|v| (v / max).clamp(0.0, 1.0));
    let measured = on_fraction(&weights);
    Ok(PathMask { weights, measured_coverage: measured, blurred: true, traversal: mask.traversal.clone(), ..*mask })
}

/// Multiplicative dwell noise `η(Φ) = Φ + (1 − Φ)·U`, `U ~ U[low, high)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub seed: u64,
    pub low: f64,
    pub high: f64,
}

impl NoiseModel {
    pub fn new(seed: u64) -> Self {
        Self { seed, low: 0.0, high: 2.0 }
    }
}

/// `scan · (Φ + (1 − Φ)·U)` with one independent `U` per pixel, drawn in
/// row-major order from the model's seed.
pub fn apply_noise(scan: &Image, mask: &PathMask, model: &NoiseModel) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    apply_noise_with(scan, mask, model, &mut rng)
}

pub fn apply_noise_with(scan: &Image, mask: &PathMask, model: &NoiseModel, rng: &mut impl Rng) -> Result<Image> {
    scan.ensure_same_dims(&mask.weights, "apply_noise")?;
    if !(model.high > model.low) {
        return Err(Error::contract("noise range must be non-empty"));
    }
    let data = scan
        .data()
        .iter()
        .zip(mask.weights.data())
        .map(|(&s, &phi)| {
            let u = rng.gen_range(model.low..model.high);
            let eta = phi as f64 + (1.0 - phi as f64) * u;
            (s as f64 * eta) as f32
        })
        .collect();
    Image::new(scan.height(), scan.width(), data)
}

/// Euclidean distance from every pixel to the nearest on-path pixel.
pub fn distance_map(mask: &PathMask) -> Result<Image> {
    let (h, w) = mask.dims();
    let on = mask.on_pixels();
    if !on.iter().any(|&b| b) {
        return Err(Error::contract("distance map of an empty mask"));
    }
    let d2 = distance::squared_edt(&on, h, w);
    Image::new(h, w, d2.into_iter().map(|d| d.sqrt() as f32).collect())
}

/// Binary masks go to 8-bit PGM, blurred masks to raw `.f32`.
pub fn export_mask(mask: &PathMask, path: &Path) -> Result<()> {
    if mask.blurred {
        image::write_raw(path, &mask.weights)
    } else {
        image::write_pgm8(path, &mask.weights, 0.0, 1.0)
    }
}

/// CSV with header `index,row,col`.
pub fn export_traversal(mask: &PathMask, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "index,row,col")?;
    for (i, (r, c)) in mask.traversal.iter().enumerate() {
        writeln!(w, "{i},{r},{c}")?;
    }
    w.flush()?;
    Ok(())
}
