//! Error metrics, classical completion baselines and coverage sweeps.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::image::{self, Image};
use crate::model::Model;
use crate::pipeline::{make_example, nn_infill, select_partial, ExampleConfig};
use crate::rng::stream;
use crate::scanpath::{blur_mask, distance_map, generate, GridOptions, PathKind, PathMask};

pub const HIST_BINS: usize = 100;
pub const HIST_MAX: f64 = 0.224;
pub const MIN_BIN_PIXELS: usize = 50;
pub const LAPLACE_TOLERANCE: f64 = 1e-4;
pub const LAPLACE_MAX_ITERS: usize = 10_000;

/// Root mean squared difference, accumulated in `f64`.
pub fn rms_error(pred: &Image, truth: &Image) -> Result<f64> {
    pred.ensure_same_dims(truth, "rms_error")?;
    let s: f64 = pred.data().iter().zip(truth.data()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    Ok((s / pred.len().max(1) as f64).sqrt())
}

/// Fixed-range histogram with left-closed bins; values at or above the
/// upper edge land in the last bin, negatives in the first.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::contract(format!("histogram needs bins > 0 and hi > lo, got {bins} over [{lo}, {hi}]")));
        }
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let k = if v.is_nan() { 0 } else { (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1) };
            counts[k] += 1;
        }
        Ok(Self { lo, hi, counts })
    }

    /// The 100-bin `[0, 0.224]` histogram used for RMS errors.
    pub fn rms(values: &[f64]) -> Self {
        Self::new(values, HIST_BINS, 0.0, HIST_MAX).expect("valid fixed range")
    }

    pub fn bin_left(&self, k: usize) -> f64 {
        self.lo + (self.hi - self.lo) * k as f64 / self.counts.len() as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// CSV rows `bin_left,count` after a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{c}\n", self.bin_left(k)));
        }
        s
    }

    /// Parses [`to_csv`](Self::to_csv) output; the upper edge is recovered
    /// from the uniform bin spacing, rounded to 12 decimals.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lefts = Vec::new();
        let mut counts = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let (a, b) = line.split_once(',').ok_or_else(|| Error::Data(format!("bad histogram row `{line}`")))?;
            lefts.push(a.trim().parse::<f64>().map_err(|_| Error::Data(format!("bad bin edge `{a}`")))?);
            counts.push(b.trim().parse::<u64>().map_err(|_| Error::Data(format!("bad count `{b}`")))?);
        }
        if lefts.len() < 2 {
            return Err(Error::Data("histogram needs at least two bins".into()));
        }
        let n = lefts.len();
        let lo = lefts[0];
        let hi = lo + (lefts[n - 1] - lo) * n as f64 / (n - 1) as f64;
        // edges are written at full precision, so 12 decimals recover them
        let hi = (hi * 1e12).round() / 1e12;
        Ok(Self { lo, hi, counts })
    }

    /// Minimal bar-chart rendering.
    pub fn to_svg(&self) -> String {
        let (w, h) = (400.0, 200.0);
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let bw = w / self.counts.len() as f64;
        let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n");
        for (k, &c) in self.counts.iter().enumerate() {
            let bh = h * c as f64 / max;
            s.push_str(&format!("<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{bw:.2}\" height=\"{bh:.2}\" fill=\"steelblue\"/>\n", k as f64 * bw, h - bh));
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Per-pixel mean squared error over an image set, with the mean and
/// standard deviation over map pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct MseMap {
    pub map: Image,
    pub mean: f64,
    pub std: f64,
}

pub fn per_pixel_mse(preds: &[Image], truths: &[Image]) -> Result<MseMap> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::contract(format!("per-pixel MSE needs equal non-empty sets, got {} and {}", preds.len(), truths.len())));
    }
    let (h, w) = preds[0].dims();
    let mut acc = vec![0.0f64; h * w];
    for (p, t) in preds.iter().zip(truths) {
        p.ensure_same_dims(t, "per_pixel_mse")?;
        if p.dims() != (h, w) {
            return Err(Error::contract("per-pixel MSE needs images of one size"));
        }
        for (a, (&x, &y)) in acc.iter_mut().zip(p.data().iter().zip(t.data())) {
            *a += (x as f64 - y as f64).powi(2);
        }
    }
    let n = preds.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    let mean = acc.iter().sum::<f64>() / acc.len() as f64;
    let std = (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / acc.len() as f64).sqrt();
    let map = Image::new(h, w, acc.into_iter().map(|a| a as f32).collect())?;
    Ok(MseMap { map, mean, std })
}

/// Mean map value for one distance bin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceBin {
    /// Left edge of the bin in pixels.
    pub distance: f64,
    pub mean: f64,
    pub count: usize,
}

/// Groups map pixels by `floor(distance / bin_width)` and averages each
/// group, dropping groups with fewer than `min_count` pixels.
pub fn error_vs_distance(map: &Image, dist: &Image, bin_width: f64, min_count: usize) -> Result<Vec<DistanceBin>> {
    map.ensure_same_dims(dist, "error_vs_distance")?;
    if !(bin_width > 0.0) {
        return Err(Error::contract("bin width must be positive"));
    }
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for (&m, &d) in map.data().iter().zip(dist.data()) {
        if !d.is_finite() {
            continue;
        }
        let k = (d as f64 / bin_width).floor() as usize;
        if sums.len() <= k {
            sums.resize(k + 1, (0.0, 0));
        }
        sums[k].0 += m as f64;
        sums[k].1 += 1;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .filter(|(_, (_, c))| *c >= min_count && *c > 0)
        .map(|(k, (s, c))| DistanceBin { distance: k as f64 * bin_width, mean: s / c as f64, count: c })
        .collect())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::contract("spearman needs two equal-length samples of size >= 2"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Numeric("spearman correlation of a constant sample".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Nearest,
    Laplace,
}

impl Baseline {
    pub const ALL: [Baseline; 2] = [Baseline::Nearest, Baseline::Laplace];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Nearest => "nn",
            Baseline::Laplace => "laplace",
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" | "nearest" => Ok(Baseline::Nearest),
            "laplace" => Ok(Baseline::Laplace),
            other => Err(Error::Config(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Completes a scan from its on-path values. `mask` must be binary.
pub fn baseline_complete(scan: &Image, mask: &PathMask, method: Baseline) -> Result<Image> {
    match method {
        Baseline::Nearest => nn_infill(scan, mask),
        Baseline::Laplace => laplace_fill(scan, mask, LAPLACE_TOLERANCE, LAPLACE_MAX_ITERS),
    }
}

/// Discrete Laplace equation on off-path pixels with on-path values fixed,
/// solved by Jacobi iteration from the nearest-neighbour fill. Image edges
/// use only in-frame neighbours. Stops when the largest update is below
/// `tolerance` or after `max_iters` sweeps.
pub fn laplace_fill(scan: &Image, mask: &PathMask, tolerance: f64, max_iters: usize) -> Result<Image> {
    let start = nn_infill(scan, mask)?;
    let (h, w) = scan.dims();
    let fixed = mask.on_pixels();
    let mut cur: Vec<f64> = start.data().iter().map(|&v| v as f64).collect();
    let mut next = cur.clone();
    for _ in 0..max_iters {
        let mut delta = 0.0f64;
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if fixed[i] {
                    continue;
                }
                let (mut s, mut n) = (0.0, 0.0);
                if r > 0 {
                    s += cur[i - w];
                    n += 1.0;
                }
                if r + 1 < h {
                    s += cur[i + w];
                    n += 1.0;
                }
                if c > 0 {
                    s += cur[i - 1];
                    n += 1.0;
                }
                if c + 1 < w {
                    s += cur[i + 1];
                    n += 1.0;
                }
                let v = if n > 0.0 { s / n } else { cur[i] };
                delta = delta.max((v - cur[i]).abs());
                next[i] = v;
            }
        }
        std::mem::swap(&mut cur, &mut next);
        if delta < tolerance {
            break;
        }
    }
    Image::new(h, w, cur.into_iter().map(|v| v as f32).collect())
}

/// Which ground truth RMS is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truth {
    /// `(blur(I_N) + 1)/2`, what the generator is trained to output.
    Blurred,
    /// `(I_N + 1)/2`.
    Raw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub kind: PathKind,
    pub grid: GridOptions,
    pub blurred_mask: bool,
    pub noise: bool,
    pub infill: bool,
    pub seed: u64,
    pub baselines: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { kind: PathKind::Spiral, grid: GridOptions::default(), blurred_mask: false, noise: true, infill: true, seed: 0, baselines: true }
    }
}

/// RMS of one method on one test image at one coverage.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub coverage: f64,
    pub index: usize,
    pub mask_seed: u64,
    pub method: String,
    pub rms_blurred: f64,
    pub rms_raw: f64,
}

/// Per-coverage products for one method.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub coverage: f64,
    pub method: String,
    pub mean: f64,
    pub median: f64,
    pub histogram: Histogram,
    pub mse: MseMap,
    pub curve: Vec<DistanceBin>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepReport {
    pub scores: Vec<ImageScore>,
    pub summaries: Vec<MethodSummary>,
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Mask seed for test image `index` at coverage slot `k`.
pub fn sweep_mask_seed(seed: u64, k: usize, index: usize) -> u64 {
    stream(seed, &[0x5357, k as u64, index as u64]).gen()
}

/// Scores the model (when given) and the baselines on normalized `test`
/// crops at each coverage. Masks are regenerated per coverage and image
/// from recorded seeds. Baselines see the noiseless binary scan.
pub fn coverage_sweep(model: Option<&Model>, coverages: &[f64], test: &[Image], cfg: &SweepConfig) -> Result<SweepReport> {
    if test.is_empty() {
        return Err(Error::Data("no test images".into()));
    }
    if model.is_none() && !cfg.baselines {
        return Err(Error::Config("nothing to evaluate: no model and baselines disabled".into()));
    }
    let side = test[0].height();
    let mut report = SweepReport::default();
    for (k, &coverage) in coverages.iter().enumerate() {
        let mut methods: Vec<String> = Vec::new();
        if model.is_some() {
            methods.push("model".into());
        }
        if cfg.baselines {
            methods.extend(Baseline::ALL.iter().map(|b| b.name().to_string()));
        }
        let mut preds: Vec<Vec<Image>> = vec![Vec::new(); methods.len()];
        let mut truths_blur = Vec::new();
        let mut dists: Vec<f32> = Vec::with_capacity(side * side * test.len());
        for (index, crop) in test.iter().enumerate() {
            if crop.dims() != (side, side) {
                return Err(Error::Data("test crops differ in size".into()));
            }
            let mask_seed = sweep_mask_seed(cfg.seed, k, index);
            let binary = generate(cfg.kind, side, coverage, mask_seed, &cfg.grid)?;
            let dist = distance_map(&binary)?;
            dists.extend_from_slice(dist.data());
            let blurred_truth = gaussian_blur(crop).map(|v| (v + 1.0) / 2.0);
            let raw_truth = crop.map(|v| (v + 1.0) / 2.0);
            let mut outs = Vec::new();
            if let Some(m) = model {
                let net_mask = if cfg.blurred_mask { blur_mask(&binary)? } else { binary.clone() };
                let mut rng = stream(mask_seed, &[0x4e4f]);
                let ex = make_example(crop, &net_mask, &ExampleConfig { infill: cfg.infill, noise: cfg.noise }, &mut rng)?;
                outs.push(m.generator.complete(&m.gen_params, &m.norm.running, &ex.input_scan, &ex.path_channel)?);
            }
            if cfg.baselines {
                let scan = select_partial(crop, &binary, None)?.map(|v| (v + 1.0) / 2.0);
                for b in Baseline::ALL {
                    outs.push(baseline_complete(&scan, &binary, b)?);
                }
            }
            for (mi, out) in outs.into_iter().enumerate() {
                report.scores.push(ImageScore {
                    coverage,
                    index,
                    mask_seed,
                    method: methods[mi].clone(),
                    rms_blurred: rms_error(&out, &blurred_truth)?,
                    rms_raw: rms_error(&out, &raw_truth)?,
                });
                preds[mi].push(out);
            }
            truths_blur.push(blurred_truth);
        }
        // every image's squared errors binned by its own distance map
        let stacked_dist = Image::new(side * test.len(), side, dists)?;
        for (mi, method) in methods.iter().enumerate() {
            let errs: Vec<f64> = report.scores.iter().filter(|s| s.coverage == coverage && &s.method == method).map(|s| s.rms_blurred).collect();
            let mse = per_pixel_mse(&preds[mi], &truths_blur)?;
            let sq: Vec<f32> = preds[mi]
                .iter()
                .zip(&truths_blur)
                .flat_map(|(p, t)| p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)))
                .collect();
            let curve = error_vs_distance(&Image::new(side * test.len(), side, sq)?, &stacked_dist, 1.0, MIN_BIN_PIXELS)?;
            report.summaries.push(MethodSummary {
                coverage,
                method: method.clone(),
                mean: errs.iter().sum::<f64>() / errs.len() as f64,
                median: median(&errs),
                histogram: Histogram::rms(&errs),
                mse,
                curve,
            });
        }
    }
    Ok(report)
}

pub const SCORES_HEADER: &str = "coverage,index,mask_seed,method,rms_blurred,rms_raw";

impl ImageScore {
    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{},{}", self.coverage, self.index, self.mask_seed, self.method, self.rms_blurred, self.rms_raw)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = || Error::Data(format!("bad score row `{line}`"));
        if f.len() != 6 {
            return Err(bad());
        }
        Ok(Self {
            coverage: f[0].parse().map_err(|_| bad())?,
            index: f[1].parse().map_err(|_| bad())?,
            mask_seed: f[2].parse().map_err(|_| bad())?,
            method: f[3].to_string(),
            rms_blurred: f[4].parse().map_err(|_| bad())?,
            rms_raw: f[5].parse().map_err(|_| bad())?,
        })
    }
}

pub fn scores_to_csv(scores: &[ImageScore]) -> String {
    let mut s = format!("{SCORES_HEADER}\n");
    for r in scores {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn parse_scores(text: &str) -> Result<Vec<ImageScore>> {
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(ImageScore::parse).collect()
}

pub fn curve_to_csv(curve: &[DistanceBin]) -> String {
    let mut s = String::from("distance,mean_mse,count\n");
    for b in curve {
        s.push_str(&format!("{},{},{}\n", b.distance, b.mean, b.count));
    }
    s
}

pub fn parse_curve(text: &str) -> Result<Vec<DistanceBin>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Data(format!("bad curve row `{l}`"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(DistanceBin { distance: f[0].parse().map_err(|_| bad())?, mean: f[1].parse().map_err(|_| bad())?, count: f[2].parse().map_err(|_| bad())? })
        })
        .collect()
}

impl SweepReport {
    /// Writes `scores.csv`, `summary.csv`, `hist.csv` (first method at the
    /// first coverage) and per coverage and method a histogram CSV and SVG,
    /// an error-vs-distance CSV and the per-pixel MSE map as 16-bit PGM and
    /// raw `.f32`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("scores.csv"), scores_to_csv(&self.scores))?;
        let mut summary = String::from("coverage,method,mean_rms,median_rms,count,mse_mean,mse_std\n");
        for s in &self.summaries {
            summary.push_str(&format!("{},{},{},{},{},{},{}\n", s.coverage, s.method, s.mean, s.median, s.histogram.total(), s.mse.mean, s.mse.std));
            let stem = format!("{}_{}", s.method, s.coverage);
            fs::write(dir.join(format!("hist_{stem}.csv")), s.histogram.to_csv())?;
            fs::write(dir.join(format!("hist_{stem}.svg")), s.histogram.to_svg())?;
            fs::write(dir.join(format!("distance_{stem}.csv")), curve_to_csv(&s.curve))?;
            let (lo, hi) = s.mse.map.min_max();
            image::write_pgm16(&dir.join(format!("mse_{stem}.pgm")), &s.mse.map, lo, hi.max(lo + f32::EPSILON))?;
            image::write_raw(&dir.join(format!("mse_{stem}.f32")), &s.mse.map)?;
        }
        fs::write(dir.join("summary.csv"), summary)?;
        if let Some(first) = self.summaries.first() {
            fs::write(dir.join("hist.csv"), first.histogram.to_csv())?;
        }
        Ok(())
    }
}
