use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pscan_core::dataset::{self, Dataset, Split};
use pscan_core::eval::{coverage_sweep, SweepConfig};
use pscan_core::image::{self, read_any, read_pgm, write_pgm8, write_raw};
use pscan_core::model::Model;
use pscan_core::pipeline::{nn_infill, select_partial, UNIFORM_SPAN};
use pscan_core::scanpath::{blur_mask, distance_map, export_mask, export_traversal, generate, GridOptions};
use pscan_core::train::{validation_rms, Trainer};
use pscan_core::{Error, Image, PathKind, PathMask};

use crate::config::RunConfig;

pub const CONFIG_ECHO: &str = "config.txt";

fn write_report(path: &Path, lines: &[(&str, String)]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (k, v) in lines {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    Ok(())
}

pub struct PathsArgs {
    pub kind: PathKind,
    pub side: usize,
    pub coverage: f64,
    pub seed: u64,
    pub blurred: bool,
    pub grid: GridOptions,
    pub out: PathBuf,
}

pub fn paths(a: &PathsArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    let binary = generate(a.kind, a.side, a.coverage, a.seed, &a.grid)?;
    let mask = if a.blurred { blur_mask(&binary)? } else { binary.clone() };
    let mask_file = if a.blurred { "mask.f32" } else { "mask.pgm" };
    export_mask(&mask, &a.out.join(mask_file))?;
    if a.blurred {
        write_pgm8(&a.out.join("mask_preview.pgm"), mask.weights(), 0.0, 1.0)?;
    }
    export_traversal(&binary, &a.out.join("traversal.csv"))?;
    let dist = distance_map(&binary)?;
    let mut d: Vec<f32> = dist.data().to_vec();
    d.sort_by(f32::total_cmp);
    let p95 = d[((d.len() - 1) as f64 * 0.95).round() as usize];
    let measured = binary.measured_coverage();
    write_report(
        &a.out.join("coverage.txt"),
        &[
            ("kind", a.kind.to_string()),
            ("side", a.side.to_string()),
            ("seed", a.seed.to_string()),
            ("blurred", a.blurred.to_string()),
            ("nominal_coverage", a.coverage.to_string()),
            ("measured_coverage", measured.to_string()),
            ("relative_error", ((measured - a.coverage) / a.coverage).to_string()),
            ("on_pixels", binary.on_pixels().iter().filter(|&&b| b).count().to_string()),
            ("traversal_len", binary.traversal().len().to_string()),
            ("distance_p95", p95.to_string()),
        ],
    )?;
    println!("{} mask: nominal {:.5}, measured {:.5}", a.kind, a.coverage, measured);
    Ok(())
}

pub struct PrepareArgs {
    pub data: Option<PathBuf>,
    pub synthetic: Option<usize>,
    pub side: usize,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub out: PathBuf,
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    let counts = match (&a.data, a.synthetic) {
        (Some(_), Some(_)) => bail!(Error::Config("give either --data or --synthetic, not both".into())),
        (None, None) => bail!(Error::Config("one of --data or --synthetic is required".into())),
        (None, Some(n)) => {
            if n < 3 {
                bail!(Error::Config(format!("--synthetic {n}: need at least 3 images to fill every split")));
            }
            dataset::write_synthetic(&a.out, n, a.ratios, a.side, a.seed)?
        }
        (Some(src), None) => split_directory(src, &a.out, a.ratios, a.seed)?,
    };
    println!("train {}, validation {}, test {}", counts[0], counts[1], counts[2]);
    Ok(())
}

/// Shuffles the image files directly under `src` by `seed` and copies them
/// into split directories.
fn split_directory(src: &Path, out: &Path, ratios: [f64; 3], seed: u64) -> Result<[usize; 3]> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(src)
        .with_context(|| format!("reading {}", src.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(), Some("tif" | "tiff" | "f32"))
        })
        .collect();
    if files.is_empty() {
        bail!(Error::Data(format!("{} holds no .tif/.tiff/.f32 images", src.display())));
    }
    files.sort();
    files.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = dataset::split_counts(files.len(), ratios);
    let mut rest = files.iter();
    for (k, split) in Split::ALL.into_iter().enumerate() {
        let dir = out.join(split.dir_name());
        std::fs::create_dir_all(&dir)?;
        for f in rest.by_ref().take(counts[k]) {
            let name = f.file_name().expect("listed files have names");
            std::fs::copy(f, dir.join(name)).with_context(|| format!("copying {}", f.display()))?;
        }
    }
    Ok(counts)
}

fn load_dataset(root: &Path, side: usize) -> Result<Dataset> {
    let index = dataset::ingest(root)?;
    Ok(Dataset::load(&index, side)?)
}

pub struct TrainArgs {
    pub config: RunConfig,
    pub resume: Option<PathBuf>,
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = &a.config;
    cfg.validate()?;
    let out = &cfg.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(CONFIG_ECHO), cfg.to_text())?;
    let root = cfg.data.as_ref().ok_or_else(|| Error::Data("no dataset: set `data` in the config or pass --data".into()))?;
    let data = Arc::new(load_dataset(root, cfg.train.side())?);
    let mut trainer = match &a.resume {
        Some(ckpt) => Trainer::resume(cfg.train.clone(), Arc::clone(&data), ckpt).with_context(|| format!("resuming from {}", ckpt.display()))?,
        None => Trainer::new(cfg.train.clone(), Arc::clone(&data))?,
    };
    if trainer.iter >= cfg.train.iterations {
        bail!(Error::Config(format!("checkpoint is already at iteration {} of {}", trainer.iter, cfg.train.iterations)));
    }
    let start = Instant::now();
    trainer.run(cfg.train.iterations, Some(out), &mut |_, row| {
        if let Some(v) = row.val_rms {
            log::info!("iter {} phase {} loss {:.5} val rms {:.5}", row.iter, row.phase, row.l_mse, v);
        }
    })?;
    trainer.save(&out.join("final.ckpt"))?;
    let val = validation_rms(&trainer.model, &trainer.full_validation_set()?)?;
    write_report(
        &out.join("summary.txt"),
        &[("iterations", trainer.iter.to_string()), ("validation_images", data.validation.len().to_string()), ("validation_rms", val.to_string())],
    )?;
    println!("trained to iteration {} in {:.1} s, validation RMS {:.5}", trainer.iter, start.elapsed().as_secs_f64(), val);
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub data: PathBuf,
    pub side: usize,
    pub coverages: Vec<f64>,
    pub kind: PathKind,
    pub blurred: bool,
    pub baselines: bool,
    pub limit: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let model = match &a.checkpoint {
        Some(p) => Some(Model::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?),
        None => None,
    };
    let side = model.as_ref().map_or(a.side, Model::side);
    let data = load_dataset(&a.data, side)?;
    let mut test = data.test;
    if let Some(n) = a.limit {
        test.truncate(n);
    }
    let infill = model.as_ref().map_or(true, |m| m.generator.config.infill);
    let cfg = SweepConfig {
        kind: a.kind,
        grid: GridOptions::default(),
        blurred_mask: a.blurred,
        noise: true,
        infill,
        seed: a.seed,
        baselines: a.baselines,
    };
    let report = coverage_sweep(model.as_ref(), &a.coverages, &test, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    report.write(&a.out)?;
    for s in &report.summaries {
        println!("coverage {:.4} {:>8}: mean RMS {:.5}, median {:.5}", s.coverage, s.method, s.mean, s.median);
    }
    Ok(())
}

pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub scan: PathBuf,
    pub mask: PathBuf,
    pub out: PathBuf,
}

/// `.pgm` masks are thresholded at 1/2; `.f32`/`.tif` masks are read as
/// weights in `[0, 1]`.
pub fn load_mask(path: &Path) -> Result<PathMask> {
    let is_pgm = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let weights = if is_pgm { read_pgm(path)?.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }) } else { read_any(path)? };
    Ok(PathMask::from_weights(weights).with_context(|| format!("mask {}", path.display()))?)
}

/// Network input from a raw scan: values at pixels with nonzero weight are
/// mapped from their `[min, max]` onto `[-1, 1]`, then selected and infilled
/// as in training.
pub fn prepare_scan(scan: &Image, mask: &PathMask, infill: bool) -> Result<Image> {
    scan.ensure_same_dims(mask.weights(), "infer")?;
    let on: Vec<f64> = scan.data().iter().zip(mask.weights().data()).filter(|(_, &w)| w > 0.0).map(|(&v, _)| v as f64).collect();
    if on.iter().any(|v| !v.is_finite()) {
        bail!(Error::Data("scan has non-finite values on the path".into()));
    }
    let (lo, hi) = on.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let normalized = if hi - lo < UNIFORM_SPAN {
        scan.map(|_| 0.0)
    } else {
        scan.map(|v| if v.is_finite() { (2.0 * (v as f64 - lo) / (hi - lo) - 1.0) as f32 } else { 0.0 })
    };
    let mut input = select_partial(&normalized, mask, None)?.map(|v| (v + 1.0) / 2.0);
    if infill && !mask.is_blurred() {
        input = nn_infill(&input, mask)?;
    }
    Ok(input)
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let model = Model::load(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let scan = read_any(&a.scan).with_context(|| format!("reading scan {}", a.scan.display()))?;
    let mask = load_mask(&a.mask)?;
    if scan.dims() != mask.dims() {
        bail!(Error::Data(format!("scan is {:?} but mask is {:?}", scan.dims(), mask.dims())));
    }
    if scan.dims() != (model.side(), model.side()) {
        bail!(Error::Data(format!("model expects {0}x{0} inputs, scan is {1:?}", model.side(), scan.dims())));
    }
    let input = prepare_scan(&scan, &mask, model.generator.config.infill)?;
    let start = Instant::now();
    let completion = model.generator.complete(&model.gen_params, &model.norm.running, &input, mask.weights())?;
    let elapsed = start.elapsed();
    std::fs::create_dir_all(&a.out)?;
    write_raw(&a.out.join("completion.f32"), &completion)?;
    image::write_pgm8(&a.out.join("completion.pgm"), &completion, 0.0, 1.0)?;
    write_report(
        &a.out.join("timing.txt"),
        &[("side", model.side().to_string()), ("coverage", mask.measured_coverage().to_string()), ("inference_ms", format!("{:.3}", elapsed.as_secs_f64() * 1e3))],
    )?;
    println!("completed {}x{} in {:.1} ms", completion.height(), completion.width(), elapsed.as_secs_f64() * 1e3);
    Ok(())
}
