//! Two-phase training: non-adversarial warm-up of generator and auxiliary
//! trainer, then alternating critic and generator updates.

pub mod alrc;
pub mod optim;
pub mod replay;
pub mod schedule;

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pscan_tensor::{Graph, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use alrc::AlrcState;
pub use optim::{OptState, OptimizerKind};
pub use replay::ReplayBuffer;
pub use schedule::{schedule, Step};

use crate::dataset::{Dataset, Prefetcher, PREFETCH_CAPACITY};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::loss::{loss_adversarial, loss_aux, loss_discriminator, loss_generator_total, loss_mse};
use crate::model::{init_params, Checkpoint, DiscriminatorConfig, GeneratorConfig, Model};
use crate::pipeline::{augment, make_example, random_code, ExampleConfig, TrainingExample};
use crate::rng::{derive, stream};
use crate::scanpath::{blur_mask, generate, GridOptions, PathKind, PathMask};

pub const VALIDATE_EVERY: u64 = 50;

const TAG_EXAMPLE: u64 = 0x4558;
const TAG_VALIDATION: u64 = 0x5641;
const TAG_CRITIC: u64 = 0x4352;
const TAG_INIT: u64 = 0x494e;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub generator: GeneratorConfig,
    pub critic: DiscriminatorConfig,
    /// Iterations to run. With `phase2` off the schedule spans twice this,
    /// so the run covers exactly the non-adversarial half.
    pub iterations: u64,
    pub phase2: bool,
    pub path_kind: PathKind,
    pub coverage: f64,
    pub grid: GridOptions,
    /// Blur masks into graded dwell weights (and apply dwell noise).
    pub blurred_mask: bool,
    pub noise: bool,
    pub augment: bool,
    pub alrc: bool,
    pub replay: bool,
    pub optimizer: OptimizerKind,
    pub validate_every: u64,
    /// Validation images scored at each cadence point.
    pub validation_samples: usize,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Data-dependent generator scale init on the first training example.
    pub data_init: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn desk(side: usize) -> Self {
        Self {
            generator: GeneratorConfig::desk(side),
            critic: DiscriminatorConfig::default(),
            iterations: 20_000,
            phase2: false,
            path_kind: PathKind::Spiral,
            coverage: 0.05,
            grid: GridOptions::default(),
            blurred_mask: false,
            noise: true,
            augment: true,
            alrc: true,
            replay: true,
            optimizer: OptimizerKind::Adam,
            validate_every: VALIDATE_EVERY,
            validation_samples: 16,
            checkpoint_every: 0,
            data_init: true,
            seed: 0,
        }
    }

    pub fn side(&self) -> usize {
        self.generator.side
    }

    /// Length of the schedule the iterations are placed on.
    pub fn schedule_total(&self) -> u64 {
        if self.phase2 {
            self.iterations
        } else {
            2 * self.iterations
        }
    }

    fn example_config(&self) -> ExampleConfig {
        ExampleConfig { infill: self.generator.infill, noise: self.noise }
    }

    /// Scan mask for a given seed, blurred when configured.
    pub fn mask(&self, seed: u64) -> Result<PathMask> {
        let m = generate(self.path_kind, self.side(), self.coverage, seed, &self.grid)?;
        if self.blurred_mask {
            blur_mask(&m)
        } else {
            Ok(m)
        }
    }
}

/// Training example for 1-based iteration `iter`; a pure function of the
/// config, dataset and iteration.
pub fn training_example(cfg: &TrainConfig, data: &Dataset, iter: u64) -> Result<TrainingExample> {
    if data.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let mut rng = stream(cfg.seed, &[TAG_EXAMPLE, iter]);
    let idx = rng.gen_range(0..data.train.len());
    let crop = if cfg.augment { augment(&data.train[idx], random_code(&mut rng))? } else { data.train[idx].clone() };
    let mask = cfg.mask(rng.gen())?;
    make_example(&crop, &mask, &cfg.example_config(), &mut rng)
}

/// Mask seed of validation example `index`.
pub fn validation_mask_seed(cfg: &TrainConfig, index: usize) -> u64 {
    derive(cfg.seed, &[TAG_VALIDATION, index as u64])
}

/// Validation example `index` with a fixed, seed-derived mask.
pub fn validation_example(cfg: &TrainConfig, crop: &Image, index: usize) -> Result<TrainingExample> {
    let mask = cfg.mask(validation_mask_seed(cfg, index))?;
    let mut rng = stream(cfg.seed, &[TAG_VALIDATION, index as u64, 1]);
    make_example(crop, &mask, &cfg.example_config(), &mut rng)
}

/// Mean RMS of a classical baseline against blurred targets on the
/// validation crops, using the same (binary) masks as validation.
pub fn baseline_validation_rms(cfg: &TrainConfig, crops: &[Image], method: crate::eval::Baseline) -> Result<f64> {
    if crops.is_empty() {
        return Err(Error::Data("no validation crops".into()));
    }
    let mut total = 0.0;
    for (i, crop) in crops.iter().enumerate() {
        let mask = generate(cfg.path_kind, cfg.side(), cfg.coverage, validation_mask_seed(cfg, i), &cfg.grid)?;
        let scan = crate::pipeline::select_partial(crop, &mask, None)?.map(|v| (v + 1.0) / 2.0);
        let out = crate::eval::baseline_complete(&scan, &mask, method)?;
        let target = crate::filter::gaussian_blur(crop).map(|v| (v + 1.0) / 2.0);
        total += rms(&out, &target)?;
    }
    Ok(total / crops.len() as f64)
}

pub fn rms(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_dims(b, "rms")?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok((s / a.len().max(1) as f64).sqrt())
}

/// Mean RMS of clamped completions against blurred targets.
pub fn validation_rms(model: &Model, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("no validation examples".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        let out = model.generator.complete(&model.gen_params, &model.norm.running, &ex.input_scan, &ex.path_channel)?;
        total += rms(&out, &ex.target_full)?;
    }
    Ok(total / examples.len() as f64)
}

/// One row of the loss log. Loss columns hold values before clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iter: u64,
    pub phase: u8,
    pub lr: f64,
    pub l_mse: f64,
    pub l_aux: f64,
    pub l_adv: Option<f64>,
    pub l_d: Option<f64>,
    pub val_rms: Option<f64>,
}

pub const LOG_HEADER: &str = "iter,phase,lr,L_MSE,L_aux,L_adv,L_D,val_RMS";

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{},{},{}",
            self.iter,
            self.phase,
            self.lr,
            self.l_mse,
            self.l_aux,
            opt_field(self.l_adv),
            opt_field(self.l_d),
            opt_field(self.val_rms)
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(Error::Data(format!("loss log row has {} fields", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Data(format!("bad number `{s}` in loss log")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        Ok(Self {
            iter: f[0].parse().map_err(|_| Error::Data(format!("bad iteration `{}`", f[0])))?,
            phase: f[1].parse().map_err(|_| Error::Data(format!("bad phase `{}`", f[1])))?,
            lr: num(f[2])?,
            l_mse: num(f[3])?,
            l_aux: num(f[4])?,
            l_adv: opt(f[5])?,
            l_d: opt(f[6])?,
            val_rms: opt(f[7])?,
        })
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let r = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        rows.push(LogRow::parse(&line)?);
    }
    Ok(rows)
}

/// Replayed critic input: a generated image and its target, both in `[-1,1]`.
pub type CriticPair = (Image, Image);

/// Training state: model, optimizers, clipping and replay.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub gen_opt: OptState,
    pub critic_opt: OptState,
    pub alrc_mse: AlrcState,
    pub alrc_aux: AlrcState,
    pub replay: ReplayBuffer<CriticPair>,
    /// Iterations completed.
    pub iter: u64,
    data: Arc<Dataset>,
    validation: Vec<TrainingExample>,
    pub log: Vec<LogRow>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: Arc<Dataset>) -> Result<Self> {
        let calibration = if cfg.data_init { Some(training_example(&cfg, &data, 0)?) } else { None };
        let model = init_params(cfg.generator, cfg.critic, derive(cfg.seed, &[TAG_INIT]), calibration.as_ref())?;
        Self::from_model(cfg, data, model, 0)
    }

    /// Continues from an existing model with `completed` iterations done.
    pub fn from_model(cfg: TrainConfig, data: Arc<Dataset>, model: Model, completed: u64) -> Result<Self> {
        if model.generator.config != cfg.generator {
            return Err(Error::Config("model and training config disagree on the generator".into()));
        }
        let validation = data
            .validation
            .iter()
            .take(cfg.validation_samples)
            .enumerate()
            .map(|(i, c)| validation_example(&cfg, c, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            gen_opt: OptState::new(cfg.optimizer, &model.gen_params),
            critic_opt: OptState::new(cfg.optimizer, &model.critic_params),
            alrc_mse: AlrcState::default(),
            alrc_aux: AlrcState::default(),
            replay: ReplayBuffer::default(),
            iter: completed,
            cfg,
            model,
            data,
            validation,
            log: Vec::new(),
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Runs iterations `self.iter + 1 ..= until`, writing the loss log and
    /// periodic checkpoints under `out` when given. On a numeric failure
    /// the last good state is saved as `abort.ckpt` before returning.
    pub fn run(&mut self, until: u64, out: Option<&Path>, observer: &mut dyn FnMut(&Trainer, &LogRow)) -> Result<()> {
        if until > self.cfg.iterations {
            return Err(Error::Config(format!("cannot run to iteration {until} of {}", self.cfg.iterations)));
        }
        let mut log = match out {
            Some(dir) => Some(open_log(dir, self.iter)?),
            None => None,
        };
        let first = self.iter + 1;
        let (cfg, data) = (self.cfg.clone(), Arc::clone(&self.data));
        let mut feed = Prefetcher::spawn(PREFETCH_CAPACITY, first..until + 1, move |i| training_example(&cfg, &data, i));
        while self.iter < until {
            let example = feed.next().ok_or_else(|| Error::Data("example queue closed early".into()))??;
            let row = match self.step(&example) {
                Ok(row) => row,
                Err(e) => {
                    if e.is_numeric() {
                        if let Some(dir) = out {
                            self.save(&dir.join("abort.ckpt"))?;
                        }
                    }
                    return Err(e);
                }
            };
            if let Some(w) = log.as_mut() {
                writeln!(w, "{}", row.to_csv())?;
            }
            if let Some(dir) = out {
                if self.cfg.checkpoint_every > 0 && self.iter % self.cfg.checkpoint_every == 0 {
                    self.save(&dir.join(format!("iter_{:07}.ckpt", self.iter)))?;
                }
            }
            observer(self, &row);
            self.log.push(row);
        }
        if let Some(mut w) = log {
            w.flush()?;
        }
        Ok(())
    }

    /// One training iteration on `example`.
    pub fn step(&mut self, example: &TrainingExample) -> Result<LogRow> {
        let iter = self.iter + 1;
        let st = schedule(iter - 1, self.cfg.schedule_total())?;
        self.gen_opt.lr = st.lr_generator;
        self.gen_opt.beta1 = st.beta1;
        self.critic_opt.lr = st.lr_critic;
        self.critic_opt.beta1 = st.beta1;
        if st.phase == 2 && !self.model.norm.running.frozen {
            self.model.norm.running.frozen = true;
        }
        let mut crit_rng = stream(self.cfg.seed, &[TAG_CRITIC, iter]);
        let (mut row, fake) = self.generator_step(example, st, &mut crit_rng)?;
        if st.phase == 2 {
            let fake = fake.expect("phase 2 produces a fake");
            row.l_d = Some(self.critic_step(fake, example.real_for_critic(), &mut crit_rng)?);
        }
        self.iter = iter;
        if self.cfg.validate_every > 0 && iter % self.cfg.validate_every == 0 && !self.validation.is_empty() {
            row.val_rms = Some(validation_rms(&self.model, &self.validation)?);
        }
        Ok(row)
    }

    fn generator_step(&mut self, ex: &TrainingExample, st: Step, rng: &mut ChaCha8Rng) -> Result<(LogRow, Option<Image>)> {
        let m = &mut self.model;
        let mut g = Graph::<f32>::new();
        let gv = m.gen_params.bind(&mut g, true);
        let (scan, path) = m.generator.input_vars(&mut g, &ex.input_scan, &ex.path_channel)?;
        let update = st.phase == 1;
        let out = m.generator.forward(&mut g, &gv, scan, path, &mut m.norm.running, update)?;
        let half = m.generator.aux_forward(&mut g, &gv, out.inner, &mut m.norm.running, update)?;
        let target = g.constant(ex.target_full.to_tensor());
        let target_half = g.constant(ex.target_half.to_tensor());
        let (alrc_mse, alrc_aux) = if self.cfg.alrc { (Some(&mut self.alrc_mse), Some(&mut self.alrc_aux)) } else { (None, None) };
        let l_mse = loss_mse(&mut g, out.completion, target, alrc_mse)?;
        let l_aux = loss_aux(&mut g, half, target_half, alrc_aux)?;
        let mut row = LogRow { iter: self.iter + 1, phase: st.phase, lr: st.lr_generator, l_mse: l_mse.raw, l_aux: l_aux.raw, l_adv: None, l_d: None, val_rms: None };
        let mut fake_img = None;
        let total = if st.phase == 2 {
            let cv = m.critic_params.bind(&mut g, false);
            let doubled = g.scale(out.completion, 2.0)?;
            let fake = g.add_scalar(doubled, -1.0)?;
            fake_img = Some(Image::from_tensor(g.value(fake))?);
            let scores = (0..m.critics.critics.len())
                .map(|s| m.critics.score(&mut g, &cv, &m.norm.spectral, s, fake, rng))
                .collect::<Result<Vec<_>>>()?;
            let l_adv = loss_adversarial(&mut g, &scores)?;
            row.l_adv = Some(g.scalar(l_adv)? as f64);
            loss_generator_total(&mut g, Some(l_adv), l_mse.var, l_aux.var, 2)?
        } else {
            loss_generator_total(&mut g, None, l_mse.var, l_aux.var, 1)?
        };
        g.backward(total)?;
        let grads = m.gen_params.grads(&g, &gv);
        self.gen_opt.step(&mut m.gen_params, &grads)?;
        Ok((row, fake_img))
    }

    fn critic_step(&mut self, fake: Image, real: Image, rng: &mut ChaCha8Rng) -> Result<f64> {
        let current = (fake, real);
        let pair = if self.cfg.replay { self.replay.draw(rng).unwrap_or_else(|| current.clone()) } else { current.clone() };
        let m = &mut self.model;
        m.critics.power_step(&m.critic_params, &mut m.norm.spectral);
        let mut g = Graph::<f32>::new();
        let cv = m.critic_params.bind(&mut g, true);
        let fake_v = g.constant(pair.0.to_tensor());
        let real_v = g.constant(pair.1.to_tensor());
        let n = m.critics.critics.len();
        let mut real_scores = Vec::with_capacity(n);
        let mut fake_scores = Vec::with_capacity(n);
        for s in 0..n {
            real_scores.push(m.critics.score(&mut g, &cv, &m.norm.spectral, s, real_v, rng)?);
            fake_scores.push(m.critics.score(&mut g, &cv, &m.norm.spectral, s, fake_v, rng)?);
        }
        let l_d = loss_discriminator(&mut g, &real_scores, &fake_scores)?;
        let value = g.scalar(l_d)? as f64;
        g.backward(l_d)?;
        let grads = m.critic_params.grads(&g, &cv);
        self.critic_opt.step(&mut m.critic_params, &grads)?;
        if self.cfg.replay {
            self.replay.observe(current, value);
        }
        Ok(value)
    }

    /// Mean validation RMS over `examples`.
    pub fn validate(&self, examples: &[TrainingExample]) -> Result<f64> {
        validation_rms(&self.model, examples)
    }

    /// Validation examples for the whole validation split.
    pub fn full_validation_set(&self) -> Result<Vec<TrainingExample>> {
        self.data.validation.iter().enumerate().map(|(i, c)| validation_example(&self.cfg, c, i)).collect()
    }

    /// Largest `‖Wx‖/‖x‖` over all critic layers for `trials` random inputs.
    pub fn spectral_gain(&self, trials: usize, rng: &mut impl Rng) -> f64 {
        let m = &self.model;
        m.critics
            .layers()
            .map(|l| crate::model::critic::max_gain(m.critic_params.get(l.w), &m.norm.spectral[l.spectral], trials, rng))
            .fold(0.0, f64::max)
    }

    pub fn write_into(&self, ck: &mut Checkpoint) {
        self.model.write_into(ck);
        ck.put_f64("train/iter", self.iter as f64);
        ck.put_f64s("train/alrc_mse", &[self.alrc_mse.mu1, self.alrc_mse.mu2]);
        ck.put_f64s("train/alrc_aux", &[self.alrc_aux.mu1, self.alrc_aux.mu2]);
        for (tag, opt) in [("generator", &self.gen_opt), ("critic", &self.critic_opt)] {
            ck.put_f64s(format!("opt/{tag}/scalars"), &[opt.t as f64, opt.beta1_power, opt.beta2_power]);
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                ck.insert(format!("opt/{tag}/m/{i}"), Tensor::new(vec![m.len()], m.clone()).expect("flat"));
                ck.insert(format!("opt/{tag}/v/{i}"), Tensor::new(vec![v.len()], v.clone()).expect("flat"));
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        self.write_into(&mut ck);
        ck.write(path)
    }

    /// Restores a trainer from a checkpoint written by [`save`](Self::save).
    /// The replay buffer starts empty.
    pub fn resume(cfg: TrainConfig, data: Arc<Dataset>, path: &Path) -> Result<Self> {
        let ck = Checkpoint::read(path)?;
        let model = Model::read_from(&ck)?;
        let completed = ck.f64("train/iter")? as u64;
        let mut t = Self::from_model(cfg, data, model, completed)?;
        let a = ck.f64s("train/alrc_mse")?;
        let b = ck.f64s("train/alrc_aux")?;
        if a.len() != 2 || b.len() != 2 {
            return Err(Error::Data("ALRC state has the wrong length".into()));
        }
        (t.alrc_mse.mu1, t.alrc_mse.mu2) = (a[0], a[1]);
        (t.alrc_aux.mu1, t.alrc_aux.mu2) = (b[0], b[1]);
        for (tag, opt) in [("generator", &mut t.gen_opt), ("critic", &mut t.critic_opt)] {
            let s = ck.f64s(&format!("opt/{tag}/scalars"))?;
            if s.len() != 3 {
                return Err(Error::Data("optimizer scalars have the wrong length".into()));
            }
            opt.t = s[0] as u64;
            opt.beta1_power = s[1];
            opt.beta2_power = s[2];
            for i in 0..opt.m.len() {
                let m = ck.require(&format!("opt/{tag}/m/{i}"))?;
                let v = ck.require(&format!("opt/{tag}/v/{i}"))?;
                if m.numel() != opt.m[i].len() || v.numel() != opt.v[i].len() {
                    return Err(Error::Data(format!("optimizer moment {i} of {tag} has the wrong size")));
                }
                opt.m[i] = m.data().to_vec();
                opt.v[i] = v.data().to_vec();
            }
        }
        Ok(t)
    }
}

/// Opens `dir/loss.csv`, appending after resume and truncating rows beyond
/// `completed`.
fn open_log(dir: &Path, completed: u64) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    let path: PathBuf = dir.join("loss.csv");
    let keep: Vec<LogRow> = if completed > 0 && path.exists() {
        read_log(&path)?.into_iter().filter(|r| r.iter <= completed).collect()
    } else {
        Vec::new()
    };
    let mut w = BufWriter::new(OpenOptions::new().create(true).write(true).truncate(true).open(&path)?);
    writeln!(w, "{LOG_HEADER}")?;
    for r in keep {
        writeln!(w, "{}", r.to_csv())?;
    }
    Ok(w)
}
