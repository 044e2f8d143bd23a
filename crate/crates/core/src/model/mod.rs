//! Completion generator, auxiliary trainer, multiscale critics, their
//! normalization state, losses and checkpoints.

pub mod checkpoint;
pub mod critic;
pub mod generator;
pub mod loss;
pub mod norm;
pub mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::Checkpoint;
pub use critic::Critics;
pub use generator::{Generator, GeneratorOutput};
pub use norm::{NormState, PowerIteration, RunningMeans};
pub use params::ParamSet;

use crate::error::{Error, Result};
use crate::pipeline::TrainingExample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub side: usize,
    pub base_channels: usize,
    /// Skip-3 residual blocks in each of the inner and outer networks.
    pub residual_blocks: usize,
    pub inner_kernel: usize,
    pub outer_kernel: usize,
    /// Extra additive skips from encoder to mirrored decoder stages.
    pub symmetric_residuals: bool,
    /// Feed the mask as a second input channel.
    pub path_channel: bool,
    /// Nearest-neighbour infill of binary-mask scans before the network.
    pub infill: bool,
}

impl GeneratorConfig {
    pub fn desk(side: usize) -> Self {
        Self {
            side,
            base_channels: 16,
            residual_blocks: 2,
            inner_kernel: 3,
            outer_kernel: 7,
            symmetric_residuals: false,
            path_channel: true,
            infill: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.side < 8 || self.side % 8 != 0 {
            return Err(Error::Config(format!("generator side {} must be a positive multiple of 8", self.side)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        for k in [self.inner_kernel, self.outer_kernel] {
            if k % 2 == 0 {
                return Err(Error::Config(format!("kernel size {k} must be odd")));
            }
        }
        Ok(())
    }

    fn to_vec(self) -> Vec<f64> {
        vec![
            self.side as f64,
            self.base_channels as f64,
            self.residual_blocks as f64,
            self.inner_kernel as f64,
            self.outer_kernel as f64,
            f64::from(u8::from(self.symmetric_residuals)),
            f64::from(u8::from(self.path_channel)),
            f64::from(u8::from(self.infill)),
        ]
    }

    fn from_vec(v: &[f64]) -> Result<Self> {
        if v.len() != 8 {
            return Err(Error::Data("generator config entry has the wrong length".into()));
        }
        Ok(Self {
            side: v[0] as usize,
            base_channels: v[1] as usize,
            residual_blocks: v[2] as usize,
            inner_kernel: v[3] as usize,
            outer_kernel: v[4] as usize,
            symmetric_residuals: v[5] != 0.0,
            path_channel: v[6] != 0.0,
            infill: v[7] != 0.0,
        })
    }
}

pub const CROP_FRACTIONS: [f64; 3] = [0.137, 0.273, 0.547];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub crop_fractions: [f64; 3],
    pub base_channels: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { crop_fractions: CROP_FRACTIONS, base_channels: 16, leaky_slope: 0.2 }
    }
}

impl DiscriminatorConfig {
    /// Common critic input size `round(0.137·side)`.
    pub fn input_size(&self, side: usize) -> usize {
        ((self.crop_fractions[0] * side as f64).round() as usize).max(1)
    }

    fn to_vec(self) -> Vec<f64> {
        let mut v = self.crop_fractions.to_vec();
        v.extend([self.base_channels as f64, self.leaky_slope]);
        v
    }

    fn from_vec(v: &[f64]) -> Result<Self> {
        if v.len() != 5 {
            return Err(Error::Data("critic config entry has the wrong length".into()));
        }
        Ok(Self { crop_fractions: [v[0], v[1], v[2]], base_channels: v[3] as usize, leaky_slope: v[4] })
    }
}

/// Everything needed to run or continue training the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub generator: Generator,
    pub critics: Critics,
    pub gen_params: ParamSet<f32>,
    pub critic_params: ParamSet<f32>,
    pub norm: NormState,
}

/// Draws all parameters from `seed`; when `calibration` is given, generator
/// scales are then set from one forward pass on it.
pub fn init_params(gen: GeneratorConfig, critic: DiscriminatorConfig, seed: u64, calibration: Option<&TrainingExample>) -> Result<Model> {
    let generator = Generator::new(gen)?;
    let critics = Critics::new(critic, gen.side)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::derive(seed, &[0x494e_4954]));
    let mut gen_params = generator.init_params(&mut rng);
    let (critic_params, spectral) = critics.init_params(&mut rng);
    if let Some(ex) = calibration {
        generator.data_dependent_init(&mut gen_params, &ex.input_scan, &ex.path_channel)?;
    }
    let norm = NormState { running: generator.new_running_means(), spectral };
    Ok(Model { generator, critics, gen_params, critic_params, norm })
}

impl Model {
    pub fn side(&self) -> usize {
        self.generator.config.side
    }

    pub fn write_into(&self, ck: &mut Checkpoint) {
        ck.put_f64s("config/generator", &self.generator.config.to_vec());
        ck.put_f64s("config/critic", &self.critics.config.to_vec());
        ck.put_params("generator", &self.gen_params);
        ck.put_params("critic", &self.critic_params);
        for (i, m) in self.norm.running.means.iter().enumerate() {
            ck.put_f64s(format!("norm/mean/{i}"), m);
        }
        ck.put_f64("norm/frozen", f64::from(u8::from(self.norm.running.frozen)));
        for (i, s) in self.norm.spectral.iter().enumerate() {
            ck.put_f64s(format!("norm/u/{i}"), &s.u);
            ck.put_f64s(format!("norm/v/{i}"), &s.v);
        }
    }

    pub fn read_from(ck: &Checkpoint) -> Result<Self> {
        let gen = GeneratorConfig::from_vec(&ck.f64s("config/generator")?)?;
        let critic = DiscriminatorConfig::from_vec(&ck.f64s("config/critic")?)?;
        let generator = Generator::new(gen)?;
        let critics = Critics::new(critic, gen.side)?;
        let mut gen_params = generator.param_template();
        ck.load_params("generator", &mut gen_params)?;
        let mut critic_params = critics.param_template();
        ck.load_params("critic", &mut critic_params)?;
        let mut running = generator.new_running_means();
        for (i, m) in running.means.iter_mut().enumerate() {
            let stored = ck.f64s(&format!("norm/mean/{i}"))?;
            if stored.len() != m.len() {
                return Err(Error::Data(format!("running mean {i} has {} channels, expected {}", stored.len(), m.len())));
            }
            *m = stored;
        }
        running.frozen = ck.f64("norm/frozen")? != 0.0;
        let spectral = (0..critics.layer_count())
            .map(|i| Ok(PowerIteration { u: ck.f64s(&format!("norm/u/{i}"))?, v: ck.f64s(&format!("norm/v/{i}"))? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { generator, critics, gen_params, critic_params, norm: NormState { running, spectral } })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut ck = Checkpoint::new();
        self.write_into(&mut ck);
        ck.write(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_from(&Checkpoint::read(path)?)
    }
}
