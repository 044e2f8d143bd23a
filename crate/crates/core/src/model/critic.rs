//! Multiscale critics: each scores one random square crop, resized to a
//! common input size, through stride-2 convs and a final linear layer.
//! Every weight is spectrally normalized.

use pscan_tensor::{Element, Graph, Padding, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::generator::at;
use super::norm::PowerIteration;
use super::params::ParamSet;
use super::DiscriminatorConfig;
use crate::error::{Error, Result};

pub const CRITIC_INIT_STD: f64 = 0.03;
pub const POWER_ITERATION_WARMUP: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct CriticLayer {
    pub name: String,
    /// Conv weight `[Cout,Cin,3,3]` or linear weight `[1,F]`.
    pub w: usize,
    pub b: usize,
    pub conv: bool,
    /// Index into the spectral state vector.
    pub spectral: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub crop: usize,
    pub layers: Vec<CriticLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Critics {
    pub config: DiscriminatorConfig,
    pub side: usize,
    pub input_size: usize,
    pub critics: Vec<Critic>,
    template: ParamSet<f32>,
}

impl Critics {
    pub fn new(config: DiscriminatorConfig, side: usize) -> Result<Self> {
        let input_size = config.input_size(side);
        let mut template = ParamSet::new();
        let mut critics = Vec::new();
        let mut spectral = 0;
        let c = config.base_channels;
        let widths = [c, 2 * c, 4 * c, 4 * c];
        for (i, &frac) in config.crop_fractions.iter().enumerate() {
            let crop = ((frac * side as f64).round() as usize).max(1);
            if crop > side {
                return Err(Error::contract(format!("critic crop {crop} exceeds image side {side}")));
            }
            let mut layers = Vec::new();
            let (mut c_in, mut extent) = (1, input_size);
            for (j, &c_out) in widths.iter().enumerate() {
                let name = format!("critic{}.conv{j}", i + 1);
                let w = template.push(format!("{name}.w"), Tensor::zeros(vec![c_out, c_in, 3, 3]));
                let b = template.push(format!("{name}.b"), Tensor::zeros(vec![c_out]));
                layers.push(CriticLayer { name, w, b, conv: true, spectral });
                spectral += 1;
                c_in = c_out;
                extent = extent.div_ceil(2);
            }
            let name = format!("critic{}.linear", i + 1);
            let w = template.push(format!("{name}.w"), Tensor::zeros(vec![1, c_in * extent * extent]));
            let b = template.push(format!("{name}.b"), Tensor::zeros(vec![1]));
            layers.push(CriticLayer { name, w, b, conv: false, spectral });
            spectral += 1;
            critics.push(Critic { crop, layers });
        }
        Ok(Self { config, side, input_size, critics, template })
    }

    pub fn param_template(&self) -> ParamSet<f32> {
        self.template.clone()
    }

    pub fn layer_count(&self) -> usize {
        self.critics.iter().map(|c| c.layers.len()).sum()
    }

    pub fn layers(&self) -> impl Iterator<Item = &CriticLayer> {
        self.critics.iter().flat_map(|c| c.layers.iter())
    }

    /// Weights ~ N(0, 0.03²), biases zero, plus warmed-up power iteration
    /// state for every layer.
    pub fn init_params(&self, rng: &mut impl Rng) -> (ParamSet<f32>, Vec<PowerIteration>) {
        let mut p = self.template.clone();
        let normal = Normal::new(0.0, CRITIC_INIT_STD).expect("valid std");
        let mut states = Vec::new();
        for layer in self.layers() {
            p.get_mut(layer.w).data_mut().iter_mut().for_each(|x| *x = normal.sample(rng) as f32);
            let (rows, cols) = matrix_dims(p.get(layer.w));
            let mut state = PowerIteration::new(rows, cols, rng);
            for _ in 0..POWER_ITERATION_WARMUP {
                state.step(p.get(layer.w));
            }
            states.push(state);
        }
        (p, states)
    }

    /// One power-iteration step for every layer at the current weights.
    pub fn power_step(&self, params: &ParamSet<f32>, states: &mut [PowerIteration]) {
        for layer in self.layers() {
            states[layer.spectral].step(params.get(layer.w));
        }
    }

    /// Random crop location for critic `scale` (0-based).
    pub fn crop_origin(&self, scale: usize, rng: &mut impl Rng) -> (usize, usize) {
        let span = self.side - self.critics[scale].crop;
        (rng.gen_range(0..=span), rng.gen_range(0..=span))
    }

    /// Scores a `[1,1,side,side]` image in `[-1,1]` with critic `scale`,
    /// cropping at a location drawn from `rng`.
    pub fn score<T: Element>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        spectral: &[PowerIteration],
        scale: usize,
        image: Var,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let origin = self.crop_origin(scale, rng);
        self.score_at(g, vars, spectral, scale, image, origin)
    }

    /// Scores the crop at a fixed `(top, left)`.
    pub fn score_at<T: Element>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        spectral: &[PowerIteration],
        scale: usize,
        image: Var,
        (top, left): (usize, usize),
    ) -> Result<Var> {
        let critic = self.critics.get(scale).ok_or_else(|| Error::contract(format!("no critic at scale {scale}")))?;
        let shape = g.value(image).shape().to_vec();
        if shape.len() != 4 || shape[2] < critic.crop || shape[3] < critic.crop {
            return Err(Error::contract(format!("critic crop {} does not fit image {shape:?}", critic.crop)));
        }
        let name = critic.layers[0].name.as_str();
        let crop = g.crop(image, top, left, critic.crop, critic.crop).map_err(at(name))?;
        let mut x = g.resize_bilinear(crop, self.input_size, self.input_size).map_err(at(name))?;
        for layer in &critic.layers {
            let state = &spectral[layer.spectral];
            let name = layer.name.as_str();
            let w = g.spectral_normalize(vars[layer.w], &state.u_as::<T>(), &state.v_as::<T>()).map_err(at(name))?;
            if layer.conv {
                let y = g.conv2d(x, w, 2, Padding::Same).map_err(at(name))?;
                let y = g.add_channel_bias(y, vars[layer.b]).map_err(at(name))?;
                x = g.leaky_relu(y, self.config.leaky_slope).map_err(at(name))?;
            } else {
                x = g.linear(x, w, Some(vars[layer.b])).map_err(at(name))?;
            }
        }
        Ok(x)
    }
}

/// `[rows, cols]` of a weight's matrix view.
pub fn matrix_dims<T: Element>(w: &Tensor<T>) -> (usize, usize) {
    let rows = w.shape()[0];
    (rows, w.numel() / rows.max(1))
}

/// Largest `‖Wx‖/‖x‖` over `trials` random `x` for the spectrally
/// normalized matrix view of `w`.
pub fn max_gain(w: &Tensor<f32>, state: &PowerIteration, trials: usize, rng: &mut impl Rng) -> f64 {
    let (rows, cols) = matrix_dims(w);
    let sigma = state.sigma(w);
    let data = w.cast::<f64>().into_data();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x: Vec<f64> = (0..cols).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = (0..rows)
            .map(|r| data[r * cols..(r + 1) * cols].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / sigma)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        worst = worst.max(ny / nx);
    }
    worst
}
