//! Running-mean batch normalization state and spectral power iteration.

use pscan_tensor::{bilinear_form, Element, Graph, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

pub const RUNNING_MEAN_DECAY: f64 = 0.99;

/// Exponentially tracked channel means for mean-only batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMeans {
    pub means: Vec<Vec<f64>>,
    pub decay: f64,
    pub frozen: bool,
}

impl RunningMeans {
    /// One zeroed mean vector per entry of `channels`.
    pub fn new(channels: &[usize]) -> Self {
        Self { means: channels.iter().map(|&c| vec![0.0; c]).collect(), decay: RUNNING_MEAN_DECAY, frozen: false }
    }

    /// Blends `batch` into layer `slot` unless frozen.
    pub fn update(&mut self, slot: usize, batch: &[f64]) {
        if self.frozen {
            return;
        }
        for (m, &b) in self.means[slot].iter_mut().zip(batch) {
            *m = self.decay * *m + (1.0 - self.decay) * b;
        }
    }
}

/// Per-channel spatial means of a `[B,C,H,W]` tensor, averaged over the batch.
pub fn channel_means<T: Element>(t: &Tensor<T>) -> Vec<f64> {
    let s = t.shape();
    let (b, c) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let mut out = vec![0.0; c];
    for bi in 0..b {
        for (ci, o) in out.iter_mut().enumerate() {
            let start = (bi * c + ci) * inner;
            *o += t.data()[start..start + inner].iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    let n = (b * inner).max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Per-channel standard deviations of a `[B,C,H,W]` tensor.
pub fn channel_stds<T: Element>(t: &Tensor<T>) -> Vec<f64> {
    let s = t.shape();
    let (b, c) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let means = channel_means(t);
    let mut out = vec![0.0; c];
    for bi in 0..b {
        for (ci, o) in out.iter_mut().enumerate() {
            let start = (bi * c + ci) * inner;
            *o += t.data()[start..start + inner].iter().map(|v| (v.as_f64() - means[ci]).powi(2)).sum::<f64>();
        }
    }
    let n = (b * inner).max(1) as f64;
    out.into_iter().map(|v| (v / n).sqrt()).collect()
}

/// Applies mean-only batch normalization: optionally folds the batch channel
/// means into `state`, then subtracts the running means.
pub fn mean_only_bn<T: Element>(features: &Tensor<T>, state: &mut RunningMeans, slot: usize, update: bool) -> Result<Tensor<T>> {
    if update {
        state.update(slot, &channel_means(features));
    }
    let means: Vec<T> = state.means[slot].iter().map(|&m| T::from_f64(m)).collect();
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let y = g.sub_channel(x, &means)?;
    Ok(g.value(y).clone())
}

/// `scale_c · raw / ‖raw_c‖` along output channels (axis 0).
pub fn weight_normalize<T: Element>(raw: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let v = g.constant(raw.clone());
    let s = g.constant(scale.clone());
    let w = g.weight_norm(v, s, 0)?;
    Ok(g.value(w).clone())
}

/// Left/right singular vector estimates for one weight matrix view
/// `[rows, cols]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerIteration {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    x.iter_mut().for_each(|v| *v /= n);
}

impl PowerIteration {
    /// Random unit `u`; `v` is filled by the first [`step`](Self::step).
    pub fn new(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let mut u: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut u);
        Self { u, v: vec![0.0; cols] }
    }

    /// One power-iteration step on the matrix view of `w`.
    pub fn step<T: Element>(&mut self, w: &Tensor<T>) {
        let rows = self.u.len();
        let cols = self.v.len();
        let data = w.data();
        let mut v = vec![0.0; cols];
        for r in 0..rows {
            let ur = self.u[r];
            for (vc, &x) in v.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
                *vc += x.as_f64() * ur;
            }
        }
        normalize(&mut v);
        let mut u: Vec<f64> = (0..rows).map(|r| data[r * cols..(r + 1) * cols].iter().zip(&v).map(|(&x, &vc)| x.as_f64() * vc).sum()).collect();
        normalize(&mut u);
        self.u = u;
        self.v = v;
    }

    /// Current spectral norm estimate `uᵀWv`.
    pub fn sigma<T: Element>(&self, w: &Tensor<T>) -> f64 {
        bilinear_form(&w.cast::<f64>().into_data(), &self.u, &self.v)
    }

    pub fn u_as<T: Element>(&self) -> Vec<T> {
        self.u.iter().map(|&x| T::from_f64(x)).collect()
    }

    pub fn v_as<T: Element>(&self) -> Vec<T> {
        self.v.iter().map(|&x| T::from_f64(x)).collect()
    }
}

/// Normalization state of a full model.
#[derive(Clone, Debug, PartialEq)]
pub struct NormState {
    pub running: RunningMeans,
    /// One entry per critic layer, critic-major.
    pub spectral: Vec<PowerIteration>,
}
