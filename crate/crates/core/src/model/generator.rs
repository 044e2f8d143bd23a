//! Two-stage completion generator and its auxiliary trainer.
//!
//! Inner network (half resolution): k×k embed, two stride-2 convs doubling
//! channels, residual blocks, two transposed convs back to half size.
//! Outer network (full resolution): k×k embed, stride-2 conv, residual
//! addition of the inner features, residual blocks, transposed conv, 3×3
//! conv to one channel. The auxiliary trainer maps inner features to a
//! half-size completion. Every conv is weight-normalized and bias-free;
//! hidden layers apply mean-only batch normalization, a learned channel
//! bias and ReLU.

use pscan_tensor::{Element, Graph, Padding, Tensor, TensorError, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::norm::{channel_means, channel_stds, RunningMeans};
use super::params::ParamSet;
use super::GeneratorConfig;
use crate::error::{Error, Result};
use crate::image::Image;

pub const GENERATOR_INIT_STD: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub transpose: bool,
    /// Slots of the raw weight, its scales and (hidden layers) its bias.
    pub v: usize,
    pub g: usize,
    pub bias: Option<usize>,
    /// Running-mean slot for hidden layers.
    pub bn: Option<usize>,
}

impl ConvLayer {
    fn weight_shape(&self) -> [usize; 4] {
        if self.transpose {
            [self.c_in, self.c_out, self.kernel, self.kernel]
        } else {
            [self.c_out, self.c_in, self.kernel, self.kernel]
        }
    }

    fn norm_axis(&self) -> usize {
        usize::from(self.transpose)
    }
}

struct Builder {
    params: ParamSet<f32>,
    layers: Vec<ConvLayer>,
    bn_channels: Vec<usize>,
}

impl Builder {
    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, kernel: usize, stride: usize, transpose: bool, hidden: bool) -> usize {
        let mut layer = ConvLayer { name: name.to_string(), c_in, c_out, kernel, stride, transpose, v: 0, g: 0, bias: None, bn: None };
        layer.v = self.params.push(format!("{name}.v"), Tensor::zeros(layer.weight_shape().to_vec()));
        layer.g = self.params.push(format!("{name}.g"), Tensor::zeros(vec![c_out]));
        if hidden {
            layer.bias = Some(self.params.push(format!("{name}.b"), Tensor::zeros(vec![c_out])));
            layer.bn = Some(self.bn_channels.len());
            self.bn_channels.push(c_out);
        }
        self.layers.push(layer);
        self.layers.len() - 1
    }

    fn residual(&mut self, prefix: &str, c: usize) -> [usize; 3] {
        [
            self.conv(&format!("{prefix}.a"), c, c, 3, 1, false, true),
            self.conv(&format!("{prefix}.b"), c, c, 3, 1, false, true),
            self.conv(&format!("{prefix}.c"), c, c, 3, 1, false, true),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    inner_embed: usize,
    inner_down: [usize; 2],
    inner_res: Vec<[usize; 3]>,
    inner_up: [usize; 2],
    outer_embed: usize,
    outer_down: usize,
    outer_res: Vec<[usize; 3]>,
    outer_up: usize,
    outer_out: usize,
    aux_hidden: usize,
    aux_out: usize,
}

/// Generator plus auxiliary trainer; parameters live in a separate
/// [`ParamSet`] whose slots this layout refers to.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    layers: Vec<ConvLayer>,
    layout: Layout,
    template: ParamSet<f32>,
    bn_channels: Vec<usize>,
}

/// Graph nodes produced by one generator pass.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorOutput {
    /// `[1,1,side,side]` completion.
    pub completion: Var,
    /// `[1,c,side/2,side/2]` inner-generator features.
    pub inner: Var,
}

pub(crate) struct Pass<'a, T: Element> {
    pub g: &'a mut Graph<T>,
    pub vars: &'a [Var],
    pub running: &'a mut RunningMeans,
    pub update: bool,
    /// Pre-normalization output of every conv, in application order.
    pub taps: Vec<(usize, Var)>,
}

pub(crate) fn at(layer: &str) -> impl Fn(TensorError) -> Error + '_ {
    move |e| match e {
        TensorError::NonFinite { op } => Error::Numeric(format!("layer `{layer}`: non-finite value in {op}")),
        other => Error::Tensor(other),
    }
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let c = config.base_channels;
        let cin = 1 + usize::from(config.path_channel);
        let mut b = Builder { params: ParamSet::new(), layers: Vec::new(), bn_channels: Vec::new() };
        let inner_embed = b.conv("inner.embed", cin, c, config.inner_kernel, 1, false, true);
        let inner_down = [b.conv("inner.down1", c, 2 * c, 3, 2, false, true), b.conv("inner.down2", 2 * c, 4 * c, 3, 2, false, true)];
        let inner_res = (0..config.residual_blocks).map(|i| b.residual(&format!("inner.res{i}"), 4 * c)).collect();
        let inner_up = [b.conv("inner.up1", 4 * c, 2 * c, 3, 2, true, true), b.conv("inner.up2", 2 * c, c, 3, 2, true, true)];
        let outer_embed = b.conv("outer.embed", cin, c, config.outer_kernel, 1, false, true);
        let outer_down = b.conv("outer.down", c, c, 3, 2, false, true);
        let outer_res = (0..config.residual_blocks).map(|i| b.residual(&format!("outer.res{i}"), c)).collect();
        let outer_up = b.conv("outer.up", c, c, 3, 2, true, true);
        let outer_out = b.conv("outer.out", c, 1, 3, 1, false, false);
        let aux_hidden = b.conv("aux.hidden", c, c, 3, 1, false, true);
        let aux_out = b.conv("aux.out", c, 1, 3, 1, false, false);
        let layout = Layout {
            inner_embed,
            inner_down,
            inner_res,
            inner_up,
            outer_embed,
            outer_down,
            outer_res,
            outer_up,
            outer_out,
            aux_hidden,
            aux_out,
        };
        Ok(Self { config, layers: b.layers, layout, template: b.params, bn_channels: b.bn_channels })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    /// Zero-valued parameters with the right names and shapes.
    pub fn param_template(&self) -> ParamSet<f32> {
        self.template.clone()
    }

    pub fn new_running_means(&self) -> RunningMeans {
        RunningMeans::new(&self.bn_channels)
    }

    /// Raw weights ~ N(0, 0.05²), scales equal to the raw per-channel norms
    /// (so effective weights start equal to the draws), biases zero.
    pub fn init_params(&self, rng: &mut impl Rng) -> ParamSet<f32> {
        let mut p = self.template.clone();
        let normal = Normal::new(0.0, GENERATOR_INIT_STD).expect("valid std");
        for layer in &self.layers {
            let v = p.get_mut(layer.v);
            v.data_mut().iter_mut().for_each(|x| *x = normal.sample(rng) as f32);
            let norms = per_channel_norms(v, layer.norm_axis());
            p.get_mut(layer.g).data_mut().iter_mut().zip(norms).for_each(|(g, n)| *g = n as f32);
        }
        p
    }

    /// Data-dependent scale init: layer by layer in application order, each
    /// hidden layer's scales are divided by the per-channel standard
    /// deviation of its output on `(scan, path)`, so every hidden layer
    /// starts with unit-variance channels. Output layers keep their draws.
    pub fn data_dependent_init(&self, params: &mut ParamSet<f32>, scan: &Image, path: &Image) -> Result<()> {
        let hidden: Vec<usize> = (0..self.layers.len()).filter(|&i| self.layers[i].bn.is_some()).collect();
        let order = {
            let mut g = Graph::<f32>::new();
            let mut running = self.new_running_means();
            let (vars, taps) = self.tapped_pass(&mut g, params, &mut running, scan, path)?;
            drop(vars);
            taps.into_iter().map(|t| t.0).collect::<Vec<_>>()
        };
        for layer in order.into_iter().filter(|l| hidden.contains(l)) {
            let mut g = Graph::<f32>::new();
            let mut running = self.new_running_means();
            let (_, taps) = self.tapped_pass(&mut g, params, &mut running, scan, path)?;
            let var = taps.iter().find(|t| t.0 == layer).expect("every layer is tapped").1;
            let stds = channel_stds(g.value(var));
            let g_slot = self.layers[layer].g;
            for (s, &std) in params.get_mut(g_slot).data_mut().iter_mut().zip(&stds) {
                if std > 1e-8 {
                    *s = (*s as f64 / std) as f32;
                }
            }
        }
        Ok(())
    }

    /// Per-channel standard deviations of every conv output (before
    /// normalization) on one input pair, in application order.
    pub fn layer_output_stds(&self, params: &ParamSet<f32>, scan: &Image, path: &Image) -> Result<Vec<(String, Vec<f64>)>> {
        let mut g = Graph::<f32>::new();
        let mut running = self.new_running_means();
        let (_, taps) = self.tapped_pass(&mut g, params, &mut running, scan, path)?;
        Ok(taps.into_iter().map(|(i, v)| (self.layers[i].name.clone(), channel_stds(g.value(v)))).collect())
    }

    /// Runs generator and auxiliary trainer once, returning every tap.
    fn tapped_pass(
        &self,
        g: &mut Graph<f32>,
        params: &ParamSet<f32>,
        running: &mut RunningMeans,
        scan: &Image,
        path: &Image,
    ) -> Result<(Vec<Var>, Vec<(usize, Var)>)> {
        let vars = params.bind(g, false);
        let (s, p) = self.input_vars(g, scan, path)?;
        let mut pass = Pass { g, vars: &vars, running, update: false, taps: Vec::new() };
        let out = self.run(&mut pass, s, p)?;
        self.run_aux(&mut pass, out.inner)?;
        let taps = std::mem::take(&mut pass.taps);
        Ok((vars, taps))
    }

    /// Adds the scan (and path channel when configured) as `[1,1,H,W]`
    /// constants.
    pub fn input_vars<T: Element>(&self, g: &mut Graph<T>, scan: &Image, path: &Image) -> Result<(Var, Option<Var>)> {
        let side = self.config.side;
        if scan.dims() != (side, side) || path.dims() != (side, side) {
            return Err(Error::contract(format!(
                "generator expects {side}x{side} inputs, got scan {:?} and path {:?}",
                scan.dims(),
                path.dims()
            )));
        }
        let s = g.constant(scan.to_tensor().cast());
        let p = self.config.path_channel.then(|| g.constant(path.to_tensor().cast()));
        Ok((s, p))
    }

    /// Generator pass. `update` folds batch means into the running means
    /// (ignored when they are frozen).
    pub fn forward<T: Element>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        scan: Var,
        path: Option<Var>,
        running: &mut RunningMeans,
        update: bool,
    ) -> Result<GeneratorOutput> {
        let mut pass = Pass { g, vars, running, update, taps: Vec::new() };
        self.run(&mut pass, scan, path)
    }

    /// Auxiliary trainer pass on inner features.
    pub fn aux_forward<T: Element>(&self, g: &mut Graph<T>, vars: &[Var], inner: Var, running: &mut RunningMeans, update: bool) -> Result<Var> {
        let mut pass = Pass { g, vars, running, update, taps: Vec::new() };
        self.run_aux(&mut pass, inner)
    }

    fn run<T: Element>(&self, p: &mut Pass<'_, T>, scan: Var, path: Option<Var>) -> Result<GeneratorOutput> {
        let side = self.config.side;
        let l = &self.layout;
        let full = match path {
            Some(pc) => p.g.concat_channels(&[scan, pc]).map_err(at("input"))?,
            None => scan,
        };
        let half = p.g.resize_bilinear(full, side / 2, side / 2).map_err(at("input"))?;

        let x = self.layer(p, l.inner_embed, half, true)?;
        let d1 = self.layer(p, l.inner_down[0], x, true)?;
        let mut h = self.layer(p, l.inner_down[1], d1, true)?;
        for block in &l.inner_res {
            h = self.residual(p, block, h)?;
        }
        let mut u1 = self.layer(p, l.inner_up[0], h, true)?;
        if self.config.symmetric_residuals {
            u1 = p.g.add(u1, d1).map_err(at("inner.up1"))?;
        }
        let mut inner = self.layer(p, l.inner_up[1], u1, true)?;
        if self.config.symmetric_residuals {
            inner = p.g.add(inner, x).map_err(at("inner.up2"))?;
        }

        let e = self.layer(p, l.outer_embed, full, true)?;
        let down = self.layer(p, l.outer_down, e, true)?;
        let mut h = p.g.add(down, inner).map_err(at("outer.fuse"))?;
        for block in &l.outer_res {
            h = self.residual(p, block, h)?;
        }
        let mut up = self.layer(p, l.outer_up, h, true)?;
        if self.config.symmetric_residuals {
            up = p.g.add(up, e).map_err(at("outer.up"))?;
        }
        let completion = self.layer(p, l.outer_out, up, false)?;
        Ok(GeneratorOutput { completion, inner })
    }

    fn run_aux<T: Element>(&self, p: &mut Pass<'_, T>, inner: Var) -> Result<Var> {
        let h = self.layer(p, self.layout.aux_hidden, inner, true)?;
        self.layer(p, self.layout.aux_out, h, false)
    }

    /// `relu(x + f(x))` with `f` three normalized convs, the last without
    /// activation.
    fn residual<T: Element>(&self, p: &mut Pass<'_, T>, block: &[usize; 3], x: Var) -> Result<Var> {
        let a = self.layer(p, block[0], x, true)?;
        let b = self.layer(p, block[1], a, true)?;
        let c = self.layer(p, block[2], b, false)?;
        let name = &self.layers[block[2]].name;
        let sum = p.g.add(x, c).map_err(at(name))?;
        p.g.relu(sum).map_err(at(name))
    }

    /// Weight-normalized conv, then (hidden layers) mean-only batch norm,
    /// bias and optionally ReLU.
    fn layer<T: Element>(&self, p: &mut Pass<'_, T>, idx: usize, x: Var, relu: bool) -> Result<Var> {
        let layer = &self.layers[idx];
        let name = layer.name.as_str();
        let w = p.g.weight_norm(p.vars[layer.v], p.vars[layer.g], layer.norm_axis()).map_err(at(name))?;
        let y = if layer.transpose {
            p.g.conv2d_transpose(x, w, layer.stride)
        } else {
            p.g.conv2d(x, w, layer.stride, Padding::Same)
        }
        .map_err(at(name))?;
        p.taps.push((idx, y));
        let (Some(slot), Some(bias)) = (layer.bn, layer.bias) else {
            return Ok(y);
        };
        // while the running means are still moving, center on the batch
        // itself; subtracting a lagging constant lets the output drift away
        let centered = if p.update && !p.running.frozen {
            let means = channel_means(p.g.value(y));
            p.running.update(slot, &means);
            p.g.center_channels(y).map_err(at(name))?
        } else {
            let means: Vec<T> = p.running.means[slot].iter().map(|&m| T::from_f64(m)).collect();
            p.g.sub_channel(y, &means).map_err(at(name))?
        };
        let biased = p.g.add_channel_bias(centered, p.vars[bias]).map_err(at(name))?;
        if relu {
            p.g.relu(biased).map_err(at(name))
        } else {
            Ok(biased)
        }
    }

    /// Inference on one image pair; output clamped to `[0, 1]`.
    pub fn complete(&self, params: &ParamSet<f32>, running: &RunningMeans, scan: &Image, path: &Image) -> Result<Image> {
        let raw = self.complete_raw(params, running, scan, path)?;
        Ok(raw.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Inference without the output clamp.
    pub fn complete_raw(&self, params: &ParamSet<f32>, running: &RunningMeans, scan: &Image, path: &Image) -> Result<Image> {
        let mut g = Graph::<f32>::new();
        let vars = params.bind(&mut g, false);
        let (s, p) = self.input_vars(&mut g, scan, path)?;
        let mut frozen = running.clone();
        let out = self.forward(&mut g, &vars, s, p, &mut frozen, false)?;
        Image::from_tensor(g.value(out.completion))
    }
}

/// L2 norm of each slice of `t` along `axis` (0 or 1).
pub fn per_channel_norms<T: Element>(t: &Tensor<T>, axis: usize) -> Vec<f64> {
    let s = t.shape();
    let channels = s[axis];
    let inner: usize = s[2..].iter().product();
    let mut sq = vec![0.0; channels];
    for (i, x) in t.data().iter().enumerate() {
        let c = if axis == 0 { i / (s[1] * inner) } else { (i / inner) % s[1] };
        sq[c] += x.as_f64().powi(2);
    }
    sq.into_iter().map(f64::sqrt).collect()
}
