//! Five-layer bias-free convolutional denoiser trained on truncated
//! pseudo-sample pairs.
//!
//! Every layer is a 3x3 zero-padded convolution followed by a rectifier and
//! there are no bias terms, so `forward(a * x) == a * forward(x)` for every
//! `a > 0`. Training happens on sinograms divided by a robust scale `s`;
//! inference maps `x` to `s * forward(x / s)` over the full, unclamped range.

pub mod conv;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{read_tensor, write_tensor, Dtype, Grid2D, GridKind};
use crate::pseudosample::{build_banks, clamp_bank, PerturbConfig, SampleBank};
use crate::rng::{tags, RngStream};

use conv::{adjoint_weights, conv3x3, conv3x3_weight_grad};

pub const N_LAYERS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub c_in: usize,
    pub c_out: usize,
    /// `[c_out][c_in][3][3]`
    pub weights: Vec<f64>,
}

impl ConvLayer {
    fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            weights: vec![0.0; c_out * c_in * 9],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub hidden: usize,
    /// Rectifier after the last convolution.
    pub final_relu: bool,
    pub layers: Vec<ConvLayer>,
}

impl ConvNet {
    /// Channel plan `1 -> c -> c -> c -> c -> 1`, all weights zero.
    pub fn zeros(hidden: usize, final_relu: bool) -> Self {
        assert!(hidden > 0, "hidden channels must be positive");
        let plan = [1, hidden, hidden, hidden, hidden, 1];
        Self {
            hidden,
            final_relu,
            layers: plan
                .windows(2)
                .map(|p| ConvLayer::zeros(p[0], p[1]))
                .collect(),
        }
    }

    /// Fan-in scaled normal init, `std = sqrt(2 / (9 c_in))`, layer by layer.
    pub fn kaiming(hidden: usize, final_relu: bool, rng: &mut RngStream) -> Self {
        let mut net = Self::zeros(hidden, final_relu);
        for layer in &mut net.layers {
            let std = (2.0 / (9.0 * layer.c_in as f64)).sqrt();
            layer
                .weights
                .iter_mut()
                .for_each(|w| *w = std * rng.standard_normal());
        }
        net
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    fn relu_after(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.final_relu
    }

    /// Forward pass keeping every layer's output (index 0 is the input).
    fn forward_trace(&self, x: &[f64], h: usize, w: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.c_out * h * w];
            conv3x3(
                &acts[l],
                layer.c_in,
                h,
                w,
                &layer.weights,
                layer.c_out,
                &mut out,
            );
            if self.relu_after(l) {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &Grid2D) -> Grid2D {
        let (h, w) = x.shape();
        let out = self.forward_trace(x.data(), h, w).pop().unwrap();
        Grid2D::from_vec_unchecked(h, w, x.kind(), out)
    }
}

pub fn forward(net: &ConvNet, x: &Grid2D) -> Grid2D {
    net.forward(x)
}

/// Per-layer weight gradients, shaped like [`ConvLayer::weights`].
pub type Gradients = Vec<Vec<f64>>;

/// Mean squared error of `forward(input)` against `target` and its gradient.
pub fn loss_and_grads(net: &ConvNet, input: &Grid2D, target: &Grid2D) -> Result<(f64, Gradients)> {
    input.ensure_same_shape(target)?;
    let (h, w) = input.shape();
    let n = (h * w) as f64;
    let acts = net.forward_trace(input.data(), h, w);
    let output = acts.last().unwrap();
    let mut loss = 0.0;
    let mut delta: Vec<f64> = output
        .iter()
        .zip(target.data())
        .map(|(&y, &t)| {
            let r = y - t;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    loss /= n;

    let mut grads: Gradients = net
        .layers
        .iter()
        .map(|l| vec![0.0; l.weights.len()])
        .collect();
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        if net.relu_after(l) {
            // Subgradient 0 where the output was clipped (including exactly 0).
            for (d, &a) in delta.iter_mut().zip(&acts[l + 1]) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        conv3x3_weight_grad(
            &acts[l],
            layer.c_in,
            h,
            w,
            &delta,
            layer.c_out,
            &mut grads[l],
        );
        if l > 0 {
            let mut prev = vec![0.0; layer.c_in * h * w];
            let adj = adjoint_weights(&layer.weights, layer.c_out, layer.c_in);
            conv3x3(&delta, layer.c_out, h, w, &adj, layer.c_in, &mut prev);
            delta = prev;
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Gradients,
    pub v: Gradients,
}

impl AdamState {
    pub fn new(net: &ConvNet, lr: f64) -> Self {
        let zeros: Gradients = net
            .layers
            .iter()
            .map(|l| vec![0.0; l.weights.len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(net: &mut ConvNet, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.len() != net.layers.len()
        || state.m.len() != net.layers.len()
        || net
            .layers
            .iter()
            .zip(grads)
            .zip(&state.m)
            .any(|((l, g), m)| l.weights.len() != g.len() || l.weights.len() != m.len())
    {
        return Err(Error::invalid(
            "gradient/optimizer shapes do not match the network",
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[l], &mut state.v[l]);
        for (i, w) in layer.weights.iter_mut().enumerate() {
            let g = grads[l][i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Optimizer steps, one (mask, noise) pair per step.
    pub steps: usize,
    pub lr: f64,
    pub hidden_channels: usize,
    pub final_relu: bool,
    /// Quantile of the noisy sinogram used as the normalization scale.
    pub scale_quantile: f64,
    /// Clamp both banks to `[0, perturb.clamp_t]` before training.
    pub use_clamp: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 1e-3,
            hidden_channels: 32,
            final_relu: true,
            scale_quantile: 0.99,
            use_clamp: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("train: steps must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "train: lr must be > 0, got {}",
                self.lr
            )));
        }
        if self.hidden_channels < 1 {
            return Err(Error::Config("train: hidden_channels must be >= 1".into()));
        }
        if !(self.scale_quantile > 0.0 && self.scale_quantile <= 1.0) {
            return Err(Error::Config(format!(
                "train: scale_quantile must be in (0, 1], got {}",
                self.scale_quantile
            )));
        }
        Ok(())
    }
}

/// Linearly interpolated quantile of `values` (`q` in `[0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let f = pos - lo as f64;
    sorted[lo] * (1.0 - f) + sorted[hi] * f
}

/// Normalized and (optionally) clamped sample banks for one noisy sinogram.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub scale: f64,
    pub noise: SampleBank,
    pub mask: SampleBank,
}

pub fn prepare_training_data(
    sino_ld: &Grid2D,
    perturb: &PerturbConfig,
    train: &TrainConfig,
    rng: &RngStream,
) -> Result<TrainingData> {
    perturb.validate()?;
    train.validate()?;
    if sino_ld.data().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("training sinogram must be non-negative"));
    }
    let scale = quantile(sino_ld.data(), train.scale_quantile);
    if !(scale > 0.0) {
        return Err(Error::Numeric(format!(
            "normalization scale is {scale}; the sinogram is (almost) all zero"
        )));
    }
    let normalized = sino_ld.scaled(1.0 / scale)?;
    let (mut noise, mut mask) = build_banks(&normalized, perturb, &mut rng.derive(tags::BANKS))?;
    if train.use_clamp {
        noise = clamp_bank(&noise, perturb.clamp_t)?;
        mask = clamp_bank(&mask, perturb.clamp_t)?;
    }
    Ok(TrainingData { scale, noise, mask })
}

/// Trains a fresh network on prepared banks; returns it with per-step losses.
pub fn fit(
    data: &TrainingData,
    train: &TrainConfig,
    rng: &RngStream,
) -> Result<(ConvNet, Vec<f64>)> {
    train.validate()?;
    let mut net = ConvNet::kaiming(
        train.hidden_channels,
        train.final_relu,
        &mut rng.derive(tags::INIT),
    );
    let mut adam = AdamState::new(&net, train.lr);
    let mut pairs = rng.derive(tags::PAIRS);
    let n = data.mask.len();
    let mut losses = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let i = pairs.index(n);
        let j = pairs.index(data.noise.len());
        let (loss, grads) = loss_and_grads(&net, &data.mask.samples[i], &data.noise.samples[j])?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss became {loss} at step {step}")));
        }
        adam_step(&mut net, &grads, &mut adam)?;
        log::debug!("step {step}: loss {loss:.6e}");
        losses.push(loss);
    }
    Ok((net, losses))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ConvNet,
    pub scale: f64,
    pub losses: Vec<f64>,
}

pub fn train(
    sino_ld: &Grid2D,
    perturb: &PerturbConfig,
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<TrainOutcome> {
    let data = prepare_training_data(sino_ld, perturb, cfg, rng)?;
    let (net, losses) = fit(&data, cfg, rng)?;
    Ok(TrainOutcome {
        net,
        scale: data.scale,
        losses,
    })
}

/// `s * forward(x / s)` over the full range of `x`.
pub fn infer(net: &ConvNet, sino_ld: &Grid2D, scale: f64) -> Result<Grid2D> {
    if !(scale > 0.0) {
        return Err(Error::invalid(format!("scale must be > 0, got {scale}")));
    }
    let out = net.forward(&sino_ld.scaled(1.0 / scale)?);
    out.scaled(scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetManifest {
    pub hidden_channels: usize,
    pub final_relu: bool,
    pub activation: String,
    pub bias: bool,
    pub scale: f64,
    pub layers: Vec<String>,
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

/// Writes `layer_{k}.fct` (shape `c_out x c_in*9`) plus `net.json` into `dir`.
pub fn save_net(
    net: &ConvNet,
    scale: f64,
    config_hash: &str,
    dir: impl AsRef<Path>,
) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    let mut names = Vec::new();
    for (k, layer) in net.layers.iter().enumerate() {
        let name = format!("layer_{k}.fct");
        let g = Grid2D::new(
            layer.c_out,
            layer.c_in * 9,
            GridKind::Generic,
            layer.weights.clone(),
        )?;
        let path = dir.join(&name);
        write_tensor(&g, &path, Dtype::F64)?;
        paths.push(path);
        names.push(name);
    }
    let manifest = NetManifest {
        hidden_channels: net.hidden,
        final_relu: net.final_relu,
        activation: "relu".into(),
        bias: false,
        scale,
        layers: names,
        config_hash: config_hash.to_string(),
        meta: BTreeMap::new(),
    };
    let path = dir.join("net.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    paths.push(path);
    Ok(paths)
}

pub fn load_net(dir: impl AsRef<Path>) -> Result<(ConvNet, NetManifest)> {
    let dir = dir.as_ref();
    let path = dir.join("net.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: NetManifest = serde_json::from_str(&text).map_err(|e| Error::InvalidHeader {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.layers.len() != N_LAYERS || manifest.bias {
        return Err(Error::InvalidHeader {
            path,
            reason: "expected five bias-free layers".into(),
        });
    }
    let mut net = ConvNet::zeros(manifest.hidden_channels, manifest.final_relu);
    for (layer, name) in net.layers.iter_mut().zip(&manifest.layers) {
        let g = read_tensor(dir.join(name))?;
        if g.shape() != (layer.c_out, layer.c_in * 9) {
            return Err(Error::ShapeMismatch {
                expected: (layer.c_out, layer.c_in * 9),
                found: g.shape(),
            });
        }
        layer.weights = g.into_data();
    }
    Ok((net, manifest))
}
