//! The learned front-tire lateral force model: a small tanh feedforward
//! network with z-score input standardization, trained with Adam on MSE.

mod io;
mod train;

pub use io::{load_weights, load_weights_checked, save_weights, WeightsFile, WEIGHTS_VERSION};
pub use train::{loss_and_gradient, train, Adam, LossHistory, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Input width: `[r, v, beta, delta, fxf, fzf]`.
pub const N_FEATURES: usize = 6;
const MAX_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn slope_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Identity => 1.0,
        }
    }
}

/// What the first network input carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Raw yaw rate; the network composes the kinematics itself.
    #[default]
    RawStates,
    /// Front slip angle replaces yaw rate.
    SlipAngle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub input_mode: InputMode,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![N_FEATURES, 8, 16, 1],
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
            input_mode: InputMode::RawStates,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.layer_sizes;
        if s.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "exactly two hidden layers required, got sizes {s:?}"
            )));
        }
        if s[0] != N_FEATURES || s[3] != 1 {
            return Err(Error::ShapeMismatch(format!("expected 6 inputs and 1 output, got {s:?}")));
        }
        if s.iter().any(|&n| n == 0 || n > MAX_WIDTH) {
            return Err(Error::ShapeMismatch(format!("layer width out of range in {s:?}")));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

/// All weights and biases in one flat buffer, layer by layer: the weight
/// matrix (row-major, `out x in`) followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl MlpWeights {
    pub fn zeros(cfg: &MlpConfig) -> Self {
        Self {
            sizes: cfg.layer_sizes.clone(),
            params: vec![0.0; cfg.n_params()],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn offset(&self, layer: usize) -> usize {
        self.sizes[..=layer]
            .windows(2)
            .take(layer)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// `(weights, biases)` of one layer.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let o = self.offset(layer);
        let (w, rest) = self.params[o..].split_at(n_in * n_out);
        (w, &rest[..n_out])
    }

    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let o = self.offset(layer);
        let (w, rest) = self.params[o..].split_at_mut(n_in * n_out);
        (w, &mut rest[..n_out])
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub label_scale: f64,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; N_FEATURES],
            std: vec![1.0; N_FEATURES],
            label_scale: 1.0,
        }
    }

    /// Z-score statistics per feature and `max|label|` scaling.
    pub fn fit(features: &[[f64; N_FEATURES]], labels: &[f64]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InsufficientSamples("cannot fit normalizer on empty data".into()));
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; N_FEATURES];
        for x in features {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; N_FEATURES];
        for x in features {
            for i in 0..N_FEATURES {
                std[i] += (x[i] - mean[i]).powi(2);
            }
        }
        for (i, s) in std.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if !(*s > 1e-12 * (1.0 + mean[i].abs())) {
                return Err(Error::DegenerateFeature { index: i });
            }
        }
        let max_label = labels.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        Ok(Self {
            mean,
            std,
            label_scale: if max_label > 0.0 { max_label } else { 1.0 },
        })
    }

    #[inline]
    pub fn standardize(&self, x: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for i in 0..N_FEATURES {
            out[i] = (x[i] - self.mean[i]) / self.std[i];
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != N_FEATURES || self.std.len() != N_FEATURES {
            return Err(Error::ShapeMismatch("normalizer must have 6 entries".into()));
        }
        if let Some(i) = self.std.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::DegenerateFeature { index: i });
        }
        if !(self.label_scale > 0.0) {
            return Err(Error::ShapeMismatch("label scale must be positive".into()));
        }
        Ok(())
    }
}

/// `out = W x + b` for a row-major `W`, accumulated column by column so the
/// outputs form independent chains.
#[inline]
fn dense(wm: &[f64], bv: &[f64], x: &[f64], out: &mut [f64]) {
    let (n_in, n_out) = (x.len(), bv.len());
    let out = &mut out[..n_out];
    out.copy_from_slice(bv);
    for (i, &xi) in x.iter().enumerate() {
        for (o, acc) in out.iter_mut().enumerate() {
            *acc += wm[o * n_in + i] * xi;
        }
    }
}

/// Network output on standardized inputs, in label-scale units.
pub(crate) fn forward_normalized(w: &MlpWeights, cfg: &MlpConfig, x: &[f64]) -> f64 {
    let mut buf_a = [0.0; MAX_WIDTH];
    let mut buf_b = [0.0; MAX_WIDTH];
    buf_a[..x.len()].copy_from_slice(x);
    let last = w.n_layers() - 1;
    for l in 0..=last {
        let (n_in, n_out) = (w.sizes[l], w.sizes[l + 1]);
        let (wm, bv) = w.layer(l);
        let act = if l == last { cfg.output_activation } else { cfg.hidden_activation };
        dense(wm, bv, &buf_a[..n_in], &mut buf_b);
        for z in &mut buf_b[..n_out] {
            *z = act.apply(*z);
        }
        std::mem::swap(&mut buf_a, &mut buf_b);
    }
    buf_a[0]
}

/// A trained network with its conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub config: MlpConfig,
    pub weights: MlpWeights,
    pub normalizer: Normalizer,
}

impl Mlp {
    pub fn new(config: MlpConfig, weights: MlpWeights, normalizer: Normalizer) -> Result<Self> {
        config.validate()?;
        normalizer.validate()?;
        if weights.sizes != config.layer_sizes || weights.params.len() != config.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "weights {:?} do not match config {:?}",
                weights.sizes, config.layer_sizes
            )));
        }
        Ok(Self {
            config,
            weights,
            normalizer,
        })
    }

    /// Lateral force in newtons.
    pub fn forward(&self, x: &[f64; N_FEATURES]) -> Result<f64> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(self.forward_unchecked(x))
    }

    #[inline]
    pub fn forward_unchecked(&self, x: &[f64; N_FEATURES]) -> f64 {
        let xs = self.normalizer.standardize(x);
        self.normalizer.label_scale * forward_normalized(&self.weights, &self.config, &xs)
    }

    /// Output and its analytic gradient with respect to the raw inputs.
    pub fn forward_with_input_jacobian(&self, x: &[f64; N_FEATURES]) -> (f64, [f64; N_FEATURES]) {
        let w = &self.weights;
        let cfg = &self.config;
        let xs = self.normalizer.standardize(x);
        let n_layers = w.n_layers();
        // activations per layer, input first
        let mut acts = [[0.0; MAX_WIDTH]; 4];
        acts[0][..N_FEATURES].copy_from_slice(&xs);
        for l in 0..n_layers {
            let (n_in, n_out) = (w.sizes[l], w.sizes[l + 1]);
            let (wm, bv) = w.layer(l);
            let act = if l == n_layers - 1 { cfg.output_activation } else { cfg.hidden_activation };
            let (head, tail) = acts.split_at_mut(l + 1);
            dense(wm, bv, &head[l][..n_in], &mut tail[0]);
            for z in &mut tail[0][..n_out] {
                *z = act.apply(*z);
            }
        }
        // reverse sweep of d(out)/d(activation)
        let mut grad = [0.0; MAX_WIDTH];
        grad[0] = 1.0;
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (w.sizes[l], w.sizes[l + 1]);
            let (wm, _) = w.layer(l);
            let act = if l == n_layers - 1 { cfg.output_activation } else { cfg.hidden_activation };
            let mut next = [0.0; MAX_WIDTH];
            for o in 0..n_out {
                let g = grad[o] * act.slope_from_output(acts[l + 1][o]);
                let row = &wm[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    next[i] += g * row[i];
                }
            }
            grad = next;
        }
        let scale = self.normalizer.label_scale;
        let mut jac = [0.0; N_FEATURES];
        for i in 0..N_FEATURES {
            jac[i] = scale * grad[i] / self.normalizer.std[i];
        }
        (scale * acts[n_layers][0], jac)
    }
}
