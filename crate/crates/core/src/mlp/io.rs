use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, InputMode, Mlp, MlpConfig, MlpWeights, Normalizer};
use crate::{Error, Result};

pub const WEIGHTS_VERSION: u32 = 1;

/// On-disk weights document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub input_mode: InputMode,
    /// row-major `out x in` matrices
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub normalizer: Normalizer,
}

impl WeightsFile {
    pub fn from_mlp(mlp: &Mlp) -> Self {
        let w = &mlp.weights;
        let (weights, biases) = (0..w.n_layers())
            .map(|l| {
                let (wm, b) = w.layer(l);
                (wm.to_vec(), b.to_vec())
            })
            .unzip();
        Self {
            version: WEIGHTS_VERSION,
            layer_sizes: w.sizes.clone(),
            activation: mlp.config.hidden_activation,
            input_mode: mlp.config.input_mode,
            weights,
            biases,
            normalizer: mlp.normalizer.clone(),
        }
    }

    pub fn into_mlp(self) -> Result<Mlp> {
        if self.version != WEIGHTS_VERSION {
            return Err(Error::ShapeMismatch(format!(
                "unsupported weights version {}",
                self.version
            )));
        }
        let cfg = MlpConfig {
            layer_sizes: self.layer_sizes.clone(),
            hidden_activation: self.activation,
            output_activation: Activation::Identity,
            input_mode: self.input_mode,
        };
        cfg.validate()?;
        let n_layers = cfg.layer_sizes.len() - 1;
        if self.weights.len() != n_layers || self.biases.len() != n_layers {
            return Err(Error::ShapeMismatch(format!(
                "expected {n_layers} layers, found {} weight and {} bias arrays",
                self.weights.len(),
                self.biases.len()
            )));
        }
        let mut params = Vec::with_capacity(cfg.n_params());
        for l in 0..n_layers {
            let (n_in, n_out) = (cfg.layer_sizes[l], cfg.layer_sizes[l + 1]);
            if self.weights[l].len() != n_in * n_out || self.biases[l].len() != n_out {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: expected {n_out}x{n_in} weights and {n_out} biases"
                )));
            }
            params.extend_from_slice(&self.weights[l]);
            params.extend_from_slice(&self.biases[l]);
        }
        let weights = MlpWeights {
            sizes: cfg.layer_sizes.clone(),
            params,
        };
        if !weights.is_finite() {
            return Err(Error::NonFinite("stored weights"));
        }
        Mlp::new(cfg, weights, self.normalizer)
    }
}

pub fn save_weights(mlp: &Mlp, path: &Path) -> Result<()> {
    let doc = WeightsFile::from_mlp(mlp);
    fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<Mlp> {
    let text = fs::read_to_string(path)?;
    let doc: WeightsFile = serde_json::from_str(&text)?;
    doc.into_mlp()
}

/// Loads and checks the stored architecture against `expected`.
pub fn load_weights_checked(path: &Path, expected: &MlpConfig) -> Result<Mlp> {
    let text = fs::read_to_string(path)?;
    let doc: WeightsFile = serde_json::from_str(&text)?;
    if doc.layer_sizes != expected.layer_sizes {
        return Err(Error::ShapeMismatch(format!(
            "file has layer sizes {:?}, config expects {:?}",
            doc.layer_sizes, expected.layer_sizes
        )));
    }
    doc.into_mlp()
}
