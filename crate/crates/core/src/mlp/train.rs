use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward_normalized, Mlp, MlpConfig, MlpWeights, Normalizer, MAX_WIDTH, N_FEATURES};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// chronological tail held out for validation
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1000,
            epochs: 1000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

/// Per-epoch mean squared errors in label-scale units.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossHistory {
    pub train_mse: Vec<f64>,
    /// NaN when no validation split was requested
    pub val_mse: Vec<f64>,
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Mean squared error over a batch of standardized inputs and scaled labels,
/// accumulating the gradient with respect to every parameter into `grad`
/// (which is overwritten).
pub fn loss_and_gradient(
    w: &MlpWeights,
    cfg: &MlpConfig,
    xs: &[[f64; N_FEATURES]],
    ys: &[f64],
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n_layers = w.n_layers();
    let inv_n = 1.0 / xs.len() as f64;
    // parameter offsets per layer
    let mut offsets = [0usize; 4];
    let mut o = 0;
    for l in 0..n_layers {
        offsets[l] = o;
        o += w.sizes[l + 1] * w.sizes[l] + w.sizes[l + 1];
    }
    let mut loss = 0.0;
    let mut acts = [[0.0; MAX_WIDTH]; 4];
    for (x, &y) in xs.iter().zip(ys) {
        acts[0][..N_FEATURES].copy_from_slice(x);
        for l in 0..n_layers {
            let (n_in, n_out) = (w.sizes[l], w.sizes[l + 1]);
            let (wm, bv) = w.layer(l);
            let act = if l == n_layers - 1 { cfg.output_activation } else { cfg.hidden_activation };
            for j in 0..n_out {
                let row = &wm[j * n_in..(j + 1) * n_in];
                let mut z = bv[j];
                for i in 0..n_in {
                    z += row[i] * acts[l][i];
                }
                acts[l + 1][j] = act.apply(z);
            }
        }
        let err = acts[n_layers][0] - y;
        loss += err * err;
        let mut delta = [0.0; MAX_WIDTH];
        delta[0] = 2.0 * err * inv_n;
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (w.sizes[l], w.sizes[l + 1]);
            let (wm, _) = w.layer(l);
            let act = if l == n_layers - 1 { cfg.output_activation } else { cfg.hidden_activation };
            let base = offsets[l];
            let mut back = [0.0; MAX_WIDTH];
            for j in 0..n_out {
                let d = delta[j] * act.slope_from_output(acts[l + 1][j]);
                if d == 0.0 {
                    continue;
                }
                let row = &wm[j * n_in..(j + 1) * n_in];
                let g_row = &mut grad[base + j * n_in..base + (j + 1) * n_in];
                for i in 0..n_in {
                    g_row[i] += d * acts[l][i];
                    back[i] += d * row[i];
                }
                grad[base + n_in * n_out + j] += d;
            }
            delta = back;
        }
    }
    loss * inv_n
}

fn glorot(cfg: &MlpConfig, rng: &mut ChaCha8Rng) -> MlpWeights {
    let mut w = MlpWeights::zeros(cfg);
    for l in 0..w.n_layers() {
        let (n_in, n_out) = (w.sizes[l], w.sizes[l + 1]);
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let (wm, _) = w.layer_mut(l);
        for p in wm.iter_mut() {
            *p = rng.random_range(-limit..limit);
        }
    }
    w
}

fn mse(w: &MlpWeights, cfg: &MlpConfig, xs: &[[f64; N_FEATURES]], ys: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (forward_normalized(w, cfg, x) - y).powi(2))
        .sum::<f64>()
        / xs.len() as f64
}

/// Mini-batch Adam on mean squared error. Deterministic given the seed.
pub fn train(
    features: &[[f64; N_FEATURES]],
    labels: &[f64],
    mlp_cfg: &MlpConfig,
    cfg: &TrainConfig,
) -> Result<(Mlp, LossHistory)> {
    mlp_cfg.validate()?;
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch_size and epochs must be >= 1".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::ShapeMismatch("features and labels differ in length".into()));
    }
    if features.len() < 2 * cfg.batch_size {
        return Err(Error::InsufficientSamples(format!(
            "{} samples for batch size {}",
            features.len(),
            cfg.batch_size
        )));
    }
    if labels.iter().any(|y| !y.is_finite()) {
        return Err(Error::NonFinite("training labels"));
    }
    let n_val = (cfg.validation_fraction.clamp(0.0, 0.9) * features.len() as f64).floor() as usize;
    let n_train = features.len() - n_val;
    let normalizer = Normalizer::fit(&features[..n_train], &labels[..n_train])?;
    let xs: Vec<[f64; N_FEATURES]> = features.iter().map(|x| normalizer.standardize(x)).collect();
    let ys: Vec<f64> = labels.iter().map(|y| y / normalizer.label_scale).collect();
    let (train_x, val_x) = xs.split_at(n_train);
    let (train_y, val_y) = ys.split_at(n_train);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = glorot(mlp_cfg, &mut rng);
    let mut adam = Adam::new(weights.params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut grad = vec![0.0; weights.params.len()];
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut batch_x = Vec::with_capacity(cfg.batch_size);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);
    let mut history = LossHistory::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum_sq = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            batch_x.extend(chunk.iter().map(|&i| train_x[i]));
            batch_y.extend(chunk.iter().map(|&i| train_y[i]));
            let loss = loss_and_gradient(&weights, mlp_cfg, &batch_x, &batch_y, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            sum_sq += loss * chunk.len() as f64;
            adam.step(&mut weights.params, &grad);
        }
        if !weights.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.train_mse.push(sum_sq / n_train as f64);
        history.val_mse.push(mse(&weights, mlp_cfg, val_x, val_y));
    }
    let mlp = Mlp::new(mlp_cfg.clone(), weights, normalizer)?;
    Ok((mlp, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::tests::random_mlp;

    #[test]
    fn adam_first_step() {
        let mut adam = Adam::new(1, 0.001, 0.9, 0.999, 1e-8);
        let mut p = [0.0];
        adam.step(&mut p, &[2.0]);
        let expected = -0.001 * 2.0 / (2.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        for seed in 0..5 {
            let net = random_mlp(seed, MlpConfig::default());
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let xs: Vec<[f64; 6]> = (0..8)
                .map(|_| std::array::from_fn(|_| rng.random_range(-1.5..1.5)))
                .collect();
            let ys: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut grad = vec![0.0; net.weights.params.len()];
            loss_and_gradient(&net.weights, &net.config, &xs, &ys, &mut grad);
            let mut scratch = vec![0.0; grad.len()];
            for k in 0..grad.len() {
                let h = 1e-6;
                let mut wp = net.weights.clone();
                let mut wm = net.weights.clone();
                wp.params[k] += h;
                wm.params[k] -= h;
                let lp = loss_and_gradient(&wp, &net.config, &xs, &ys, &mut scratch);
                let lm = loss_and_gradient(&wm, &net.config, &xs, &ys, &mut scratch);
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - grad[k]).abs() / grad[k].abs().max(1e-4);
                assert!(rel < 1e-5, "param {k}: fd {fd} vs {}", grad[k]);
            }
        }
    }

    fn toy_data(n: usize, label: impl Fn(&[f64; 6]) -> f64) -> (Vec<[f64; 6]>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let xs: Vec<[f64; 6]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let ys = xs.iter().map(label).collect();
        (xs, ys)
    }

    #[test]
    fn constant_label_converges() {
        let c = 1234.5;
        let (xs, ys) = toy_data(2000, |_| c);
        let cfg = TrainConfig {
            batch_size: 10,
            epochs: 50,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let (net, hist) = train(&xs, &ys, &MlpConfig::default(), &cfg).unwrap();
        // label scale is c, so a normalized MSE below 1e-6 is below 1e-6 c^2
        assert!(*hist.train_mse.last().unwrap() < 1e-6);
        let y = net.forward(&xs[0]).unwrap();
        assert!((y - c).abs() < 1e-3 * c);
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = toy_data(400, |x| (x[0] * 2.0).sin() + x[1] * x[2]);
        let cfg = TrainConfig {
            batch_size: 50,
            epochs: 20,
            seed: 3,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&xs, &ys, &MlpConfig::default(), &cfg).unwrap();
        let (b, hb) = train(&xs, &ys, &MlpConfig::default(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            ha.train_mse.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            hb.train_mse.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(ha.train_mse.last().unwrap() < &ha.train_mse[0]);
    }

    #[test]
    fn too_few_samples() {
        let (xs, ys) = toy_data(100, |_| 1.0);
        let cfg = TrainConfig {
            batch_size: 60,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&xs, &ys, &MlpConfig::default(), &cfg),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn divergence_names_epoch() {
        let (xs, ys) = toy_data(200, |x| x[0]);
        let cfg = TrainConfig {
            batch_size: 50,
            epochs: 5,
            learning_rate: f64::INFINITY,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&xs, &ys, &MlpConfig::default(), &cfg),
            Err(Error::Divergence { epoch: 0 }) | Err(Error::Divergence { epoch: 1 })
        ));
    }
}
