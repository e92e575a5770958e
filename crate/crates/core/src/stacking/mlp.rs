//! Small fully connected regressor used as the level-1 blender.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::metrics::r2;

/// Hidden widths of the blender.
pub const HIDDEN: [usize; 2] = [10, 5];

/// One dense layer; `weights` is row-major `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Layer {
        Layer {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot(n_in: usize, n_out: usize, rng: &mut impl Rng) -> Layer {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let mut layer = Layer::zeros(n_in, n_out);
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..limit);
        }
        layer
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            out.push(self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// ReLU hidden layers, identity scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl Mlp {
    pub fn zeros(layer_sizes: &[usize]) -> Mlp {
        assert!(layer_sizes.len() >= 2 && *layer_sizes.last().unwrap() == 1);
        Mlp {
            layer_sizes: layer_sizes.to_vec(),
            layers: layer_sizes
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
        }
    }

    /// Glorot-uniform initialisation of every layer.
    pub fn random(layer_sizes: &[usize], rng: &mut impl Rng) -> Mlp {
        let mut mlp = Mlp::zeros(layer_sizes);
        for layer in &mut mlp.layers {
            *layer = Layer::glorot(layer.n_in, layer.n_out, rng);
        }
        mlp
    }

    /// Glorot hidden layers and a zero output layer, so the untrained
    /// network predicts its output bias everywhere.
    pub fn blender(input_dim: usize, rng: &mut impl Rng) -> Mlp {
        let mut sizes = vec![input_dim];
        sizes.extend(HIDDEN);
        sizes.push(1);
        let mut mlp = Mlp::random(&sizes, rng);
        let last = mlp.layers.last_mut().unwrap();
        *last = Layer::zeros(last.n_in, last.n_out);
        mlp
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Activations of every layer, input first. Hidden entries are post-ReLU.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.apply(acts.last().unwrap(), &mut out);
            if i + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim());
        self.activations(x).last().unwrap()[0]
    }

    /// Loss `mean((f(x) - y)^2) / 2` and its gradient, flattened in the
    /// order of [`Mlp::params`].
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ys: &[f64]) -> (f64, Vec<f64>) {
        let n = xs.len() as f64;
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer::zeros(l.n_in, l.n_out))
            .collect();
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let acts = self.activations(x);
            let err = acts.last().unwrap()[0] - y;
            loss += 0.5 * err * err / n;
            let mut delta = vec![err / n];
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let input = &acts[li];
                let g = &mut grads[li];
                for (o, d) in delta.iter().enumerate() {
                    g.bias[o] += d;
                    for (i, v) in input.iter().enumerate() {
                        g.weights[o * layer.n_in + i] += d * v;
                    }
                }
                if li == 0 {
                    break;
                }
                // Back through the weights, then the ReLU of the layer below.
                delta = (0..layer.n_in)
                    .map(|i| {
                        if input[i] <= 0.0 {
                            return 0.0;
                        }
                        (0..layer.n_out)
                            .map(|o| layer.weights[o * layer.n_in + i] * delta[o])
                            .sum()
                    })
                    .collect();
            }
        }
        let flat = grads
            .into_iter()
            .flat_map(|l| l.weights.into_iter().chain(l.bias))
            .collect();
        (loss, flat)
    }

    pub fn loss(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        xs.iter()
            .zip(ys)
            .map(|(x, y)| 0.5 * (self.forward(x) - y).powi(2) / n)
            .sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut it = flat.iter().copied();
        for layer in &mut self.layers {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
    }
}

/// Adam optimiser state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub val_fraction: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            val_fraction: 0.1,
            max_epochs: 64,
            patience: 8,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Column means and scales; zero-variance columns keep scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    fn fit(rows: &[Vec<f64>]) -> Standardizer {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        let scale = (0..d)
            .map(|j| {
                let sd = (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// A trained blender with its input and target scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRegressor {
    pub mlp: Mlp,
    pub inputs: Standardizer,
    pub target_mean: f64,
    pub target_scale: f64,
    pub best_epoch: usize,
    /// Validation R2 after each epoch.
    pub val_r2: Vec<f64>,
}

impl MetaRegressor {
    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn predict_one(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.input_dim() {
            return Err(validation(format!(
                "blender expects {} inputs, got {}",
                self.input_dim(),
                row.len()
            )));
        }
        Ok(self.target_mean + self.target_scale * self.mlp.forward(&self.inputs.apply(row)))
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.predict_one(r)).collect()
    }
}

/// Full-batch adam on standardised inputs and targets with early stopping on
/// validation R2. The returned weights are those of the best epoch.
pub fn train_mlp(features: &[Vec<f64>], targets: &[f64], cfg: &MlpConfig) -> Result<MetaRegressor> {
    let n = features.len();
    if n != targets.len() {
        return Err(validation("meta features and targets differ in length"));
    }
    if n < 20 {
        return Err(validation(format!(
            "blender needs at least 20 rows, got {n}"
        )));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|r| r.len() != d) {
        return Err(validation("meta feature rows must share a non-zero width"));
    }
    if features
        .iter()
        .flatten()
        .chain(targets)
        .any(|v| !v.is_finite())
    {
        return Err(validation("meta features and targets must be finite"));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) || cfg.max_epochs == 0 {
        return Err(validation("bad blender configuration"));
    }
    if targets.iter().all(|&t| t == targets[0]) {
        return Err(Error::UndefinedMetric("R2 of a constant target".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(2, n - 2);
    let (val_idx, train_idx) = order.split_at(n_val);

    let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| features[i].clone()).collect();
    let inputs = Standardizer::fit(&train_x);
    let train_y: Vec<f64> = train_idx.iter().map(|&i| targets[i]).collect();
    let t_mean = train_y.iter().sum::<f64>() / train_y.len() as f64;
    let t_sd =
        (train_y.iter().map(|y| (y - t_mean).powi(2)).sum::<f64>() / train_y.len() as f64).sqrt();
    let t_scale = if t_sd > 0.0 { t_sd } else { 1.0 };

    let xs: Vec<Vec<f64>> = train_x.iter().map(|r| inputs.apply(r)).collect();
    let ys: Vec<f64> = train_y.iter().map(|y| (y - t_mean) / t_scale).collect();
    let val_x: Vec<Vec<f64>> = val_idx
        .iter()
        .map(|&i| inputs.apply(&features[i]))
        .collect();
    let val_y: Vec<f64> = val_idx
        .iter()
        .map(|&i| (targets[i] - t_mean) / t_scale)
        .collect();

    let mut mlp = Mlp::blender(d, &mut rng);
    let mut params = mlp.params();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut best: Option<(f64, usize, Mlp)> = None;
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let (_, grad) = mlp.loss_and_gradient(&xs, &ys);
        adam.step(&mut params, &grad);
        mlp.set_params(&params);

        let preds: Vec<f64> = val_x.iter().map(|x| mlp.forward(x)).collect();
        let score = r2(&val_y, &preds)?.value;
        history.push(score);
        match &best {
            Some((b, _, _)) if score <= *b => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((score, epoch, mlp.clone()));
                stale = 0;
            }
        }
    }
    let (_, best_epoch, mlp) = best.expect("at least one epoch");
    Ok(MetaRegressor {
        mlp,
        inputs,
        target_mean: t_mean,
        target_scale: t_scale,
        best_epoch,
        val_r2: history,
    })
}

/// Largest relative error between analytic and central-difference gradients,
/// with `|a - b| / max(|a|, |b|, 1e-8)` per parameter.
pub fn gradient_check(mlp: &Mlp, xs: &[Vec<f64>], ys: &[f64], h: f64) -> f64 {
    let (_, analytic) = mlp.loss_and_gradient(xs, ys);
    let base = mlp.params();
    let mut probe = mlp.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params(&p);
        let up = probe.loss(xs, ys);
        p[i] = base[i] - h;
        probe.set_params(&p);
        let down = probe.loss(xs, ys);
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
