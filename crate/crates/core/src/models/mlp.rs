//! ReLU multilayer perceptrons trained by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::rng::{standard_normal, stream};

/// Dense layer `z = W x + b` with `weights[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.push(w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b);
        }
    }
}

/// ReLU on every hidden layer, linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::Invalid("network without layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weights.len() != l.bias.len() || l.weights.iter().any(|r| r.len() != l.inputs()) {
                return Err(ModelError::Invalid(format!("layer {k} has ragged weights")));
            }
            if k > 0 && layers[k - 1].outputs() != l.inputs() {
                return Err(ModelError::Invalid(format!("layer {k} input size mismatch")));
            }
            if l.weights.iter().flatten().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(ModelError::Invalid(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    /// Exact forward pass: regression output or raw class logits.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::Dimension { expected: self.input_dim(), got: x.len() });
        }
        Ok(self.forward(x))
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

/// Training target of [`train_mlp`].
#[derive(Debug, Clone, Copy)]
pub enum MlpTarget<'a> {
    /// Squared-error regression on a single output.
    Regression(&'a [f64]),
    /// Softmax cross-entropy on `n_classes` logits.
    Classification { labels: &'a [usize], n_classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: vec![32, 32], epochs: 2000, learning_rate: 0.05, l2: 0.0, seed: 0 }
    }
}

/// Trained network with its first and last full-batch training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpFit {
    pub model: Mlp,
    pub initial_loss: f64,
    pub final_loss: f64,
}

fn he_init(sizes: &[usize], seed: u64) -> Vec<Layer> {
    let mut rng = stream(seed, "mlp/init");
    sizes
        .windows(2)
        .map(|w| {
            let scale = (2.0 / w[0] as f64).sqrt();
            Layer {
                weights: (0..w[1])
                    .map(|_| (0..w[0]).map(|_| scale * standard_normal(&mut rng)).collect())
                    .collect(),
                bias: vec![0.0; w[1]],
            }
        })
        .collect()
}

/// Full-batch gradient descent from a He-normal initialization drawn from
/// the `mlp/init` stream of `cfg.seed`. Inputs and regression targets are
/// standardized during training and the scaling is folded back into the
/// first and last layers.
pub fn train_mlp(features: &[Vec<f64>], target: MlpTarget<'_>, cfg: &MlpConfig) -> Result<MlpFit, ModelError> {
    let n = features.len();
    if n == 0 {
        return Err(ModelError::EmptyData);
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(ModelError::Invalid(format!("learning rate {}", cfg.learning_rate)));
    }
    let d = features[0].len();
    let n_out = match target {
        MlpTarget::Regression(y) => {
            if y.len() != n {
                return Err(ModelError::Invalid("target length mismatch".into()));
            }
            1
        }
        MlpTarget::Classification { labels, n_classes } => {
            if labels.len() != n || labels.iter().any(|&l| l >= n_classes) {
                return Err(ModelError::Invalid("labels do not match features or class count".into()));
            }
            n_classes
        }
    };
    let (mean, std) = match target {
        MlpTarget::Regression(y) => {
            let m = y.iter().sum::<f64>() / n as f64;
            let v = y.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / n as f64;
            (m, if v > 1e-24 { v.sqrt() } else { 1.0 })
        }
        MlpTarget::Classification { .. } => (0.0, 1.0),
    };
    let y_std: Vec<f64> = match target {
        MlpTarget::Regression(y) => y.iter().map(|t| (t - mean) / std).collect(),
        MlpTarget::Classification { .. } => Vec::new(),
    };

    let mut x_mean = vec![0.0; d];
    let mut x_std = vec![0.0; d];
    for row in features {
        if row.len() != d {
            return Err(ModelError::Dimension { expected: d, got: row.len() });
        }
        for (m, v) in x_mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    for row in features {
        for j in 0..d {
            x_std[j] += (row[j] - x_mean[j]).powi(2) / n as f64;
        }
    }
    for s in x_std.iter_mut() {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    if std::env::var("TMP_NOSTD").is_ok() { x_mean.iter_mut().for_each(|v| *v = 0.0); x_std.iter_mut().for_each(|v| *v = 1.0); }

    let mut sizes = vec![d];
    sizes.extend(&cfg.hidden);
    sizes.push(n_out);
    let mut layers = he_init(&sizes, cfg.seed);
    let nl = layers.len();

    // acts[k]: input of layer k for every sample, row-major n × sizes[k].
    let mut acts: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; n * s]).collect();
    for (i, row) in features.iter().enumerate() {
        for j in 0..d {
            acts[0][i * d + j] = (row[j] - x_mean[j]) / x_std[j];
        }
    }
    let mut deltas: Vec<Vec<f64>> = sizes[1..].iter().map(|&s| vec![0.0; n * s]).collect();
    let mut grads_w: Vec<Vec<f64>> = (0..nl).map(|k| vec![0.0; sizes[k] * sizes[k + 1]]).collect();
    let mut grads_b: Vec<Vec<f64>> = (0..nl).map(|k| vec![0.0; sizes[k + 1]]).collect();
    let mut out = vec![0.0; n * n_out];

    let mut initial_loss = f64::NAN;
    let mut loss = f64::NAN;
    for epoch in 0..=cfg.epochs {
        // Forward.
        for k in 0..nl {
            let (fin, fout) = (sizes[k], sizes[k + 1]);
            let (head, tail) = acts.split_at_mut(k + 1);
            let input = &head[k];
            let dst: &mut Vec<f64> = if k + 1 < nl { &mut tail[0] } else { &mut out };
            let layer = &layers[k];
            for i in 0..n {
                let xi = &input[i * fin..(i + 1) * fin];
                for o in 0..fout {
                    let w = &layer.weights[o];
                    let mut z = layer.bias[o];
                    for (a, v) in w.iter().zip(xi) {
                        z += a * v;
                    }
                    dst[i * fout + o] = if k + 1 < nl { z.max(0.0) } else { z };
                }
            }
        }
        // Loss and output delta.
        let dl = &mut deltas[nl - 1];
        loss = 0.0;
        match target {
            MlpTarget::Regression(_) => {
                for i in 0..n {
                    let e = out[i] - y_std[i];
                    loss += e * e;
                    dl[i] = 2.0 * e / n as f64;
                }
                loss /= n as f64;
            }
            MlpTarget::Classification { labels, .. } => {
                for i in 0..n {
                    let z = &out[i * n_out..(i + 1) * n_out];
                    let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
                    let lse = zmax + sum.ln();
                    loss += lse - z[labels[i]];
                    for c in 0..n_out {
                        let p = (z[c] - lse).exp();
                        dl[i * n_out + c] = (p - if c == labels[i] { 1.0 } else { 0.0 }) / n as f64;
                    }
                }
                loss /= n as f64;
            }
        }
        if cfg.l2 > 0.0 {
            let sq: f64 = layers.iter().flat_map(|l| l.weights.iter().flatten()).map(|w| w * w).sum();
            loss += 0.5 * cfg.l2 * sq;
        }
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
        if epoch == 0 {
            initial_loss = loss;
        }
        if epoch == cfg.epochs {
            break;
        }
        // Backward.
        for k in (0..nl).rev() {
            let (fin, fout) = (sizes[k], sizes[k + 1]);
            let gw = &mut grads_w[k];
            let gb = &mut grads_b[k];
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            let input = &acts[k];
            {
                let delta = &deltas[k];
                for i in 0..n {
                    let xi = &input[i * fin..(i + 1) * fin];
                    for o in 0..fout {
                        let dv = delta[i * fout + o];
                        if dv == 0.0 {
                            continue;
                        }
                        gb[o] += dv;
                        let row = &mut gw[o * fin..(o + 1) * fin];
                        for (g, v) in row.iter_mut().zip(xi) {
                            *g += dv * v;
                        }
                    }
                }
            }
            if k > 0 {
                let (lo, hi) = deltas.split_at_mut(k);
                let delta = &hi[0];
                let prev = &mut lo[k - 1];
                let layer = &layers[k];
                for i in 0..n {
                    for j in 0..fin {
                        // ReLU derivative from the stored post-activation.
                        if input[i * fin + j] <= 0.0 {
                            prev[i * fin + j] = 0.0;
                            continue;
                        }
                        let mut s = 0.0;
                        for o in 0..fout {
                            s += layer.weights[o][j] * delta[i * fout + o];
                        }
                        prev[i * fin + j] = s;
                    }
                }
            }
        }
        let lr = cfg.learning_rate;
        for k in 0..nl {
            let fin = sizes[k];
            let layer = &mut layers[k];
            for (o, w) in layer.weights.iter_mut().enumerate() {
                for (j, a) in w.iter_mut().enumerate() {
                    *a -= lr * (grads_w[k][o * fin + j] + cfg.l2 * *a);
                }
                layer.bias[o] -= lr * grads_b[k][o];
            }
        }
    }
    // Fold the input and target standardization back into the first and
    // last layers. With zero epochs the seeded initialization is returned as is.
    if cfg.epochs > 0 {
        let first = &mut layers[0];
        for (w, b) in first.weights.iter_mut().zip(first.bias.iter_mut()) {
            for j in 0..d {
                w[j] /= x_std[j];
                *b -= w[j] * x_mean[j];
            }
        }
    }
    if matches!(target, MlpTarget::Regression(_)) && cfg.epochs > 0 {
        let last = layers.last_mut().unwrap();
        for w in last.weights[0].iter_mut() {
            *w *= std;
        }
        last.bias[0] = last.bias[0] * std + mean;
    }
    let model = Mlp::new(layers)?;
    Ok(MlpFit { model, initial_loss, final_loss: loss })
}
