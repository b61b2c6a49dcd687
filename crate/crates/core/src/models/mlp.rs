//! Fully connected ReLU network with a linear output, trained with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without a better validation MAE before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
}

impl MlpParams {
    pub fn new(hidden: Vec<usize>, learning_rate: f64, seed: u64) -> Self {
        Self {
            hidden,
            learning_rate,
            seed,
            epochs: 200,
            batch_size: 32,
            patience: 20,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

/// `out = W·in + b`, `w` row-major `n_out × n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    /// Targets are standardized internally; predictions are mapped back.
    pub y_mean: f64,
    pub y_std: f64,
    pub epochs_run: usize,
    pub best_val_mae: f64,
}

impl MlpModel {
    /// He-initialized network with zero biases and unit target scaling.
    pub fn init(n_in: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|s| {
                let normal = Normal::new(0.0, (2.0 / s[0].max(1) as f64).sqrt()).unwrap();
                Layer {
                    n_in: s[0],
                    n_out: s[1],
                    w: (0..s[0] * s[1]).map(|_| normal.sample(&mut rng)).collect(),
                    b: vec![0.0; s[1]],
                }
            })
            .collect();
        Self {
            layers,
            y_mean: 0.0,
            y_std: 1.0,
            epochs_run: 0,
            best_val_mae: f64::NAN,
        }
    }

    /// Output in standardized units, keeping every layer's activations.
    fn forward(&self, x: &[f64], acts: &mut Vec<Vec<f64>>) -> f64 {
        acts.clear();
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let input = &acts[li];
            let mut out = l.b.clone();
            for o in 0..l.n_out {
                let row = &l.w[o * l.n_in..(o + 1) * l.n_in];
                out[o] += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                if li != last {
                    out[o] = out[o].max(0.0);
                }
            }
            acts.push(out);
        }
        acts[acts.len() - 1][0]
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut acts = Vec::new();
        self.y_mean + self.y_std * self.forward(x, &mut acts)
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let mut acts = Vec::new();
        (0..x.rows)
            .map(|i| self.y_mean + self.y_std * self.forward(x.row(i), &mut acts))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&p[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[at..at + nb]);
            at += nb;
        }
    }

    /// Half mean squared error on standardized targets `t` over the rows
    /// `rows` of `x`, with its gradient in [`params`](Self::params) order.
    pub fn loss_and_gradient(&self, x: &Matrix, t: &[f64], rows: &[usize]) -> (f64, Vec<f64>) {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> =
            self.layers.iter().map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()])).collect();
        let mut acts = Vec::new();
        let mut loss = 0.0;
        let scale = 1.0 / rows.len() as f64;
        for &r in rows {
            let out = self.forward(x.row(r), &mut acts);
            let err = out - t[r];
            loss += 0.5 * err * err * scale;
            let mut delta = vec![err * scale];
            for li in (0..self.layers.len()).rev() {
                let l = &self.layers[li];
                let input = &acts[li];
                let (gw, gb) = &mut grads[li];
                for o in 0..l.n_out {
                    gb[o] += delta[o];
                    for i in 0..l.n_in {
                        gw[o * l.n_in + i] += delta[o] * input[i];
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; l.n_in];
                    for i in 0..l.n_in {
                        if input[i] > 0.0 {
                            prev[i] = (0..l.n_out).map(|o| l.w[o * l.n_in + i] * delta[o]).sum();
                        }
                    }
                    delta = prev;
                }
            }
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        (loss, flat)
    }
}

fn mae(model: &MlpModel, x: &Matrix, y: &[f64], rows: &[usize]) -> f64 {
    rows.iter().map(|&r| (model.predict_row(x.row(r)) - y[r]).abs()).sum::<f64>() / rows.len() as f64
}

/// Trains with Adam on mini-batches, keeping the weights of the epoch with
/// the lowest validation MAE. Without a validation set every tenth training
/// row is held out for early stopping instead.
pub fn mlp_fit(x: &Matrix, y: &[f64], validation: Option<(&Matrix, &[f64])>, p: &MlpParams) -> Result<MlpModel> {
    if x.rows != y.len() {
        return Err(Error::Shape(format!("{} rows but {} targets", x.rows, y.len())));
    }
    if x.rows < 2 {
        return Err(Error::InsufficientData(format!("MLP needs at least 2 rows, got {}", x.rows)));
    }
    if p.hidden.is_empty() || p.hidden.contains(&0) || !(p.learning_rate > 0.0) || p.batch_size == 0 {
        return Err(Error::Config("invalid MLP parameters".into()));
    }
    if let Some((vx, vy)) = validation {
        if vx.cols != x.cols || vx.rows != vy.len() {
            return Err(Error::Shape("validation set does not match the training layout".into()));
        }
    }

    let (mut train_rows, holdout): (Vec<usize>, Vec<usize>) = if validation.is_none() && x.rows >= 20 {
        (0..x.rows).partition(|i| i % 10 != 9)
    } else {
        ((0..x.rows).collect(), Vec::new())
    };
    let n = train_rows.len() as f64;
    let y_mean = train_rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    let sd = (train_rows.iter().map(|&i| (y[i] - y_mean).powi(2)).sum::<f64>() / n).sqrt();
    let y_std = if sd > 0.0 { sd } else { 1.0 };
    let t: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

    let mut model = MlpModel::init(x.cols, &p.hidden, p.seed);
    model.y_mean = y_mean;
    model.y_std = y_std;
    let check_rows = if holdout.is_empty() { train_rows.clone() } else { holdout };
    let val_mae = |m: &MlpModel| match validation {
        Some((vx, vy)) if vx.rows > 0 => mae(m, vx, vy, &(0..vx.rows).collect::<Vec<_>>()),
        _ => mae(m, x, y, &check_rows),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    rng.set_stream(1);
    let np = model.n_params();
    let (mut m1, mut m2) = (vec![0.0; np], vec![0.0; np]);
    let mut theta = model.params();
    let mut step = 0i32;
    let mut best = (val_mae(&model), theta.clone(), 0usize);
    let mut since_best = 0;
    let mut epochs_run = 0;
    for epoch in 0..p.epochs {
        train_rows.shuffle(&mut rng);
        for batch in train_rows.chunks(p.batch_size) {
            let (loss, g) = model.loss_and_gradient(x, &t, batch);
            if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!("MLP loss diverged at epoch {epoch}")));
            }
            step += 1;
            let c1 = 1.0 - p.beta1.powi(step);
            let c2 = 1.0 - p.beta2.powi(step);
            for k in 0..np {
                m1[k] = p.beta1 * m1[k] + (1.0 - p.beta1) * g[k];
                m2[k] = p.beta2 * m2[k] + (1.0 - p.beta2) * g[k] * g[k];
                theta[k] -= p.learning_rate * (m1[k] / c1) / ((m2[k] / c2).sqrt() + 1e-8);
            }
            model.set_params(&theta);
        }
        epochs_run = epoch + 1;
        let v = val_mae(&model);
        if !v.is_finite() {
            return Err(Error::Training(format!("MLP predictions diverged at epoch {epoch}")));
        }
        if v < best.0 {
            best = (v, theta.clone(), epochs_run);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= p.patience {
                break;
            }
        }
    }
    model.set_params(&best.1);
    model.epochs_run = epochs_run;
    model.best_val_mae = best.0;
    Ok(model)
}
