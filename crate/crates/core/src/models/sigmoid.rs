//! Logistic-output regression: `σ(wᵀx + b)` fitted to min-max scaled targets.

use serde::{Deserialize, Serialize};

use super::{Matrix, Penalty};
use crate::error::{Error, Result};

/// Targets are mapped linearly onto `[LOW, HIGH]` before fitting.
pub const LOW: f64 = 0.05;
pub const HIGH: f64 = 0.95;
/// l1 share of the elastic-net penalty.
pub const L1_RATIO: f64 = 0.5;

const MAX_ITER: usize = 3000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmoidModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub iterations: usize,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl SigmoidModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let z = self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        self.y_min + (sigmoid(z) - LOW) / (HIGH - LOW) * (self.y_max - self.y_min)
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows).map(|i| self.predict_row(x.row(i))).collect()
    }
}

struct Problem<'a> {
    x: &'a Matrix,
    t: Vec<f64>,
    l1: f64,
    l2: f64,
}

impl Problem<'_> {
    /// Smooth part: `½ Σ (σ - t)² + ½ l2 ‖w‖²`; parameters are `[w.., b]`.
    fn smooth(&self, p: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = self.x.cols;
        let (w, b) = (&p[..d], p[d]);
        let mut f = 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>();
        let mut g = grad;
        if let Some(g) = g.as_deref_mut() {
            for k in 0..d {
                g[k] = self.l2 * w[k];
            }
            g[d] = 0.0;
        }
        for i in 0..self.x.rows {
            let row = self.x.row(i);
            let s = sigmoid(b + w.iter().zip(row).map(|(a, c)| a * c).sum::<f64>());
            let r = s - self.t[i];
            f += 0.5 * r * r;
            if let Some(g) = g.as_deref_mut() {
                let u = r * s * (1.0 - s);
                for k in 0..d {
                    g[k] += u * row[k];
                }
                g[d] += u;
            }
        }
        f
    }

    fn objective(&self, p: &[f64]) -> f64 {
        self.smooth(p, None) + self.l1 * p[..self.x.cols].iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Gradient step followed by soft thresholding of the weights.
    fn prox_step(&self, y: &[f64], g: &[f64], lip: f64) -> Vec<f64> {
        let d = self.x.cols;
        let mut z: Vec<f64> = y.iter().zip(g).map(|(a, b)| a - b / lip).collect();
        let thr = self.l1 / lip;
        for v in &mut z[..d] {
            *v = v.signum() * (v.abs() - thr).max(0.0);
        }
        z
    }
}

/// Minimizes `½ Σ (σ(wᵀx_i + b) - t_i)² + P(w) / C` by accelerated
/// proximal gradient with backtracking. `P` is `‖w‖₁`, `½‖w‖²` or their
/// equal-weight mix.
pub fn sigmoid_lr_fit(x: &Matrix, y: &[f64], c: f64, penalty: Penalty) -> Result<SigmoidModel> {
    if x.rows != y.len() {
        return Err(Error::Shape(format!("{} rows but {} targets", x.rows, y.len())));
    }
    if x.rows == 0 {
        return Err(Error::InsufficientData("logistic regression given no rows".into()));
    }
    if !(c > 0.0) {
        return Err(Error::Config(format!("C must be positive, got {c}")));
    }
    let y_min = y.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(y_max > y_min) {
        return Err(Error::DegenerateTarget(format!("training target is constant at {y_min}")));
    }
    let t: Vec<f64> = y.iter().map(|v| LOW + (HIGH - LOW) * (v - y_min) / (y_max - y_min)).collect();
    let lambda = 1.0 / c;
    let (l1, l2) = match penalty {
        Penalty::L1 => (lambda, 0.0),
        Penalty::L2 => (0.0, lambda),
        Penalty::ElasticNet => (L1_RATIO * lambda, (1.0 - L1_RATIO) * lambda),
    };
    let d = x.cols;
    let mean_t = t.iter().sum::<f64>() / t.len() as f64;
    let mut p = vec![0.0; d + 1];
    p[d] = (mean_t / (1.0 - mean_t)).ln();
    let prob = Problem { x, t, l1, l2 };

    let mut obj = prob.objective(&p);
    let mut yk = p.clone();
    let mut tk: f64 = 1.0;
    let mut lip = 1.0;
    let mut g = vec![0.0; d + 1];
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let fy = prob.smooth(&yk, Some(&mut g));
        let z = loop {
            let z = prob.prox_step(&yk, &g, lip);
            let diff: Vec<f64> = z.iter().zip(&yk).map(|(a, b)| a - b).collect();
            let bound = fy
                + g.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>()
                + 0.5 * lip * diff.iter().map(|v| v * v).sum::<f64>();
            if prob.smooth(&z, None) <= bound + 1e-12 * bound.abs() || lip > 1e12 {
                break z;
            }
            lip *= 2.0;
        };
        let new_obj = prob.objective(&z);
        if new_obj > obj {
            // momentum overshot: restart from the last iterate
            yk = p.clone();
            tk = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let mom = (tk - 1.0) / t_next;
        let moved: f64 = z.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        yk = z.iter().zip(&p).map(|(a, b)| a + mom * (a - b)).collect();
        let rel = (obj - new_obj) / obj.abs().max(1e-12);
        p = z;
        obj = new_obj;
        tk = t_next;
        lip = (lip * 0.9).max(1e-6);
        if moved < 1e-10 || (rel >= 0.0 && rel < 1e-12) {
            break;
        }
    }
    Ok(SigmoidModel {
        weights: p[..d].to_vec(),
        bias: p[d],
        y_min,
        y_max,
        iterations,
    })
}
