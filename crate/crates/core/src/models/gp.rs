//! Gaussian process regression with an ARD squared-exponential kernel.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

const LOG_SCALE_BOUNDS: (f64, f64) = (-4.6, 6.9);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    /// Value added to the kernel diagonal.
    pub alpha: f64,
    pub seed: u64,
    /// Optimizer starts: the first at unit length scales, the rest random.
    pub restarts: usize,
    pub max_iter: usize,
    /// Larger training sets are thinned by a fixed stride.
    pub max_rows: usize,
    /// Skip length-scale learning and use these.
    pub fixed_length_scales: Option<Vec<f64>>,
}

impl GpParams {
    pub fn new(alpha: f64, seed: u64) -> Self {
        Self {
            alpha,
            seed,
            restarts: 3,
            max_iter: 40,
            max_rows: 256,
            fixed_length_scales: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub length_scales: Vec<f64>,
    pub alpha: f64,
    pub x: Matrix,
    /// `(K + αI)⁻¹ y` for the normalized targets.
    pub weights: Vec<f64>,
    /// Lower Cholesky factor of `K + αI`, row-major.
    pub chol: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    pub log_marginal_likelihood: f64,
    /// Likelihood after every accepted optimizer step of the winning start.
    pub lml_trace: Vec<f64>,
}

/// `exp(-½ Σ_d ((a_d - b_d)/ℓ_d)²)`
pub fn ard_kernel(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    let mut s = 0.0;
    for d in 0..a.len() {
        let z = (a[d] - b[d]) / ls[d];
        s += z * z;
    }
    (-0.5 * s).exp()
}

/// Gram matrix of `x` plus `alpha` on the diagonal, row-major.
pub fn gram(x: &Matrix, ls: &[f64], alpha: f64) -> Vec<f64> {
    let n = x.rows;
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0 + alpha;
        for j in 0..i {
            let v = ard_kernel(x.row(i), x.row(j), ls);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// In-place lower Cholesky factor; the upper triangle is zeroed.
pub(crate) fn cholesky(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Cholesky(format!("pivot {j} of {n} is {d:.3e}")));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L z = b` in place.
fn forward(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solves `Lᵀ z = b` in place.
fn backward(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

struct Eval {
    lml: f64,
    chol: Vec<f64>,
    weights: Vec<f64>,
}

fn evaluate(x: &Matrix, y: &[f64], ls: &[f64], alpha: f64) -> Result<Eval> {
    let n = x.rows;
    let mut l = gram(x, ls, alpha);
    cholesky(&mut l, n)?;
    let mut w = y.to_vec();
    forward(&l, n, &mut w);
    backward(&l, n, &mut w);
    let fit: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..n).map(|i| l[i * n + i].ln()).sum();
    let lml = -0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(Eval {
        lml,
        chol: l,
        weights: w,
    })
}

/// Gradient of the log marginal likelihood with respect to `ln ℓ_d`.
fn lml_gradient(x: &Matrix, ls: &[f64], e: &Eval) -> Vec<f64> {
    let n = x.rows;
    // K⁻¹ = L⁻ᵀ L⁻¹, column by column
    let mut kinv = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        forward(&e.chol, n, &mut col);
        backward(&e.chol, n, &mut col);
        for i in 0..n {
            kinv[i * n + j] = col[i];
        }
    }
    let mut g = vec![0.0; x.cols];
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (x.row(i), x.row(j));
            let kij = ard_kernel(a, b, ls);
            let w = e.weights[i] * e.weights[j] - kinv[i * n + j];
            for d in 0..x.cols {
                let z = (a[d] - b[d]) / ls[d];
                // symmetric pair counted twice, times the ½ of the trace
                g[d] += w * kij * z * z;
            }
        }
    }
    g
}

fn optimize(x: &Matrix, y: &[f64], alpha: f64, start: Vec<f64>, max_iter: usize) -> Option<(Vec<f64>, Eval, Vec<f64>)> {
    let mut theta = start;
    let to_ls = |t: &[f64]| t.iter().map(|v| v.exp()).collect::<Vec<_>>();
    let mut cur = evaluate(x, y, &to_ls(&theta), alpha).ok()?;
    let mut trace = vec![cur.lml];
    let mut step = 0.1;
    for _ in 0..max_iter {
        let g = lml_gradient(x, &to_ls(&theta), &cur);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-6 {
            break;
        }
        let mut accepted = false;
        for _ in 0..12 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&g)
                .map(|(t, gd)| (t + step * gd / norm).clamp(LOG_SCALE_BOUNDS.0, LOG_SCALE_BOUNDS.1))
                .collect();
            if let Ok(e) = evaluate(x, y, &to_ls(&cand), alpha) {
                if e.lml > cur.lml {
                    theta = cand;
                    cur = e;
                    trace.push(cur.lml);
                    accepted = true;
                    step = (step * 2.0).min(2.0);
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted || trace.len() >= 2 && trace[trace.len() - 1] - trace[trace.len() - 2] < 1e-9 {
            break;
        }
    }
    Some((theta, cur, trace))
}

/// Fits the GP, learning one length scale per feature by multi-start
/// gradient ascent on the log marginal likelihood of the normalized targets.
pub fn gp_fit(x: &Matrix, y: &[f64], p: &GpParams) -> Result<GpModel> {
    if x.rows != y.len() {
        return Err(Error::Shape(format!("{} rows but {} targets", x.rows, y.len())));
    }
    if x.rows == 0 {
        return Err(Error::InsufficientData("GP given no rows".into()));
    }
    if !(p.alpha > 0.0) {
        return Err(Error::Config(format!("GP alpha must be positive, got {}", p.alpha)));
    }
    let (x, y) = if x.rows > p.max_rows {
        let idx: Vec<usize> = (0..p.max_rows).map(|i| i * x.rows / p.max_rows).collect();
        (x.select_rows(&idx), idx.iter().map(|&i| y[i]).collect::<Vec<_>>())
    } else {
        (x.clone(), y.to_vec())
    };
    let n = y.len() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
    let y_std = if sd > 0.0 { sd } else { 1.0 };
    let yn: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

    let (theta, eval, trace) = if let Some(ls) = &p.fixed_length_scales {
        if ls.len() != x.cols || ls.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("fixed length scales must be positive, one per feature".into()));
        }
        let e = evaluate(&x, &yn, ls, p.alpha)?;
        let lml = e.lml;
        (ls.iter().map(|v| v.ln()).collect(), e, vec![lml])
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let mut best: Option<(Vec<f64>, Eval, Vec<f64>)> = None;
        for r in 0..p.restarts.max(1) {
            let start: Vec<f64> = if r == 0 {
                vec![0.0; x.cols]
            } else {
                (0..x.cols).map(|_| rng.random_range(-2.3..2.3)).collect()
            };
            if let Some(res) = optimize(&x, &yn, p.alpha, start, p.max_iter) {
                if best.as_ref().is_none_or(|b| res.1.lml > b.1.lml) {
                    best = Some(res);
                }
            }
        }
        match best {
            Some(b) => b,
            None => {
                // surface the factorization error of the default start
                evaluate(&x, &yn, &vec![1.0; x.cols], p.alpha)?;
                return Err(Error::Cholesky("no optimizer start was positive definite".into()));
            }
        }
    };
    Ok(GpModel {
        length_scales: theta.iter().map(|v| v.exp()).collect(),
        alpha: p.alpha,
        x,
        weights: eval.weights,
        chol: eval.chol,
        y_mean,
        y_std,
        log_marginal_likelihood: eval.lml,
        lml_trace: trace,
    })
}

impl GpModel {
    /// Posterior mean and variance of the latent function, in target units.
    pub fn predict(&self, xs: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        if xs.cols != self.x.cols {
            return Err(Error::Shape(format!("GP expects {} features, got {}", self.x.cols, xs.cols)));
        }
        let n = self.x.rows;
        let mut mean = Vec::with_capacity(xs.rows);
        let mut var = Vec::with_capacity(xs.rows);
        let mut k = vec![0.0; n];
        for r in 0..xs.rows {
            let q = xs.row(r);
            for i in 0..n {
                k[i] = ard_kernel(self.x.row(i), q, &self.length_scales);
            }
            let m: f64 = k.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
            mean.push(self.y_mean + self.y_std * m);
            forward(&self.chol, n, &mut k);
            let v = 1.0 - k.iter().map(|a| a * a).sum::<f64>();
            var.push(v.max(0.0) * self.y_std * self.y_std);
        }
        Ok((mean, var))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn data() -> (Matrix, Vec<f64>) {
        let x = Matrix::new(5, 2, vec![0.0, 0.0, 1.0, 0.5, 2.0, -1.0, -1.5, 0.3, 0.7, 2.2]).unwrap();
        (x, vec![60.0, 64.0, 71.0, 58.0, 66.0])
    }

    #[test]
    fn matches_dense_inverse() {
        let (x, y) = data();
        let m = gp_fit(&x, &y, &GpParams::new(1e-3, 1)).unwrap();
        let k = DMatrix::from_row_slice(5, 5, &gram(&x, &m.length_scales, 1e-3));
        let inv = k.try_inverse().unwrap();
        let yn = DVector::from_iterator(5, y.iter().map(|v| (v - m.y_mean) / m.y_std));
        let q = Matrix::new(2, 2, vec![0.3, 0.1, -0.4, 1.0]).unwrap();
        let (mean, var) = m.predict(&q).unwrap();
        for r in 0..2 {
            let ks = DVector::from_iterator(5, (0..5).map(|i| ard_kernel(x.row(i), q.row(r), &m.length_scales)));
            let mu = m.y_mean + m.y_std * (ks.transpose() * &inv * &yn)[0];
            let s2 = (1.0 - (ks.transpose() * &inv * &ks)[0]) * m.y_std * m.y_std;
            assert!((mean[r] - mu).abs() < 1e-8);
            assert!((var[r] - s2).abs() < 1e-8);
        }
    }

    #[test]
    fn interpolates_with_tiny_alpha() {
        let (x, y) = data();
        let mut p = GpParams::new(1e-10, 0);
        p.fixed_length_scales = Some(vec![0.5, 0.5]);
        let m = gp_fit(&x, &y, &p).unwrap();
        let (mean, _) = m.predict(&x).unwrap();
        for (a, b) in mean.iter().zip(&y) {
            assert!((a - b).abs() < 1e-6, "{a} {b}");
        }
    }

    #[test]
    fn far_point_reverts_to_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::new(30, 1, (0..30).map(|i| i as f64 * 0.1).collect()).unwrap();
        let y: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = gp_fit(&x, &y, &GpParams::new(1.0, 0)).unwrap();
        let (_, var) = m.predict(&Matrix::new(1, 1, vec![1e4]).unwrap()).unwrap();
        let prior = m.y_std * m.y_std;
        assert!((var[0] - prior).abs() <= 0.05 * prior);
    }

    #[test]
    fn lml_trace_never_decreases() {
        let x = Matrix::new(40, 2, (0..80).map(|v| ((v * 13) % 29) as f64 / 7.0).collect()).unwrap();
        let y: Vec<f64> = (0..40).map(|i| (x.row(i)[0]).sin() * 10.0 + 70.0).collect();
        let m = gp_fit(&x, &y, &GpParams::new(1e-3, 2)).unwrap();
        assert!(m.lml_trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(m.lml_trace.len() > 1);
        assert_eq!(*m.lml_trace.last().unwrap(), m.log_marginal_likelihood);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let (x, y) = data();
        let ls = [0.8, 1.7];
        let e = evaluate(&x, &y, &ls, 0.01).unwrap();
        let g = lml_gradient(&x, &ls, &e);
        for d in 0..2 {
            let h: f64 = 1e-5;
            let mut up = ls;
            up[d] *= h.exp();
            let mut dn = ls;
            dn[d] *= (-h).exp();
            let fd = (evaluate(&x, &y, &up, 0.01).unwrap().lml - evaluate(&x, &y, &dn, 0.01).unwrap().lml) / (2.0 * h);
            assert!((g[d] - fd).abs() < 1e-6 * fd.abs().max(1.0), "{} vs {fd}", g[d]);
        }
    }

    #[test]
    fn singular_kernel_reports_cholesky() {
        let x = Matrix::new(3, 1, vec![1.0, 1.0, 1.0]).unwrap();
        let mut p = GpParams::new(1e-300, 0);
        p.fixed_length_scales = Some(vec![1.0]);
        let err = gp_fit(&x, &[1.0, 2.0, 3.0], &p).unwrap_err();
        assert!(matches!(err, Error::Cholesky(_)));
        assert!(err.to_string().contains("alpha"));
    }
}
