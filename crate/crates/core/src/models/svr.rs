//! ε-support vector regression solved in the dual with SMO.

use std::collections::HashMap;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::kernel::KernelSpec;
use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: KernelSpec,
    /// Stop when the maximal KKT violation falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Kernel row cache budget in megabytes.
    pub cache_mb: usize,
}

impl SvrParams {
    pub fn new(c: f64, epsilon: f64, kernel: KernelSpec) -> Self {
        Self {
            c,
            epsilon,
            kernel,
            tol: 1e-3,
            max_iter: 100_000,
            cache_mb: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.c > 0.0 && self.c.is_finite()) || !(self.epsilon >= 0.0) || !(self.tol > 0.0) {
            return Err(Error::Config(format!("invalid SVR parameters C={} epsilon={}", self.c, self.epsilon)));
        }
        Ok(())
    }
}

/// Fitted SVR: `f(x) = Σ coef_i K(sv_i, x) - rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub kernel: KernelSpec,
    pub support: Matrix,
    /// `α_i - α*_i` of each support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    /// Dual objective `½ αᵀQα + pᵀα` at the returned point.
    pub objective: f64,
    pub iterations: usize,
    /// Maximal KKT violation at the returned point.
    pub gap: f64,
}

impl SvrModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut s = -self.rho;
        for (i, c) in self.coef.iter().enumerate() {
            s += c * self.kernel.eval(self.support.row(i), x);
        }
        s
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows).map(|i| self.predict_row(x.row(i))).collect()
    }
}

/// FIFO cache of kernel rows.
struct RowCache<'a> {
    x: &'a Matrix,
    kernel: KernelSpec,
    rows: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> RowCache<'a> {
    fn new(x: &'a Matrix, kernel: KernelSpec, cache_mb: usize) -> Self {
        let per_row = (x.rows * 8).max(1);
        let capacity = ((cache_mb << 20) / per_row).max(2);
        Self {
            x,
            kernel,
            rows: HashMap::new(),
            order: VecDeque::new(),
            capacity,
        }
    }

    fn get(&mut self, i: usize) -> &[f64] {
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.rows.remove(&old);
                }
            }
            let xi = self.x.row(i);
            let row = (0..self.x.rows).map(|j| self.kernel.eval(xi, self.x.row(j))).collect();
            self.rows.insert(i, row);
            self.order.push_back(i);
        }
        &self.rows[&i]
    }
}

/// Solves the ε-SVR dual
///
/// `min ½ αᵀQα + pᵀα` s.t. `yᵀα = 0`, `0 ≤ α ≤ C`
///
/// over `2n` variables (`α` then `α*`) with `y = (+1, -1)`,
/// `p = (ε - t, ε + t)` and `Q_ij = y_i y_j K(x_i, x_j)`. The working pair is
/// the maximal KKT violator. On running out of iterations the error carries
/// the last iterate.
pub fn svr_fit(x: &Matrix, target: &[f64], params: &SvrParams) -> Result<SvrModel> {
    params.validate()?;
    let n = x.rows;
    if n != target.len() {
        return Err(Error::Shape(format!("{n} rows but {} targets", target.len())));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("SVR needs at least 2 rows, got {n}")));
    }
    let l = 2 * n;
    let c = params.c;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let p: Vec<f64> = (0..l)
        .map(|t| if t < n { params.epsilon - target[t] } else { params.epsilon + target[t - n] })
        .collect();
    let mut alpha = vec![0.0; l];
    let mut grad = p.clone();
    let mut cache = RowCache::new(x, params.kernel, params.cache_mb);
    let diag: Vec<f64> = (0..n).map(|i| params.kernel.eval(x.row(i), x.row(i))).collect();

    let is_up = |a: f64, y: f64| if y > 0.0 { a < c } else { a > 0.0 };
    let is_low = |a: f64, y: f64| if y > 0.0 { a > 0.0 } else { a < c };

    let mut iter = 0;
    let mut gap;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..l {
            let y = sign(t);
            let v = -y * grad[t];
            if is_up(alpha[t], y) && v > gmax {
                gmax = v;
                i = t;
            }
            if is_low(alpha[t], y) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap < params.tol {
            break;
        }
        if iter >= params.max_iter {
            let best = finish(x, &alpha, &grad, &p, params, iter, gap);
            return Err(Error::Convergence {
                iterations: iter,
                gap,
                best: Box::new(best),
            });
        }
        iter += 1;

        let (bi, bj) = (i % n, j % n);
        let (yi, yj) = (sign(i), sign(j));
        let kij = cache.get(bi)[bj];
        let qii = diag[bi];
        let qjj = diag[bj];
        let qij = yi * yj * kij;
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        // two-variable subproblem, clipped to the box (libsvm update rules)
        if yi != yj {
            let quad = (qii + qjj + 2.0 * qij).max(1e-12);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(1e-12);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        if di == 0.0 && dj == 0.0 {
            continue;
        }
        // G_t += Q_ti Δα_i + Q_tj Δα_j, with Q_ti = y_t y_i K(t mod n, i mod n)
        let ki: Vec<f64> = cache.get(bi).to_vec();
        let kj = cache.get(bj);
        let (si, sj) = (yi * di, yj * dj);
        for b in 0..n {
            let u = si * ki[b] + sj * kj[b];
            grad[b] += u;
            grad[b + n] -= u;
        }
    }
    Ok(finish(x, &alpha, &grad, &p, params, iter, gap))
}

fn finish(x: &Matrix, alpha: &[f64], grad: &[f64], p: &[f64], params: &SvrParams, iterations: usize, gap: f64) -> SvrModel {
    let n = x.rows;
    let c = params.c;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..2 * n {
        let y = sign(t);
        let yg = y * grad[t];
        if alpha[t] >= c {
            if y < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    let objective = 0.5 * alpha.iter().zip(grad).zip(p).map(|((a, g), p)| a * (g + p)).sum::<f64>();

    let mut sv = Vec::new();
    let mut coef = Vec::new();
    for i in 0..n {
        let b = alpha[i] - alpha[i + n];
        if b != 0.0 {
            sv.push(i);
            coef.push(b);
        }
    }
    SvrModel {
        kernel: params.kernel,
        support: x.select_rows(&sv),
        coef,
        rho,
        objective,
        iterations,
        gap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> (Matrix, Vec<f64>) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 * 4.0 - 2.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin() * 3.0).collect();
        (Matrix::new(n, 1, x).unwrap(), y)
    }

    #[test]
    fn constant_target_predicts_within_epsilon() {
        let (x, _) = line(15);
        for kernel in [KernelSpec::Rbf { gamma: 1.0 }, KernelSpec::Poly { gamma: 0.5, degree: 3 }] {
            let m = svr_fit(&x, &vec![7.0; 15], &SvrParams::new(10.0, 0.1, kernel)).unwrap();
            for p in m.predict(&x) {
                assert!((p - 7.0).abs() <= 0.1 + 1e-9, "{p}");
            }
        }
    }

    #[test]
    fn dual_is_feasible() {
        let (x, y) = line(30);
        let params = SvrParams::new(1.0, 0.1, KernelSpec::Rbf { gamma: 1.0 });
        let m = svr_fit(&x, &y, &params).unwrap();
        assert!(m.coef.iter().all(|c| c.abs() <= 1.0 + 1e-12));
        assert!(m.coef.iter().sum::<f64>().abs() < 1e-9);
        assert!(m.gap < 1e-3);
    }

    #[test]
    fn fits_a_smooth_curve() {
        let (x, y) = line(40);
        let m = svr_fit(&x, &y, &SvrParams::new(100.0, 0.01, KernelSpec::Rbf { gamma: 2.0 })).unwrap();
        for (p, t) in m.predict(&x).iter().zip(&y) {
            assert!((p - t).abs() < 0.05, "{p} vs {t}");
        }
    }

    #[test]
    fn iteration_budget_reports_best_iterate() {
        let (x, y) = line(40);
        let mut params = SvrParams::new(100.0, 0.01, KernelSpec::Rbf { gamma: 2.0 });
        params.max_iter = 3;
        match svr_fit(&x, &y, &params) {
            Err(Error::Convergence { iterations, best, .. }) => {
                assert_eq!(iterations, 3);
                assert!(!best.coef.is_empty());
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn tiny_cache_gives_same_answer() {
        let (x, y) = line(25);
        let mut params = SvrParams::new(10.0, 0.05, KernelSpec::Rbf { gamma: 1.0 });
        let a = svr_fit(&x, &y, &params).unwrap();
        params.cache_mb = 0;
        let b = svr_fit(&x, &y, &params).unwrap();
        assert_eq!(a, b);
    }
}
