//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use hrcal::io::SessionRecord;
use hrcal::models::{KernelSpec, Matrix};
use hrcal::signal::{align_to_grid, ecg_to_smoothed_hr, ExtractionConfig};
use hrcal::synth::GroundTruth;

/// Dense ε-SVR dual solved by accelerated projected gradient.
pub struct DualSolution {
    /// `α_i - α*_i`
    pub coef: Vec<f64>,
    pub rho: f64,
    pub objective: f64,
}

/// Projects `v` onto `{0 ≤ a ≤ c, Σ s_i a_i = 0}` (`s_i = ±1`) by bisection
/// on the multiplier of the equality constraint.
fn project(v: &[f64], s: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> { v.iter().zip(s).map(|(x, y)| (x - lam * y).clamp(0.0, c)).collect() };
    let h = |lam: f64| at(lam).iter().zip(s).map(|(a, y)| a * y).sum::<f64>();
    let (mut lo, mut hi) = (-1.0, 1.0);
    while h(lo) < 0.0 {
        lo *= 2.0;
    }
    while h(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

pub fn svr_dual_oracle(x: &Matrix, t: &[f64], c: f64, eps: f64, kernel: KernelSpec, iters: usize) -> DualSolution {
    let n = x.rows;
    let l = 2 * n;
    let s: Vec<f64> = (0..l).map(|i| if i < n { 1.0 } else { -1.0 }).collect();
    let p: Vec<f64> = (0..l).map(|i| if i < n { eps - t[i] } else { eps + t[i - n] }).collect();
    let k: Vec<f64> = (0..n * n).map(|ij| kernel.eval(x.row(ij / n), x.row(ij % n))).collect();
    let q = |i: usize, j: usize| s[i] * s[j] * k[(i % n) * n + j % n];
    // Lipschitz constant of the gradient: largest eigenvalue of Q by power iteration
    let mut v = vec![1.0; l];
    let mut lip = 1.0;
    for _ in 0..500 {
        let w: Vec<f64> = (0..l).map(|i| (0..l).map(|j| q(i, j) * v[j]).sum()).collect();
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lip = norm / v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v = w.iter().map(|a| a / norm).collect();
    }
    lip *= 1.01;
    let grad = |a: &[f64]| -> Vec<f64> { (0..l).map(|i| (0..l).map(|j| q(i, j) * a[j]).sum::<f64>() + p[i]).collect() };
    let obj = |a: &[f64]| -> f64 {
        let g = grad(a);
        0.5 * a.iter().zip(&g).zip(&p).map(|((ai, gi), pi)| ai * (gi + pi)).sum::<f64>()
    };

    let mut a = vec![0.0; l];
    let mut y = a.clone();
    let mut tk: f64 = 1.0;
    for _ in 0..iters {
        let g = grad(&y);
        let step: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - gi / lip).collect();
        let next = project(&step, &s, c);
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        y = next.iter().zip(&a).map(|(n1, a1)| n1 + (tk - 1.0) / tn * (n1 - a1)).collect();
        if obj(&next) > obj(&a) {
            y = a.clone();
            tk = 1.0;
            continue;
        }
        a = next;
        tk = tn;
    }

    let g = grad(&a);
    let tol = 1e-8 * c.max(1.0);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum, mut nf) = (0.0, 0);
    for i in 0..l {
        let yg = s[i] * g[i];
        if a[i] >= c - tol {
            if s[i] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if a[i] <= tol {
            if s[i] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            sum += yg;
            nf += 1;
        }
    }
    let rho = if nf > 0 { sum / nf as f64 } else { 0.5 * (ub + lb) };
    DualSolution {
        coef: (0..n).map(|i| a[i] - a[i + n]).collect(),
        rho,
        objective: obj(&a),
    }
}

impl DualSolution {
    pub fn predict(&self, x: &Matrix, kernel: KernelSpec, q: &[f64]) -> f64 {
        (0..x.rows).map(|i| self.coef[i] * kernel.eval(x.row(i), q)).sum::<f64>() - self.rho
    }
}

/// Two-sided permutation p-value of the squared Pearson correlation.
pub fn permutation_p(x: &[f64], y: &[f64], draws: usize, seed: u64) -> f64 {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let r2 = |y: &[f64]| {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy * sxy / (sxx * syy)
    };
    let obs = r2(y);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut perm = y.to_vec();
    let mut hits = 0;
    for _ in 0..draws {
        perm.shuffle(&mut rng);
        if r2(&perm) >= obs - 1e-12 {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

/// Grid-aligned extraction error against the generator truth, skipping
/// 10 s on either side of every state or speed change.
pub fn extraction_mae(session: &SessionRecord, truth: &GroundTruth) -> f64 {
    let hr = ecg_to_smoothed_hr(&session.ecg, session.fs_ecg, &ExtractionConfig::default()).unwrap();
    let g = align_to_grid(&hr, 15.0, 2.5);
    let mut sum = 0.0;
    let mut n = 0;
    for (t, b) in g.iter() {
        if truth.transitions.iter().any(|&x| (t - x).abs() <= 10.0) {
            continue;
        }
        sum += (b - truth.hr_at(t)).abs();
        n += 1;
    }
    sum / n as f64
}
