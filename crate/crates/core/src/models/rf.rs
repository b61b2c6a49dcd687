//! Random forest of variance-reduction regression trees.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub max_features: usize,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Train each tree on a bootstrap resample (otherwise on all rows).
    pub bootstrap: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Flat tree; node 0 is the root. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let first = self.trees[0].predict_row(x);
        let mut sum = first;
        let mut same = true;
        for t in &self.trees[1..] {
            let p = t.predict_row(x);
            same &= p == first;
            sum += p;
        }
        if same {
            first
        } else {
            sum / self.trees.len() as f64
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows).map(|i| self.predict_row(x.row(i))).collect()
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    p: &'a RfParams,
    nodes: Vec<Node>,
}

fn leaf_value(y: &[f64], idx: &[usize]) -> f64 {
    let first = y[idx[0]];
    if idx.iter().all(|&i| y[i] == first) {
        return first;
    }
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(leaf_value(self.y, idx)));
        let n = idx.len();
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        if depth >= self.p.max_depth || n < self.p.min_samples_split || n < 2 * self.p.min_samples_leaf || pure {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(idx, rng) else {
            return at;
        };
        let mut k = 0;
        for j in 0..n {
            if self.x.row(idx[j])[feature] <= threshold {
                idx.swap(j, k);
                k += 1;
            }
        }
        let (l, r) = idx.split_at_mut(k);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }

    /// Exhaustive search over midpoints of sorted distinct values of the
    /// candidate features; maximizes the drop in squared error.
    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let cols = self.x.cols;
        let m = self.p.max_features.min(cols);
        let mut features = sample(rng, cols, m).into_vec();
        features.sort_unstable();
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let parent = total * total / n as f64;
        let leaf = self.p.min_samples_leaf;

        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<(f64, f64)> = Vec::with_capacity(n);
        for f in features {
            order.clear();
            order.extend(idx.iter().map(|&i| (self.x.row(i)[f], self.y[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for s in 0..n - 1 {
                left_sum += order[s].1;
                let nl = s + 1;
                if nl < leaf || n - nl < leaf || order[s].0 == order[s + 1].0 {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / (n - nl) as f64 - parent;
                if best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, 0.5 * (order[s].0 + order[s + 1].0)));
                }
            }
        }
        best.filter(|b| b.0 > 1e-12 * parent.abs().max(1.0)).map(|b| (b.1, b.2))
    }
}

pub fn rf_fit(x: &Matrix, y: &[f64], p: &RfParams) -> Result<Forest> {
    if x.rows != y.len() {
        return Err(Error::Shape(format!("{} rows but {} targets", x.rows, y.len())));
    }
    if x.rows == 0 || x.rows < p.min_samples_split.min(2) {
        return Err(Error::InsufficientData(format!("forest given {} rows", x.rows)));
    }
    if p.n_estimators == 0 || p.max_features == 0 || p.min_samples_leaf == 0 {
        return Err(Error::Config("forest sizes must be positive".into()));
    }
    let n = x.rows;
    let trees = (0..p.n_estimators)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            rng.set_stream(t as u64);
            let mut idx: Vec<usize> = if p.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                x,
                y,
                p,
                nodes: Vec::new(),
            };
            b.build(&mut idx, 0, &mut rng);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(Forest { trees })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n_estimators: usize, max_depth: usize) -> RfParams {
        RfParams {
            max_features: 1,
            n_estimators,
            max_depth,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: true,
            seed: 3,
        }
    }

    #[test]
    fn stump_on_step_function_uses_leaf_means() {
        let xs = [0.0, 1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let ys = [1.0, 2.0, 1.5, 1.0, 8.0, 9.0, 10.0];
        let x = Matrix::new(7, 1, xs.to_vec()).unwrap();
        let mut p = params(1, 1);
        p.bootstrap = false;
        let f = rf_fit(&x, &ys, &p).unwrap();
        assert_eq!(f.trees[0].depth(), 1);
        // oracle: try every cut, keep the lowest squared error
        let sse = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m).powi(2)).sum::<f64>()
        };
        let cut = (1..7).min_by(|&a, &b| (sse(&ys[..a]) + sse(&ys[a..])).total_cmp(&(sse(&ys[..b]) + sse(&ys[b..])))).unwrap();
        let lm = ys[..cut].iter().sum::<f64>() / cut as f64;
        let rm = ys[cut..].iter().sum::<f64>() / (7 - cut) as f64;
        assert_eq!(cut, 4);
        assert!((f.predict_row(&[2.5]) - lm).abs() < 1e-12);
        assert!((f.predict_row(&[10.5]) - rm).abs() < 1e-12);
        match f.trees[0].nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, 6.5),
            _ => panic!("root should split"),
        }
    }

    #[test]
    fn constant_target_is_exact() {
        let x = Matrix::new(30, 2, (0..60).map(|v| (v as f64).sin()).collect()).unwrap();
        let y = vec![0.1 + 0.2; 30];
        let f = rf_fit(&x, &y, &params(200, 10)).unwrap();
        assert!(f.predict(&x).iter().all(|&p| p == 0.1 + 0.2));
    }

    #[test]
    fn forest_is_mean_of_trees() {
        let x = Matrix::new(40, 2, (0..80).map(|v| ((v * 7) % 13) as f64).collect()).unwrap();
        let y: Vec<f64> = (0..40).map(|i| (i as f64).sqrt()).collect();
        let f = rf_fit(&x, &y, &params(15, 6)).unwrap();
        for i in 0..40 {
            let row = x.row(i);
            let mean = f.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / 15.0;
            assert!((f.predict_row(row) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_and_limits_respected() {
        let x = Matrix::new(50, 3, (0..150).map(|v| ((v * 31) % 17) as f64).collect()).unwrap();
        let y: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let mut p = params(5, 3);
        p.min_samples_leaf = 4;
        let a = rf_fit(&x, &y, &p).unwrap();
        assert_eq!(a, rf_fit(&x, &y, &p).unwrap());
        assert!(a.trees.iter().all(|t| t.depth() <= 3));
        p.seed = 4;
        assert_ne!(a, rf_fit(&x, &y, &p).unwrap());
    }
}
