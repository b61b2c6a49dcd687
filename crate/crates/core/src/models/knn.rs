//! k-nearest-neighbour regression with Minkowski distance.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub k: usize,
    pub p: u32,
}

/// `Σ |a_i - b_i|^p`, the p-th power of the Minkowski distance (same order).
fn powered_distance(a: &[f64], b: &[f64], p: u32) -> f64 {
    match p {
        1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        _ => a.iter().zip(b).map(|(x, y)| (x - y).abs().powi(p as i32)).sum(),
    }
}

/// Indices of the `k` nearest training rows, ordered by (distance, index).
pub fn neighbours(x: &Matrix, q: &[f64], k: usize, p: u32) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..x.rows).map(|i| (powered_distance(x.row(i), q, p), i)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_unstable_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

impl KnnModel {
    pub fn fit(x: &Matrix, y: &[f64], k: usize, p: u32) -> Result<Self> {
        if x.rows != y.len() {
            return Err(Error::Shape(format!("{} rows but {} targets", x.rows, y.len())));
        }
        if k == 0 || k > x.rows {
            return Err(Error::Config(format!("k = {k} needs 1..={} training rows", x.rows)));
        }
        if p == 0 {
            return Err(Error::Config("Minkowski order must be at least 1".into()));
        }
        Ok(Self {
            x: x.clone(),
            y: y.to_vec(),
            k,
            p,
        })
    }

    pub fn predict_row(&self, q: &[f64]) -> Result<f64> {
        if q.len() != self.x.cols {
            return Err(Error::Shape(format!("kNN expects {} features, got {}", self.x.cols, q.len())));
        }
        let idx = neighbours(&self.x, q, self.k, self.p);
        Ok(idx.iter().map(|&i| self.y[i]).sum::<f64>() / self.k as f64)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        (0..x.rows).map(|i| self.predict_row(x.row(i))).collect()
    }
}

/// Mean target of the `k` training rows nearest to `q`; ties in distance go
/// to the lower row index.
///
/// ```
/// use hrcal::models::{knn_predict, Matrix};
/// let x = Matrix::new(3, 1, vec![0.0, 1.0, 5.0]).unwrap();
/// assert_eq!(knn_predict(&x, &[10.0, 20.0, 30.0], &[0.4], 2, 2).unwrap(), 15.0);
/// ```
pub fn knn_predict(x: &Matrix, y: &[f64], q: &[f64], k: usize, p: u32) -> Result<f64> {
    KnnModel::fit(x, y, k, p)?.predict_row(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn trivial_cases() {
        let x = Matrix::new(4, 1, vec![0.0, 2.0, 4.0, 9.0]).unwrap();
        let y = [1.0, 2.0, 3.0, 10.0];
        assert_eq!(knn_predict(&x, &y, &[3.8], 1, 2).unwrap(), 3.0);
        assert_eq!(knn_predict(&x, &y, &[100.0], 4, 1).unwrap(), 4.0);
        assert!(matches!(knn_predict(&x, &y, &[0.0], 5, 1), Err(Error::Config(_))));
        // equidistant from rows 0 and 1: the lower index wins
        assert_eq!(knn_predict(&x, &y, &[1.0], 1, 2).unwrap(), 1.0);
    }

    #[test]
    fn metric_changes_neighbour_set() {
        // from the origin: a = (2.2, 0) has L1 2.2, L2 2.2; b = (1.5, 1.5) has L1 3.0, L2 2.12
        let x = Matrix::new(4, 2, vec![2.2, 0.0, 1.5, 1.5, 0.5, 0.0, 0.0, 0.6]).unwrap();
        let y = [10.0, 20.0, 30.0, 40.0];
        let brute = |p: i32| {
            let mut d: Vec<(f64, usize)> = (0..4)
                .map(|i| (x.row(i).iter().map(|v| v.abs().powi(p)).sum::<f64>().powf(1.0 / p as f64), i))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d[..3].iter().map(|e| y[e.1]).sum::<f64>() / 3.0
        };
        let l1 = knn_predict(&x, &y, &[0.0, 0.0], 3, 1).unwrap();
        let l2 = knn_predict(&x, &y, &[0.0, 0.0], 3, 2).unwrap();
        assert_ne!(l1, l2);
        assert_eq!(l1, brute(1));
        assert_eq!(l2, brute(2));
    }

    proptest! {
        #[test]
        fn row_order_does_not_matter(pts in proptest::collection::vec((-50i32..50, -50i32..50), 5..30), k in 1usize..5, p in 1u32..4, seed in 0u64..1000) {
            // distinct values keep every distance tie-free
            let xs: Vec<f64> = pts.iter().enumerate().flat_map(|(i, &(a, b))| [a as f64 + i as f64 * 1e-3, b as f64 * std::f64::consts::SQRT_2]).collect();
            let n = pts.len();
            let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let x = Matrix::new(n, 2, xs).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.rotate_left(seed as usize % n);
            let xp = x.select_rows(&perm);
            let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let q = [0.123, -0.456];
            let a = knn_predict(&x, &y, &q, k.min(n), p).unwrap();
            let b = knn_predict(&xp, &yp, &q, k.min(n), p).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
