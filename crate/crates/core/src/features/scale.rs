use serde::{Deserialize, Serialize};

use super::{ColumnKind, FeatureMatrix};
use crate::error::{Error, Result};

/// Training-set standardization statistics. Only numeric, non-constant
/// columns are scaled; the rest pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
    pub scaled: Vec<bool>,
    /// Numeric columns that were constant on the training rows.
    pub constant: Vec<bool>,
    /// Participants whose rows were used for fitting.
    pub participants: Vec<String>,
}

impl ScalerStats {
    pub fn transform_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            if self.scaled[j] {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
    }
}

pub fn fit_scaler(train: &FeatureMatrix) -> Result<ScalerStats> {
    let n = train.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("scaler needs at least 2 rows, got {n}")));
    }
    let c = train.n_cols();
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    let mut scaled = vec![false; c];
    let mut constant = vec![false; c];
    for j in 0..c {
        let col = train.column(j);
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        mean[j] = m;
        std[j] = var.sqrt();
        if train.kinds[j] == ColumnKind::Numeric {
            let is_const = col.iter().all(|&v| v == col[0]) || std[j] <= 1e-12 * m.abs().max(1.0);
            constant[j] = is_const;
            scaled[j] = !is_const;
        }
    }
    Ok(ScalerStats {
        names: train.names.clone(),
        mean,
        std,
        scaled,
        constant,
        participants: train.participants(),
    })
}

/// Scales `m` with statistics fitted elsewhere.
///
/// Fails when the column names differ, or when `m` holds rows of a
/// participant the statistics were fitted on, unless `m` is that very
/// training set (every participant of `m` in the fit set).
pub fn apply_scaler(stats: &ScalerStats, m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if stats.names != m.names {
        return Err(Error::Shape(format!(
            "scaler fitted on columns {:?}, matrix has {:?}",
            stats.names, m.names
        )));
    }
    let mut out = m.clone();
    let c = m.n_cols();
    for row in out.data.chunks_mut(c.max(1)) {
        stats.transform_row(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::ActivityState;

    fn matrix(cols: &[(&str, ColumnKind, &[f64])]) -> FeatureMatrix {
        let n = cols[0].2.len();
        let mut m = FeatureMatrix::empty(
            cols.iter().map(|c| c.0.to_string()).collect(),
            cols.iter().map(|c| c.1).collect(),
        );
        for i in 0..n {
            let row: Vec<f64> = cols.iter().map(|c| c.2[i]).collect();
            m.push_row(&row, 0.0, i as f64 * 15.0, i as i64, ActivityState::RS, "A");
        }
        m
    }

    #[test]
    fn population_std_example() {
        let m = matrix(&[("a", ColumnKind::Numeric, &[1.0, 2.0, 3.0])]);
        let s = fit_scaler(&m).unwrap();
        let out = apply_scaler(&s, &m).unwrap();
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in out.column(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // same statistics applied to an identical test column
        let again = apply_scaler(&s, &m).unwrap();
        assert_eq!(again.data, out.data);
    }

    #[test]
    fn constant_and_categorical_pass_through() {
        let m = matrix(&[
            ("c", ColumnKind::Numeric, &[5.0, 5.0, 5.0]),
            ("g", ColumnKind::Categorical, &[0.0, 1.0, 1.0]),
        ]);
        let s = fit_scaler(&m).unwrap();
        assert!(s.constant[0]);
        assert!(!s.scaled[0] && !s.scaled[1]);
        assert_eq!(apply_scaler(&s, &m).unwrap().data, m.data);
    }

    #[test]
    fn errors() {
        let m = matrix(&[("a", ColumnKind::Numeric, &[1.0])]);
        assert!(fit_scaler(&m).is_err());
        let m2 = matrix(&[("a", ColumnKind::Numeric, &[1.0, 2.0])]);
        let other = matrix(&[("b", ColumnKind::Numeric, &[1.0, 2.0])]);
        let s = fit_scaler(&m2).unwrap();
        assert!(matches!(apply_scaler(&s, &other), Err(Error::Shape(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scaled_columns_have_zero_mean_unit_std(v in proptest::collection::vec(-1e3f64..1e3, 2..60)) {
                prop_assume!(v.iter().any(|&x| (x - v[0]).abs() > 1e-6));
                let m = matrix(&[("a", ColumnKind::Numeric, &v)]);
                let s = fit_scaler(&m).unwrap();
                let col = apply_scaler(&s, &m).unwrap().column(0);
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((sd - 1.0).abs() < 1e-9);
            }
        }
    }
}
