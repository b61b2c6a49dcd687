//! The six regressors, their hyperparameter grids and the serializable
//! [`TrainedModel`] wrapper.

pub mod gp;
mod grid;
pub mod kernel;
pub mod knn;
pub mod mlp;
pub mod rf;
pub mod sigmoid;
pub mod svr;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{fit_scaler, FeatureMatrix, ScalerStats};

pub use gp::{gp_fit, GpModel, GpParams};
pub use grid::{default_grid, Algorithm};
pub use kernel::{kernel_eval, KernelSpec};
pub use knn::{knn_predict, KnnModel};
pub use mlp::{mlp_fit, MlpModel, MlpParams};
pub use rf::{rf_fit, Forest, RfParams};
pub use sigmoid::{sigmoid_lr_fit, SigmoidModel};
pub use svr::{svr_fit, SvrModel, SvrParams};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{rows}x{cols} matrix given {} values", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Penalty {
    L1,
    L2,
    ElasticNet,
}

impl Penalty {
    pub const ALL: [Penalty; 3] = [Penalty::L1, Penalty::L2, Penalty::ElasticNet];

    pub fn name(self) -> &'static str {
        match self {
            Penalty::L1 => "l1",
            Penalty::L2 => "l2",
            Penalty::ElasticNet => "elasticnet",
        }
    }
}

impl FromStr for Penalty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Penalty::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown penalty {s:?}")))
    }
}

/// One point of a hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Svr {
        c: f64,
        epsilon: f64,
        kernel: KernelSpec,
    },
    Rf {
        max_features: usize,
        n_estimators: usize,
        max_depth: usize,
        min_samples_split: usize,
        min_samples_leaf: usize,
    },
    Gp {
        alpha: f64,
    },
    Mlp {
        hidden: Vec<usize>,
        learning_rate: f64,
    },
    SigmoidLr {
        c: f64,
        penalty: Penalty,
    },
    Knn {
        n_neighbors: usize,
        p: u32,
    },
}

impl ModelSpec {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            ModelSpec::Svr { .. } => Algorithm::Svr,
            ModelSpec::Rf { .. } => Algorithm::Rf,
            ModelSpec::Gp { .. } => Algorithm::Gp,
            ModelSpec::Mlp { .. } => Algorithm::Mlp,
            ModelSpec::SigmoidLr { .. } => Algorithm::SigmoidLr,
            ModelSpec::Knn { .. } => Algorithm::Knn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} in {self}")));
        match self {
            ModelSpec::Svr { c, epsilon, kernel } => {
                kernel.validate()?;
                if !(*c > 0.0) || !(*epsilon >= 0.0) {
                    return bad("C must be positive and epsilon non-negative");
                }
            }
            ModelSpec::Rf {
                max_features,
                n_estimators,
                max_depth,
                min_samples_split,
                min_samples_leaf,
            } => {
                if *max_features == 0 || *n_estimators == 0 || *max_depth == 0 || *min_samples_split < 2 || *min_samples_leaf == 0 {
                    return bad("forest sizes must be positive and min_samples_split at least 2");
                }
            }
            ModelSpec::Gp { alpha } => {
                if !(*alpha > 0.0) {
                    return bad("alpha must be positive");
                }
            }
            ModelSpec::Mlp { hidden, learning_rate } => {
                if hidden.is_empty() || hidden.contains(&0) || !(*learning_rate > 0.0) {
                    return bad("hidden layers must be non-empty and the learning rate positive");
                }
            }
            ModelSpec::SigmoidLr { c, .. } => {
                if !(*c > 0.0) {
                    return bad("C must be positive");
                }
            }
            ModelSpec::Knn { n_neighbors, p } => {
                if *n_neighbors == 0 || *p == 0 {
                    return bad("k and p must be positive");
                }
            }
        }
        Ok(())
    }
}

/// Compact `algo:key=value,...` form, parsed back by `FromStr`.
impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Svr { c, epsilon, kernel } => {
                write!(f, "svr:c={c},epsilon={epsilon},")?;
                match kernel {
                    KernelSpec::Rbf { gamma } => write!(f, "kernel=rbf,gamma={gamma}"),
                    KernelSpec::Poly { gamma, degree } => write!(f, "kernel=poly,gamma={gamma},degree={degree}"),
                }
            }
            ModelSpec::Rf {
                max_features,
                n_estimators,
                max_depth,
                min_samples_split,
                min_samples_leaf,
            } => write!(
                f,
                "rf:max_features={max_features},n_estimators={n_estimators},max_depth={max_depth},\
                 min_samples_split={min_samples_split},min_samples_leaf={min_samples_leaf}"
            ),
            ModelSpec::Gp { alpha } => write!(f, "gp:alpha={alpha}"),
            ModelSpec::Mlp { hidden, learning_rate } => {
                let h: Vec<String> = hidden.iter().map(|v| v.to_string()).collect();
                write!(f, "mlp:hidden={},learning_rate={learning_rate}", h.join("-"))
            }
            ModelSpec::SigmoidLr { c, penalty } => write!(f, "sigmoid_lr:c={c},penalty={}", penalty.name()),
            ModelSpec::Knn { n_neighbors, p } => write!(f, "knn:n_neighbors={n_neighbors},p={p}"),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (algo, rest) = s.split_once(':').unwrap_or((s, ""));
        let algo: Algorithm = algo.parse()?;
        let mut kv = std::collections::BTreeMap::new();
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {part:?} in {s:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let take = |kv: &mut std::collections::BTreeMap<String, String>, k: &str| {
            kv.remove(k)
                .ok_or_else(|| Error::Config(format!("{s:?} is missing {k}")))
        };
        fn num<T: FromStr>(v: String, k: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {k}")))
        }
        let spec = match algo {
            Algorithm::Svr => {
                let c = num(take(&mut kv, "c")?, "c")?;
                let epsilon = num(take(&mut kv, "epsilon")?, "epsilon")?;
                let gamma = num(take(&mut kv, "gamma")?, "gamma")?;
                let kernel = match take(&mut kv, "kernel")?.as_str() {
                    "rbf" => KernelSpec::Rbf { gamma },
                    "poly" => KernelSpec::Poly {
                        gamma,
                        degree: num(take(&mut kv, "degree")?, "degree")?,
                    },
                    other => return Err(Error::Config(format!("unknown kernel {other:?}"))),
                };
                ModelSpec::Svr { c, epsilon, kernel }
            }
            Algorithm::Rf => ModelSpec::Rf {
                max_features: num(take(&mut kv, "max_features")?, "max_features")?,
                n_estimators: num(take(&mut kv, "n_estimators")?, "n_estimators")?,
                max_depth: num(take(&mut kv, "max_depth")?, "max_depth")?,
                min_samples_split: num(take(&mut kv, "min_samples_split")?, "min_samples_split")?,
                min_samples_leaf: num(take(&mut kv, "min_samples_leaf")?, "min_samples_leaf")?,
            },
            Algorithm::Gp => ModelSpec::Gp {
                alpha: num(take(&mut kv, "alpha")?, "alpha")?,
            },
            Algorithm::Mlp => ModelSpec::Mlp {
                hidden: take(&mut kv, "hidden")?
                    .split('-')
                    .map(|h| num(h.to_string(), "hidden"))
                    .collect::<Result<_>>()?,
                learning_rate: num(take(&mut kv, "learning_rate")?, "learning_rate")?,
            },
            Algorithm::SigmoidLr => ModelSpec::SigmoidLr {
                c: num(take(&mut kv, "c")?, "c")?,
                penalty: take(&mut kv, "penalty")?.parse()?,
            },
            Algorithm::Knn => ModelSpec::Knn {
                n_neighbors: num(take(&mut kv, "n_neighbors")?, "n_neighbors")?,
                p: num(take(&mut kv, "p")?, "p")?,
            },
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Config(format!("unknown key {k:?} in {s:?}")));
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Fitted {
    Svr(SvrModel),
    Rf(Forest),
    Gp(GpModel),
    Mlp(MlpModel),
    SigmoidLr(SigmoidModel),
    Knn(KnnModel),
    /// Fallback for a constant training target.
    Constant(f64),
}

impl Fitted {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(match self {
            Fitted::Svr(m) => m.predict(x),
            Fitted::Rf(m) => m.predict(x),
            Fitted::Gp(m) => m.predict(x)?.0,
            Fitted::Mlp(m) => m.predict(x),
            Fitted::SigmoidLr(m) => m.predict(x),
            Fitted::Knn(m) => m.predict(x)?,
            Fitted::Constant(c) => vec![*c; x.rows],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub fold: Option<String>,
    pub seed: u64,
    pub n_train: usize,
    pub warnings: Vec<String>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Heart-rate range that in-sample predictions are expected to respect,
/// widened by [`GUARDBAND_BPM`] on both sides.
pub const PLAUSIBLE_BPM: (f64, f64) = (20.0, 250.0);
pub const GUARDBAND_BPM: f64 = 50.0;

/// A fitted model together with the scaler and column layout it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub feature_names: Vec<String>,
    pub scaler: ScalerStats,
    pub fitted: Fitted,
    pub meta: TrainMeta,
}

fn scaled_matrix(scaler: &ScalerStats, m: &FeatureMatrix) -> Matrix {
    let mut data = m.data.clone();
    for row in data.chunks_mut(m.n_cols().max(1)) {
        scaler.transform_row(row);
    }
    Matrix {
        rows: m.n_rows(),
        cols: m.n_cols(),
        data,
    }
}

/// Fits `spec` on `train`. Standardization statistics come from `train`
/// alone; `validation` (scaled with them) is only used for MLP early
/// stopping.
pub fn fit_model(
    spec: &ModelSpec,
    train: &FeatureMatrix,
    validation: Option<&FeatureMatrix>,
    seed: u64,
    fold: Option<&str>,
) -> Result<TrainedModel> {
    spec.validate()?;
    let scaler = fit_scaler(train)?;
    let x = scaled_matrix(&scaler, train);
    let y = &train.target;
    let mut warnings = Vec::new();
    let constant = y.iter().all(|&v| v == y[0]);

    let fitted = match spec {
        _ if constant && matches!(spec, ModelSpec::SigmoidLr { .. }) => {
            warnings.push("constant training target; fitted a constant model".into());
            Fitted::Constant(y[0])
        }
        ModelSpec::Svr { c, epsilon, kernel } => match svr_fit(&x, y, &SvrParams::new(*c, *epsilon, *kernel)) {
            Ok(m) => Fitted::Svr(m),
            Err(Error::Convergence { iterations, gap, best }) => {
                log::warn!("SVR {spec} stopped after {iterations} iterations with KKT gap {gap:.2e}");
                warnings.push(format!("SMO stopped at the iteration limit (gap {gap:.2e})"));
                Fitted::Svr(*best)
            }
            Err(e) => return Err(e),
        },
        ModelSpec::Rf {
            max_features,
            n_estimators,
            max_depth,
            min_samples_split,
            min_samples_leaf,
        } => Fitted::Rf(rf_fit(
            &x,
            y,
            &RfParams {
                max_features: *max_features,
                n_estimators: *n_estimators,
                max_depth: *max_depth,
                min_samples_split: *min_samples_split,
                min_samples_leaf: *min_samples_leaf,
                bootstrap: true,
                seed,
            },
        )?),
        ModelSpec::Gp { alpha } => Fitted::Gp(gp_fit(&x, y, &GpParams::new(*alpha, seed))?),
        ModelSpec::Mlp { hidden, learning_rate } => {
            let val = validation.map(|v| {
                let vx = scaled_matrix(&scaler, v);
                (vx, v.target.clone())
            });
            let params = MlpParams::new(hidden.clone(), *learning_rate, seed);
            Fitted::Mlp(mlp_fit(&x, y, val.as_ref().map(|(a, b)| (a, b.as_slice())), &params)?)
        }
        ModelSpec::SigmoidLr { c, penalty } => Fitted::SigmoidLr(sigmoid_lr_fit(&x, y, *c, *penalty)?),
        ModelSpec::Knn { n_neighbors, p } => Fitted::Knn(KnnModel::fit(&x, y, *n_neighbors, *p)?),
    };

    let in_sample = fitted.predict(&x)?;
    let (lo, hi) = (PLAUSIBLE_BPM.0 - GUARDBAND_BPM, PLAUSIBLE_BPM.1 + GUARDBAND_BPM);
    let outside = in_sample.iter().filter(|p| !(p.is_finite() && **p >= lo && **p <= hi)).count();
    if outside > 0 {
        warnings.push(format!("{outside} training predictions outside [{lo}, {hi}] bpm"));
    }

    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        spec: spec.clone(),
        feature_names: train.names.clone(),
        scaler,
        fitted,
        meta: TrainMeta {
            fold: fold.map(String::from),
            seed,
            n_train: train.n_rows(),
            warnings,
        },
    })
}

impl TrainedModel {
    /// Predicts bpm for every row of `m`, whose columns must match the
    /// training columns by name and order.
    pub fn predict(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        if m.names != self.feature_names {
            return Err(Error::Shape(format!(
                "model expects columns {:?}, got {:?}",
                self.feature_names, m.names
            )));
        }
        self.fitted.predict(&scaled_matrix(&self.scaler, m))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Validation(format!("serializing model: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TrainedModel =
            serde_json::from_str(s).map_err(|e| Error::Validation(format!("reading model: {e}")))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ColumnKind;
    use crate::io::ActivityState;

    fn toy(n: usize, shift: f64) -> FeatureMatrix {
        let mut m = FeatureMatrix::empty(
            vec!["device_hr".into(), "pal".into()],
            vec![ColumnKind::Numeric, ColumnKind::Categorical],
        );
        for i in 0..n {
            let hr = 60.0 + i as f64;
            let pal = (i % 4) as f64;
            m.push_row(&[hr, pal], hr + 2.0 * pal + shift, 15.0 * i as f64, i as i64, ActivityState::RS, "A");
        }
        m
    }

    #[test]
    fn spec_strings_round_trip() {
        for algo in Algorithm::ALL {
            for spec in default_grid(algo).into_iter().take(7) {
                let text = spec.to_string();
                assert_eq!(text.parse::<ModelSpec>().unwrap(), spec, "{text}");
            }
        }
        assert!("svr:c=1,epsilon=0.1".parse::<ModelSpec>().is_err());
        assert!("knn:n_neighbors=3,p=2,extra=1".parse::<ModelSpec>().is_err());
        assert!("svr:c=1,epsilon=0.1,kernel=poly,gamma=1,degree=1".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn every_algorithm_fits_and_round_trips() {
        let train = toy(60, 0.0);
        let specs = [
            "svr:c=10,epsilon=0.1,kernel=rbf,gamma=0.1",
            "rf:max_features=2,n_estimators=20,max_depth=10,min_samples_split=2,min_samples_leaf=2",
            "gp:alpha=0.001",
            "mlp:hidden=8-4-2,learning_rate=0.01",
            "sigmoid_lr:c=10,penalty=l2",
            "knn:n_neighbors=3,p=2",
        ];
        for s in specs {
            let spec: ModelSpec = s.parse().unwrap();
            let model = fit_model(&spec, &train, None, 7, Some("A")).unwrap();
            let pred = model.predict(&train).unwrap();
            let mae = pred.iter().zip(&train.target).map(|(p, t)| (p - t).abs()).sum::<f64>() / 60.0;
            assert!(mae < 6.0, "{s}: {mae}");
            let back = TrainedModel::from_json(&model.to_json().unwrap()).unwrap();
            assert_eq!(back.predict(&train).unwrap(), pred, "{s}");
        }
    }

    #[test]
    fn predict_checks_columns() {
        let train = toy(20, 0.0);
        let model = fit_model(&"knn:n_neighbors=3,p=2".parse().unwrap(), &train, None, 0, None).unwrap();
        let mut other = train.clone();
        other.names.swap(0, 1);
        assert!(matches!(model.predict(&other), Err(Error::Shape(_))));
    }

    #[test]
    fn constant_target_sigmoid_falls_back() {
        let mut train = toy(10, 0.0);
        train.target = vec![70.0; 10];
        let spec: ModelSpec = "sigmoid_lr:c=1,penalty=l1".parse().unwrap();
        let m = fit_model(&spec, &train, None, 0, None).unwrap();
        assert_eq!(m.predict(&train).unwrap(), vec![70.0; 10]);
        assert!(!m.meta.warnings.is_empty());
    }

    #[test]
    fn implausible_fits_are_flagged() {
        let mut train = toy(10, 0.0);
        train.target = (0..10).map(|i| 400.0 + i as f64).collect();
        let m = fit_model(&"knn:n_neighbors=1,p=1".parse().unwrap(), &train, None, 0, None).unwrap();
        assert!(m.meta.warnings.iter().any(|w| w.contains("outside")));
    }

    #[test]
    fn version_is_checked() {
        let train = toy(10, 0.0);
        let m = fit_model(&"knn:n_neighbors=2,p=1".parse().unwrap(), &train, None, 0, None).unwrap();
        let text = m.to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(TrainedModel::from_json(&text).is_err());
    }
}
