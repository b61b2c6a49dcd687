//! Leave-one-subject-out folds, grid search, and the evaluation statistics.

mod stats;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use stats::{
    bland_altman, bland_altman_values, common_points, error_reduction, mae, mae_se, paired_t_test, pairwise_diffs,
    rm_anova, sample_sd, BlandAltman, PairwiseDiff, StatTestResult, ALPHA,
};

use crate::error::{Error, Result};
use crate::features::{
    build_rolling_windows, select_in_state, FeatureMatrix, SelectionOptions, WindowSpec, DEVICE_HR,
};
use crate::io::{ActivityState, ReportState};
use crate::models::{fit_model, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub test: String,
    pub validation: String,
    pub train: Vec<String>,
    /// Seed handed to stochastic models fitted in this fold.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub seed: u64,
}

/// One fold per participant: participant `i` is tested, participant `i+1`
/// (cyclically) validates, the rest train.
///
/// ```
/// let ids: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
/// let plan = hrcal::eval::make_folds(&ids, 0).unwrap();
/// assert_eq!(plan.folds[2].test, "C");
/// assert_eq!(plan.folds[2].validation, "A");
/// assert_eq!(plan.folds[2].train, ["B"]);
/// ```
pub fn make_folds(ids: &[String], seed: u64) -> Result<FoldPlan> {
    let n = ids.len();
    if n < 3 {
        return Err(Error::Config(format!("leave-one-subject-out needs at least 3 participants, got {n}")));
    }
    if ids.iter().collect::<BTreeSet<_>>().len() != n {
        return Err(Error::Config("participant ids must be unique".into()));
    }
    let folds = (0..n)
        .map(|i| {
            let v = (i + 1) % n;
            Fold {
                index: i,
                test: ids[i].clone(),
                validation: ids[v].clone(),
                train: (0..n).filter(|&j| j != i && j != v).map(|j| ids[j].clone()).collect(),
                seed: seed.wrapping_add(i as u64),
            }
        })
        .collect();
    Ok(FoldPlan { folds, seed })
}

/// Per-fold preparation applied to training rows only: optional feature
/// selection, then optional rolling windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub selection: Option<SelectionOptions>,
    /// Columns kept whatever the selection says.
    pub always_keep: Vec<String>,
    pub window: Option<WindowSpec>,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            selection: None,
            always_keep: vec![DEVICE_HR.to_string()],
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMatrices {
    pub train: FeatureMatrix,
    pub validation: FeatureMatrix,
    pub test: FeatureMatrix,
    /// Columns kept before windowing.
    pub features: Vec<String>,
}

/// Splits the rows of `state` by the fold's participants and applies `pre`,
/// with every data-dependent choice made on the training rows.
pub fn prepare_fold(m: &FeatureMatrix, fold: &Fold, state: ActivityState, pre: &Preprocess) -> Result<FoldMatrices> {
    let sub = m.filter_state(ReportState::One(state));
    let train_ids: Vec<&str> = fold.train.iter().map(String::as_str).collect();
    let train = sub.filter_participants(&train_ids);
    let validation = sub.filter_participants(&[fold.validation.as_str()]);
    let test = sub.filter_participants(&[fold.test.as_str()]);
    if train.n_rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "fold {} has {} training rows in {state}",
            fold.test,
            train.n_rows()
        )));
    }

    let features: Vec<String> = match &pre.selection {
        Some(opts) => {
            let entries = select_in_state(&train, ReportState::One(state), opts)?;
            let chosen: BTreeSet<&str> = entries.iter().filter(|e| e.selected).map(|e| e.feature.as_str()).collect();
            m.names
                .iter()
                .filter(|n| chosen.contains(n.as_str()) || pre.always_keep.contains(n))
                .cloned()
                .collect()
        }
        None => m.names.clone(),
    };
    let names: Vec<&str> = features.iter().map(String::as_str).collect();
    let mut parts = [train, validation, test].map(|p| p.select_columns(&names));
    if let Some(w) = &pre.window {
        let spec = WindowSpec {
            rolled_columns: w.rolled_columns.iter().filter(|c| features.contains(c)).cloned().collect(),
            ..w.clone()
        };
        for p in parts.iter_mut() {
            if let Ok(mat) = p {
                *p = build_rolling_windows(mat, &spec);
            }
        }
    }
    let [train, validation, test] = parts;
    Ok(FoldMatrices {
        train: train?,
        validation: validation?,
        test: test?,
        features,
    })
}

fn mean_abs_err(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub spec: ModelSpec,
    /// Validation MAE per fold; `None` where the fit failed.
    pub fold_mae: Vec<Option<f64>>,
    pub mean_mae: Option<f64>,
    pub se: Option<f64>,
}

impl GridEntry {
    pub fn failed(&self) -> bool {
        self.mean_mae.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: ModelSpec,
    pub best_index: usize,
    pub entries: Vec<GridEntry>,
}

/// Scores every spec on every fold with `score` (lower is better) and picks
/// the lowest mean; ties go to the earlier spec. Work runs in parallel but
/// results are gathered in grid order.
pub fn grid_search_with<F>(grid: &[ModelSpec], plan: &FoldPlan, score: F) -> Result<GridResult>
where
    F: Fn(&ModelSpec, &Fold) -> Result<f64> + Sync,
{
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let nf = plan.folds.len();
    let cells: Vec<Option<f64>> = (0..grid.len() * nf)
        .into_par_iter()
        .map(|c| {
            let (spec, fold) = (&grid[c / nf], &plan.folds[c % nf]);
            match score(spec, fold) {
                Ok(v) if v.is_finite() => Some(v),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("{spec} failed on fold {}: {e}", fold.test);
                    None
                }
            }
        })
        .collect();
    let entries: Vec<GridEntry> = grid
        .iter()
        .enumerate()
        .map(|(s, spec)| {
            let fold_mae = cells[s * nf..(s + 1) * nf].to_vec();
            let ok: Vec<f64> = fold_mae.iter().flatten().copied().collect();
            let (mean_mae, se) = match mae_se(&ok) {
                Ok((m, se)) => (Some(m), Some(se)),
                Err(_) => (None, None),
            };
            GridEntry {
                spec: spec.clone(),
                fold_mae,
                mean_mae,
                se,
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in entries.iter().enumerate() {
        if let Some(m) = e.mean_mae {
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((i, m));
            }
        }
    }
    let (best_index, _) = best.ok_or_else(|| Error::Training("every grid spec failed on every fold".into()))?;
    Ok(GridResult {
        best: grid[best_index].clone(),
        best_index,
        entries,
    })
}

/// Grid search on the rows of one state: each spec is fitted on a fold's
/// training participants and scored by MAE on its validation participant.
pub fn grid_search(
    grid: &[ModelSpec],
    plan: &FoldPlan,
    data: &FeatureMatrix,
    state: ActivityState,
    pre: &Preprocess,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let prepared: Vec<Result<FoldMatrices>> = plan.folds.par_iter().map(|f| prepare_fold(data, f, state, pre)).collect();
    let by_index: HashMap<usize, &Result<FoldMatrices>> = plan.folds.iter().map(|f| f.index).zip(&prepared).collect();
    grid_search_with(grid, plan, |spec, fold| {
        let fm = by_index[&fold.index].as_ref().map_err(|e| Error::InsufficientData(e.to_string()))?;
        if fm.validation.n_rows() == 0 {
            return Err(Error::InsufficientData(format!("no validation rows for {}", fold.validation)));
        }
        let model = fit_model(spec, &fm.train, Some(&fm.validation), fold.seed, Some(&fold.test))?;
        let pred = model.predict(&fm.validation)?;
        Ok(mean_abs_err(&pred, &fm.validation.target))
    })
}

/// A calibration method: one model spec per state plus its preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub models: BTreeMap<ActivityState, ModelSpec>,
    pub pre: Preprocess,
}

impl MethodSpec {
    pub fn uniform(name: &str, spec: ModelSpec, pre: Preprocess) -> Self {
        Self {
            name: name.to_string(),
            models: ActivityState::ALL.into_iter().map(|s| (s, spec.clone())).collect(),
            pre,
        }
    }
}

/// One grid point of a test participant, with every method's estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub participant: String,
    pub state: ActivityState,
    pub grid_index: i64,
    pub t: f64,
    pub truth: f64,
    pub raw: f64,
    /// In [`EvalReport::methods`] order.
    pub calibrated: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: String,
    pub state: ReportState,
    pub mae: f64,
    pub se: f64,
    pub n_points: usize,
    pub per_participant: Vec<(String, f64)>,
    /// Relative to the raw device; absent for the raw row itself.
    pub error_reduction_pct: Option<f64>,
    /// Paired test of absolute errors against the raw device.
    pub t_test: Option<StatTestResult>,
    /// Estimate minus truth.
    pub bland_altman: Option<BlandAltman>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Calibration methods; the raw device row is reported as [`RAW`].
    pub methods: Vec<String>,
    /// Grouped by state (RS, LS, IS, ALL), raw first within each.
    pub stats: Vec<MethodStats>,
    pub points: Vec<PointEstimate>,
}

pub const RAW: &str = "raw";

impl EvalReport {
    pub fn get(&self, method: &str, state: ReportState) -> Option<&MethodStats> {
        self.stats.iter().find(|s| s.method == method && s.state == state)
    }
}

type Key = (String, ActivityState, i64);

/// Leave-one-subject-out test of every method. Each state's model is fitted
/// per fold on the training participants' rows of that state and applied to
/// the test participant. All methods and the raw device are scored on the
/// grid points every method could predict.
pub fn evaluate(m: &FeatureMatrix, plan: &FoldPlan, methods: &[MethodSpec]) -> Result<EvalReport> {
    if methods.is_empty() {
        return Err(Error::Config("no calibration methods to evaluate".into()));
    }
    let raw_col = m
        .col_index(DEVICE_HR)
        .ok_or_else(|| Error::Config(format!("feature matrix lacks {DEVICE_HR}")))?;
    let mut tasks = Vec::new();
    for (mi, method) in methods.iter().enumerate() {
        for (&state, spec) in &method.models {
            for fold in &plan.folds {
                tasks.push((mi, state, spec, fold));
            }
        }
    }
    let results: Vec<Result<Vec<(Key, f64)>>> = tasks
        .par_iter()
        .map(|&(mi, state, spec, fold)| {
            let method = &methods[mi];
            let fm = prepare_fold(m, fold, state, &method.pre)?;
            if fm.test.n_rows() == 0 {
                return Ok(Vec::new());
            }
            let model = fit_model(spec, &fm.train, Some(&fm.validation), fold.seed, Some(&fold.test))
                .map_err(|e| Error::Training(format!("{} {state} fold {}: {e}", method.name, fold.test)))?;
            let leaked = [&fold.test, &fold.validation]
                .iter()
                .any(|p| model.scaler.participants.contains(p));
            if leaked {
                return Err(Error::Validation(format!("fold {} scaler saw held-out rows", fold.test)));
            }
            let pred = model.predict(&fm.test)?;
            Ok((0..fm.test.n_rows())
                .map(|i| ((fm.test.participant[i].clone(), state, fm.test.grid_index[i]), pred[i]))
                .collect())
        })
        .collect();

    let mut per_method: Vec<HashMap<Key, f64>> = vec![HashMap::new(); methods.len()];
    for (task, res) in tasks.iter().zip(results) {
        per_method[task.0].extend(res?);
    }

    let mut points = Vec::new();
    for i in 0..m.n_rows() {
        let key = (m.participant[i].clone(), m.state[i], m.grid_index[i]);
        let est: Option<Vec<f64>> = per_method.iter().map(|pm| pm.get(&key).copied()).collect();
        if let Some(calibrated) = est {
            points.push(PointEstimate {
                participant: key.0,
                state: key.1,
                grid_index: key.2,
                t: m.t[i],
                truth: m.target[i],
                raw: m.row(i)[raw_col],
                calibrated,
            });
        }
    }
    points.sort_by(|a, b| {
        a.participant
            .cmp(&b.participant)
            .then(a.grid_index.cmp(&b.grid_index))
            .then(a.state.cmp(&b.state))
    });

    let names: Vec<String> = methods.iter().map(|x| x.name.clone()).collect();
    let mut stats = Vec::new();
    for state in ReportState::ALL {
        let pts: Vec<&PointEstimate> = points.iter().filter(|p| state.contains(p.state)).collect();
        stats.push(method_stats(RAW, state, &pts, |p| p.raw, None)?);
        for (k, name) in names.iter().enumerate() {
            stats.push(method_stats(name, state, &pts, |p| p.calibrated[k], Some(&|p: &PointEstimate| p.raw))?);
        }
    }
    Ok(EvalReport {
        methods: names,
        stats,
        points,
    })
}

fn method_stats(
    name: &str,
    state: ReportState,
    pts: &[&PointEstimate],
    est: impl Fn(&PointEstimate) -> f64,
    raw: Option<&dyn Fn(&PointEstimate) -> f64>,
) -> Result<MethodStats> {
    let mut by_participant: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for p in pts {
        let e = by_participant.entry(&p.participant).or_default();
        e.0 += (est(p) - p.truth).abs();
        e.1 += 1;
    }
    let per_participant: Vec<(String, f64)> =
        by_participant.iter().map(|(k, (s, n))| (k.to_string(), s / *n as f64)).collect();
    let maes: Vec<f64> = per_participant.iter().map(|x| x.1).collect();
    let (mae, se) = mae_se(&maes).unwrap_or((f64::NAN, f64::NAN));
    let (mut reduction, mut test) = (None, None);
    if let Some(raw) = raw {
        let mut raw_pp: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for p in pts {
            let e = raw_pp.entry(&p.participant).or_default();
            e.0 += (raw(p) - p.truth).abs();
            e.1 += 1;
        }
        let raw_maes: Vec<f64> = raw_pp.values().map(|(s, n)| s / *n as f64).collect();
        if let Ok((raw_mae, _)) = mae_se(&raw_maes) {
            reduction = error_reduction(raw_mae, mae).ok();
        }
        let a: Vec<f64> = pts.iter().map(|p| (est(p) - p.truth).abs()).collect();
        let b: Vec<f64> = pts.iter().map(|p| (raw(p) - p.truth).abs()).collect();
        test = paired_t_test(&a, &b).ok();
    }
    let e: Vec<f64> = pts.iter().map(|p| est(p)).collect();
    let t: Vec<f64> = pts.iter().map(|p| p.truth).collect();
    Ok(MethodStats {
        method: name.to_string(),
        state,
        mae,
        se,
        n_points: pts.len(),
        per_participant,
        error_reduction_pct: reduction,
        t_test: test,
        bland_altman: bland_altman_values(&e, &t).ok(),
    })
}
