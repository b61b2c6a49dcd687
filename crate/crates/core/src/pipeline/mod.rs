//! Configuration and end-to-end orchestration: cohort, ground truth,
//! features, selection, grid search, evaluation and report files.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{Miscalibration, PipelineConfig};

use crate::error::{Error, Result};
use crate::eval::{
    evaluate, grid_search, make_folds, mae_se, pairwise_diffs, rm_anova, EvalReport, FoldPlan, GridResult,
    MethodSpec, PairwiseDiff, Preprocess, StatTestResult,
};
use crate::features::{
    aggregate_selection, assemble_matrix, build_rolling_windows, select_features, select_in_state,
    write_selection_csv, FeatureMatrix, SelectionSummary, WindowSpec,
};
use crate::io::{
    fmt_fixed, fmt_num, load_cohort, write_bland_altman_csv, write_device_table, write_grid_csv,
    write_pairwise_table, write_report, write_timeseries_csv, ActivityState, CsvWriter, DeviceStateError,
    ReportState, SessionRecord, ValidationOptions,
};
use crate::models::{fit_model, TrainedModel};
use crate::signal::{align_indices, extract_truth_hr, HeartRateSeries};
use crate::synth::{generate_cohort, inject_known_miscalibration, GroundTruth};

/// Files written by [`run`], in writing order.
pub const RUN_FILES: [&str; 5] = [
    "selection.csv",
    "grid_search.csv",
    "eval_report.csv",
    "bland_altman.csv",
    "timeseries.csv",
];

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            source: Box::new(e),
        },
    })
}

/// The synthetic cohort of `cfg` with its miscalibration applied.
pub fn synthesize(cfg: &PipelineConfig) -> Result<Vec<(SessionRecord, GroundTruth)>> {
    let cohort = generate_cohort(&cfg.cohort())?;
    let m = cfg.miscalibration;
    if m.is_identity() {
        return Ok(cohort);
    }
    cohort
        .into_par_iter()
        .map(|(s, g)| {
            let s = inject_known_miscalibration(&s, &g, |c| {
                let extra = if c.state == ActivityState::IS {
                    m.is_bias_bpm + m.is_cpm_gain * c.cpm / 1000.0
                } else {
                    0.0
                };
                m.scale * c.device_bpm + extra
            })?;
            Ok((s, g))
        })
        .collect()
}

/// Sessions from `data_dir`, or the synthetic cohort when none is set.
pub fn load_sessions(cfg: &PipelineConfig) -> Result<Vec<SessionRecord>> {
    match &cfg.data_dir {
        Some(dir) => {
            let sessions = stage("load", load_cohort(dir))?;
            for s in &sessions {
                for w in stage("load", s.validate(&ValidationOptions::default()))? {
                    log::warn!("{w}");
                }
            }
            if sessions.is_empty() {
                return Err(Error::Stage {
                    stage: "load",
                    source: Box::new(Error::InsufficientData(format!("no sessions under {}", dir.display()))),
                });
            }
            Ok(sessions)
        }
        None => Ok(stage("synth", synthesize(cfg))?.into_iter().map(|(s, _)| s).collect()),
    }
}

/// ECG-derived truth on the analysis grid, one series per session.
pub fn extract(sessions: &[SessionRecord], cfg: &PipelineConfig) -> Result<Vec<HeartRateSeries>> {
    stage(
        "extract",
        sessions
            .par_iter()
            .map(|s| extract_truth_hr(s, &cfg.extraction).map_err(|e| Error::Validation(format!("{}: {e}", s.id()))))
            .collect(),
    )
}

pub fn build_features(sessions: &[SessionRecord], truths: &[HeartRateSeries], cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    let pairs: Vec<(&SessionRecord, &HeartRateSeries)> = sessions.iter().zip(truths).collect();
    stage("features", assemble_matrix(&pairs, &cfg.features))
}

/// Everything needed downstream of the raw recordings.
pub struct Prepared {
    pub sessions: Vec<SessionRecord>,
    pub truths: Vec<HeartRateSeries>,
    pub matrix: FeatureMatrix,
    pub plan: FoldPlan,
}

pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    stage("config", cfg.validate())?;
    let sessions = load_sessions(cfg)?;
    let truths = extract(&sessions, cfg)?;
    let matrix = build_features(&sessions, &truths, cfg)?;
    let plan = stage("folds", make_folds(&matrix.participants(), cfg.seed))?;
    log::info!("{} sessions, {} feature rows", sessions.len(), matrix.n_rows());
    Ok(Prepared {
        sessions,
        truths,
        matrix,
        plan,
    })
}

/// Runs the selection tests on every fold's training rows and averages them.
pub fn selection_summary(m: &FeatureMatrix, plan: &FoldPlan, cfg: &PipelineConfig) -> Result<SelectionSummary> {
    let reports = plan
        .folds
        .par_iter()
        .map(|f| {
            let ids: Vec<&str> = f.train.iter().map(String::as_str).collect();
            select_features(&m.filter_participants(&ids), &cfg.selection)
        })
        .collect::<Result<Vec<_>>>();
    Ok(aggregate_selection(&stage("select", reports)?, &cfg.selection))
}

/// The methods named by the configuration with their preprocessing.
pub fn method_variants(cfg: &PipelineConfig) -> Vec<(String, Preprocess)> {
    let base = Preprocess {
        selection: cfg.selection_enabled.then_some(cfg.selection),
        ..Preprocess::default()
    };
    let mut out = Vec::new();
    if cfg.plain {
        out.push(("ml".to_string(), base.clone()));
    }
    for &w in &cfg.windows {
        out.push((
            format!("rolling_{w}"),
            Preprocess {
                window: Some(WindowSpec::new(w)),
                ..base.clone()
            },
        ));
    }
    out
}

/// Grid search outcome of one method.
pub struct MethodSearch {
    pub name: String,
    pub pre: Preprocess,
    pub per_state: Vec<(ActivityState, GridResult)>,
}

impl MethodSearch {
    pub fn method(&self) -> MethodSpec {
        MethodSpec {
            name: self.name.clone(),
            models: self.per_state.iter().map(|(s, r)| (*s, r.best.clone())).collect(),
            pre: self.pre.clone(),
        }
    }
}

fn grid_plan(plan: &FoldPlan, cfg: &PipelineConfig) -> FoldPlan {
    let n = if cfg.grid_folds == 0 { plan.folds.len() } else { cfg.grid_folds.min(plan.folds.len()) };
    FoldPlan {
        folds: plan.folds[..n].to_vec(),
        seed: plan.seed,
    }
}

/// Per method and state, the grid spec with the lowest validation MAE.
pub fn search(m: &FeatureMatrix, plan: &FoldPlan, cfg: &PipelineConfig) -> Result<Vec<MethodSearch>> {
    if cfg.grid.is_empty() {
        return Err(Error::Stage {
            stage: "grid",
            source: Box::new(Error::Config("empty grid".into())),
        });
    }
    let gp = grid_plan(plan, cfg);
    let mut out = Vec::new();
    for (name, pre) in method_variants(cfg) {
        let mut per_state = Vec::new();
        for state in ActivityState::ALL {
            let r = stage("grid", grid_search(&cfg.grid, &gp, m, state, &pre))?;
            log::info!("{name} {state}: {} (validation MAE {:?})", r.best, r.entries[r.best_index].mean_mae);
            per_state.push((state, r));
        }
        out.push(MethodSearch { name, pre, per_state });
    }
    Ok(out)
}

pub fn write_grid(searches: &[MethodSearch], path: &Path) -> Result<()> {
    let rows: Vec<(&str, ActivityState, &GridResult)> = searches
        .iter()
        .flat_map(|s| s.per_state.iter().map(move |(st, r)| (s.name.as_str(), *st, r)))
        .collect();
    write_grid_csv(&rows, path)
}

pub fn evaluate_methods(m: &FeatureMatrix, plan: &FoldPlan, searches: &[MethodSearch]) -> Result<EvalReport> {
    let methods: Vec<MethodSpec> = searches.iter().map(MethodSearch::method).collect();
    stage("evaluate", evaluate(m, plan, &methods))
}

/// Writes the evaluation table, Bland-Altman summary and time series.
pub fn write_eval(report: &EvalReport, out: &Path) -> Result<()> {
    write_report(report, &out.join("eval_report.csv"))?;
    write_bland_altman_csv(report, &out.join("bland_altman.csv"))?;
    write_timeseries_csv(report, &out.join("timeseries.csv"))
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// The full pipeline. Writes [`RUN_FILES`] into `out` and returns the
/// evaluation report.
pub fn run(cfg: &PipelineConfig, out: &Path) -> Result<EvalReport> {
    if cfg.grid.is_empty() {
        return Err(Error::Stage {
            stage: "config",
            source: Box::new(Error::Config("empty grid".into())),
        });
    }
    let p = prepare(cfg)?;
    let summary = selection_summary(&p.matrix, &p.plan, cfg)?;
    let searches = search(&p.matrix, &p.plan, cfg)?;
    let report = evaluate_methods(&p.matrix, &p.plan, &searches)?;
    stage("report", ensure_dir(out))?;
    stage("report", write_selection_csv(&summary, &out.join(RUN_FILES[0])))?;
    stage("report", write_grid(&searches, &out.join(RUN_FILES[1])))?;
    stage("report", write_eval(&report, out))?;
    Ok(report)
}

/// Writes one `<id>.csv` (`t,bpm,state`) of grid-aligned truth per session.
pub fn write_truths(sessions: &[SessionRecord], truths: &[HeartRateSeries], out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let mut paths = Vec::new();
    for (s, h) in sessions.iter().zip(truths) {
        let path = out.join(format!("{}.csv", s.id()));
        let mut w = CsvWriter::create(&path, "t,bpm,state")?;
        for (t, v) in h.iter() {
            let st = s.schedule.state_at(t).map(|x| x.as_str()).unwrap_or("");
            w.line(&format!("{},{},{st}", fmt_num(t), fmt_num(v)))?;
        }
        w.finish()?;
        paths.push(path);
    }
    Ok(paths)
}

/// Feature matrix as CSV: row keys, the target, then every column.
pub fn write_features(m: &FeatureMatrix, path: &Path) -> Result<()> {
    let mut header = String::from("participant,state,t,grid_index,target");
    for n in &m.names {
        header.push(',');
        header.push_str(n);
    }
    let mut w = CsvWriter::create(path, &header)?;
    let mut line = String::new();
    for i in 0..m.n_rows() {
        line.clear();
        let _ = write!(line, "{},{},{},{},{}", m.participant[i], m.state[i], fmt_num(m.t[i]), m.grid_index[i], fmt_num(m.target[i]));
        for v in m.row(i) {
            let _ = write!(line, ",{}", fmt_num(*v));
        }
        w.line(&line)?;
    }
    w.finish()
}

/// Applies a method's preprocessing to every row of `state`, using all of
/// them for selection.
pub fn preprocess_all(m: &FeatureMatrix, state: ActivityState, pre: &Preprocess) -> Result<FeatureMatrix> {
    let rows = m.filter_state(ReportState::One(state));
    let names: Vec<String> = match &pre.selection {
        Some(opts) => {
            let entries = select_in_state(&rows, ReportState::One(state), opts)?;
            m.names
                .iter()
                .filter(|n| pre.always_keep.contains(n) || entries.iter().any(|e| &e.feature == *n && e.selected))
                .cloned()
                .collect()
        }
        None => m.names.clone(),
    };
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let rows = rows.select_columns(&refs)?;
    match &pre.window {
        Some(w) => {
            let spec = WindowSpec {
                rolled_columns: w.rolled_columns.iter().filter(|c| names.contains(c)).cloned().collect(),
                ..w.clone()
            };
            build_rolling_windows(&rows, &spec)
        }
        None => Ok(rows),
    }
}

/// Fits each method's selected spec per state on every participant and
/// saves `<method>_<state>.json`.
pub fn train_final(p: &Prepared, searches: &[MethodSearch], cfg: &PipelineConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let mut jobs = Vec::new();
    for s in searches {
        for (state, r) in &s.per_state {
            jobs.push((s, *state, r));
        }
    }
    let fitted: Vec<Result<(PathBuf, TrainedModel)>> = jobs
        .par_iter()
        .map(|(s, state, r)| {
            let rows = preprocess_all(&p.matrix, *state, &s.pre)?;
            let model = fit_model(&r.best, &rows, None, cfg.seed, None)?;
            Ok((out.join(format!("{}_{state}.json", s.name)), model))
        })
        .collect();
    let mut paths = Vec::new();
    for f in fitted {
        let (path, model) = stage("train", f)?;
        for w in &model.meta.warnings {
            log::warn!("{}: {w}", path.display());
        }
        model.save(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Device-validation tables: MAE ± SE per device and state, and pairwise
/// device comparisons with a repeated-measures F per state.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceValidation {
    pub devices: Vec<String>,
    pub errors: Vec<DeviceStateError>,
    pub anova: Vec<(ReportState, StatTestResult)>,
    pub pairwise: Vec<(ReportState, PairwiseDiff)>,
}

/// Per participant and device, the MAE against the truth in each report
/// state (`NaN` where the device has no grid point).
fn device_maes(
    sessions: &[SessionRecord],
    truths: &[HeartRateSeries],
    devices: &[String],
    cfg: &PipelineConfig,
) -> Vec<BTreeMap<(usize, ReportState), f64>> {
    let step = cfg.extraction.grid_step_s;
    sessions
        .iter()
        .zip(truths)
        .map(|(s, truth)| {
            let mut out = BTreeMap::new();
            for (d, name) in devices.iter().enumerate() {
                let Some((_, series)) = s.devices().find(|(n, _)| n == name) else { continue };
                let by_k: BTreeMap<i64, f64> = align_indices(&series.t, step, cfg.extraction.grid_tolerance_s)
                    .into_iter()
                    .map(|(k, i)| (k, series.v[i]))
                    .collect();
                let mut acc: BTreeMap<ReportState, (f64, usize)> = BTreeMap::new();
                for (t, v) in truth.iter() {
                    let k = (t / step).round() as i64;
                    let (Some(&dev), Some(state)) = (by_k.get(&k), s.schedule.state_at(k as f64 * step)) else {
                        continue;
                    };
                    for rs in [ReportState::One(state), ReportState::All] {
                        let e = acc.entry(rs).or_default();
                        e.0 += (dev - v).abs();
                        e.1 += 1;
                    }
                }
                for (rs, (sum, n)) in acc {
                    out.insert((d, rs), sum / n as f64);
                }
            }
            out
        })
        .collect()
}

pub fn validate_devices(sessions: &[SessionRecord], truths: &[HeartRateSeries], cfg: &PipelineConfig) -> Result<DeviceValidation> {
    let mut devices: Vec<String> = Vec::new();
    for s in sessions {
        for (n, _) in s.devices() {
            if !devices.iter().any(|d| d == n) {
                devices.push(n.to_string());
            }
        }
    }
    let per_participant = device_maes(sessions, truths, &devices, cfg);
    let mut errors = Vec::new();
    let (mut anova, mut pairwise) = (Vec::new(), Vec::new());
    for state in ReportState::ALL {
        for (d, name) in devices.iter().enumerate() {
            let v: Vec<f64> = per_participant.iter().filter_map(|pp| pp.get(&(d, state)).copied()).collect();
            let (mae, se) = mae_se(&v).unwrap_or((f64::NAN, f64::NAN));
            errors.push(DeviceStateError {
                device: name.clone(),
                state,
                mae,
                se,
                n: v.len(),
            });
        }
        if devices.len() < 2 {
            continue;
        }
        let table: Vec<Vec<f64>> = per_participant
            .iter()
            .map(|pp| (0..devices.len()).map(|d| pp.get(&(d, state)).copied().unwrap_or(f64::NAN)).collect())
            .collect();
        if let Ok((f, dropped)) = rm_anova(&table) {
            if dropped > 0 {
                log::warn!("{state}: {dropped} participants lack a device and were left out of the ANOVA");
            }
            anova.push((state, f));
        }
        pairwise.extend(pairwise_diffs(&table, &devices)?.into_iter().map(|d| (state, d)));
    }
    if devices.len() < 2 {
        log::warn!("only one device stream; the pairwise table is empty");
    }
    Ok(DeviceValidation {
        devices,
        errors,
        anova,
        pairwise,
    })
}

/// Device validation from the configuration; writes
/// `device_validation.csv` and `device_pairwise.csv`.
pub fn run_validation(cfg: &PipelineConfig, out: &Path) -> Result<DeviceValidation> {
    stage("config", cfg.validate())?;
    let sessions = load_sessions(cfg)?;
    let truths = extract(&sessions, cfg)?;
    let v = stage("validate", validate_devices(&sessions, &truths, cfg))?;
    stage("report", ensure_dir(out))?;
    stage("report", write_device_table(&v.errors, &out.join("device_validation.csv")))?;
    stage("report", write_pairwise_table(&v.pairwise, &v.anova, &out.join("device_pairwise.csv")))?;
    Ok(v)
}

/// One-line summary of an evaluation for logs and the terminal.
pub fn summarize(report: &EvalReport) -> String {
    let mut s = String::new();
    for state in ReportState::ALL {
        let raw = report.get(crate::eval::RAW, state).map(|r| r.mae).unwrap_or(f64::NAN);
        let _ = write!(s, "{state}: raw {}", fmt_fixed(raw, 2));
        for m in &report.methods {
            if let Some(r) = report.get(m, state) {
                let _ = write!(s, ", {m} {}", fmt_fixed(r.mae, 2));
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PipelineConfig {
        PipelineConfig::parse(
            "synth.participants = 4\nsynth.rs_minutes = 4\nsynth.ls_minutes = 4,5\n\
             synth.treadmill = 0:2,8:4\nsynth.extra_device = watch:1,1,1\nwindows = 3\n\
             grid = knn:n_neighbors=5,p=2\n",
        )
        .unwrap()
    }

    #[test]
    fn stage_errors_are_named() {
        let mut cfg = tiny();
        cfg.grid.clear();
        let dir = tempfile::tempdir().unwrap();
        let e = run(&cfg, dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("empty grid"));
        cfg.data_dir = Some(dir.path().join("missing"));
        cfg.grid.push("knn:n_neighbors=5,p=2".parse().unwrap());
        let e = run(&cfg, dir.path()).unwrap_err();
        assert!(e.to_string().starts_with("load:"), "{e}");
    }

    #[test]
    fn tiny_run_writes_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let report = run(&tiny(), dir.path()).unwrap();
        assert_eq!(report.methods, ["ml", "rolling_3"]);
        for f in RUN_FILES {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let v = run_validation(&tiny(), dir.path()).unwrap();
        assert_eq!(v.devices, ["device", "watch"]);
        assert_eq!(v.pairwise.len(), 4);
    }
}
