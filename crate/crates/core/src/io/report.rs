//! Report tables. Every writer has a fixed header and column order and
//! formats numbers without locale, so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::csvio::{fmt_fixed, fmt_num, fmt_p, CsvWriter};
use super::session::{ActivityState, ReportState};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, GridResult, MethodStats, PairwiseDiff, StatTestResult, RAW};

/// Header of the evaluation table.
pub fn eval_header() -> String {
    let mut h = String::from("method");
    for s in ReportState::ALL {
        for col in ["mae", "se", "sig", "reduction_pct", "p"] {
            let _ = write!(h, ",{s}_{col}");
        }
    }
    h
}

fn method_order(report: &EvalReport) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for s in &report.stats {
        if !out.contains(&s.method.as_str()) {
            out.push(&s.method);
        }
    }
    out
}

fn eval_cells(s: Option<&MethodStats>) -> [String; 5] {
    let Some(s) = s else { return Default::default() };
    let num = |v: f64| if v.is_finite() { fmt_fixed(v, 2) } else { String::new() };
    let sig = s.t_test.is_some_and(|t| t.significant && s.error_reduction_pct.is_some_and(|r| r > 0.0));
    [
        num(s.mae),
        num(s.se),
        if sig { "*".into() } else { String::new() },
        s.error_reduction_pct.map(num).unwrap_or_default(),
        s.t_test.map(|t| fmt_p(t.p_value)).unwrap_or_default(),
    ]
}

/// One row per method, for each state the MAE and SE (two decimals), `*`
/// when the error reduction against the raw device is significant, the
/// reduction in percent and the p-value.
pub fn eval_csv(report: &EvalReport) -> String {
    let mut out = eval_header();
    out.push('\n');
    for m in method_order(report) {
        out.push_str(m);
        for s in ReportState::ALL {
            for c in eval_cells(report.get(m, s)) {
                out.push(',');
                out.push_str(&c);
            }
        }
        out.push('\n');
    }
    out
}

/// The same table as markdown with `MAE ± SE` cells.
pub fn eval_markdown(report: &EvalReport) -> String {
    let mut out = String::from("| Method |");
    for s in ReportState::ALL {
        let _ = write!(out, " {s} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(ReportState::ALL.len()));
    out.push('\n');
    for m in method_order(report) {
        let _ = write!(out, "| {m} |");
        for s in ReportState::ALL {
            let [mae, se, sig, ..] = eval_cells(report.get(m, s));
            if mae.is_empty() {
                out.push_str(" |");
            } else {
                let _ = write!(out, " {sig}{mae} ± {se} |");
            }
        }
        out.push('\n');
    }
    if report.stats.iter().any(|s| s.method != RAW) {
        let _ = writeln!(out, "\n\\* significant error reduction against the raw device (paired t-test, p < 0.05)");
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the evaluation table, as markdown when `path` ends in `.md` and
/// as CSV otherwise.
///
/// ```
/// let report = hrcal::eval::EvalReport { methods: vec![], stats: vec![], points: vec![] };
/// let dir = tempfile::tempdir().unwrap();
/// let path = dir.path().join("eval.csv");
/// hrcal::io::write_report(&report, &path).unwrap();
/// assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
/// ```
pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let text = if path.extension().is_some_and(|e| e == "md") {
        eval_markdown(report)
    } else {
        eval_csv(report)
    };
    write_text(path, &text)
}

pub const GRID_HEADER: &str = "method,state,algorithm,spec,mean_mae,se,folds_ok,folds_failed,best";

/// Validation MAE of every grid spec per method and state, in grid order;
/// `*` marks the selected spec.
pub fn write_grid_csv(results: &[(&str, ActivityState, &GridResult)], path: &Path) -> Result<()> {
    let mut w = CsvWriter::create(path, GRID_HEADER)?;
    for (method, state, r) in results {
        for (i, e) in r.entries.iter().enumerate() {
            let ok = e.fold_mae.iter().flatten().count();
            let opt = |v: Option<f64>| v.map(|x| fmt_fixed(x, 4)).unwrap_or_default();
            w.line(&format!(
                "{method},{state},{},\"{}\",{},{},{ok},{},{}",
                e.spec.algorithm(),
                e.spec,
                opt(e.mean_mae),
                opt(e.se),
                e.fold_mae.len() - ok,
                if i == r.best_index { "*" } else { "" }
            ))?;
        }
    }
    w.finish()
}

pub const BLAND_ALTMAN_HEADER: &str = "method,state,n,mean_diff,sd_diff,loa_low,loa_high,n_outside";

/// Agreement of every method (raw device included) with the truth.
pub fn write_bland_altman_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = CsvWriter::create(path, BLAND_ALTMAN_HEADER)?;
    for m in method_order(report) {
        for s in ReportState::ALL {
            let Some(ba) = report.get(m, s).and_then(|x| x.bland_altman) else { continue };
            w.line(&format!(
                "{m},{s},{},{},{},{},{},{}",
                ba.n,
                fmt_fixed(ba.mean_diff, 4),
                fmt_fixed(ba.sd_diff, 4),
                fmt_fixed(ba.loa_low, 4),
                fmt_fixed(ba.loa_high, 4),
                ba.n_outside
            ))?;
        }
    }
    w.finish()
}

/// Per grid point of every test participant: truth, raw device and each
/// calibrated estimate.
pub fn write_timeseries_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut header = String::from("participant,state,t,truth,raw");
    for m in &report.methods {
        header.push(',');
        header.push_str(m);
    }
    let mut w = CsvWriter::create(path, &header)?;
    let mut line = String::new();
    for p in &report.points {
        line.clear();
        let _ = write!(line, "{},{},{},{},{}", p.participant, p.state, fmt_num(p.t), fmt_fixed(p.truth, 3), fmt_fixed(p.raw, 3));
        for v in &p.calibrated {
            let _ = write!(line, ",{}", fmt_fixed(*v, 3));
        }
        w.line(&line)?;
    }
    w.finish()
}

/// MAE ± SE of one device in one state across participants.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceStateError {
    pub device: String,
    pub state: ReportState,
    pub mae: f64,
    pub se: f64,
    /// Participants with coverage in this state.
    pub n: usize,
}

pub const DEVICE_HEADER: &str = "device,state,mae,se,n";

/// Device validation table; states without coverage are written with `n`
/// 0 and empty MAE and SE.
pub fn write_device_table(rows: &[DeviceStateError], path: &Path) -> Result<()> {
    let mut w = CsvWriter::create(path, DEVICE_HEADER)?;
    for r in rows {
        if r.n == 0 {
            w.line(&format!("{},{},,,0", r.device, r.state))?;
        } else {
            w.line(&format!("{},{},{},{},{}", r.device, r.state, fmt_fixed(r.mae, 2), fmt_fixed(r.se, 2), r.n))?;
        }
    }
    w.finish()
}

pub const PAIRWISE_HEADER: &str = "state,a,b,mean_diff,se,n,t,p,sig";

/// Pairwise device comparisons, unadjusted. An omnibus repeated-measures
/// row per state has `b` set to `ANOVA` and carries F in the `t` column.
pub fn write_pairwise_table(rows: &[(ReportState, PairwiseDiff)], anova: &[(ReportState, StatTestResult)], path: &Path) -> Result<()> {
    let mut w = CsvWriter::create(path, PAIRWISE_HEADER)?;
    for s in ReportState::ALL {
        if let Some((_, f)) = anova.iter().find(|(x, _)| *x == s) {
            w.line(&format!(
                "{s},,ANOVA,,,,{},{},{}",
                fmt_fixed(f.statistic, 3),
                fmt_p(f.p_value),
                if f.significant { "*" } else { "" }
            ))?;
        }
        for (_, d) in rows.iter().filter(|(x, _)| *x == s) {
            let (t, p, sig) = match d.test {
                Some(r) => (fmt_fixed(r.statistic, 3), fmt_p(r.p_value), if r.significant { "*" } else { "" }),
                None => Default::default(),
            };
            let num = |v: f64| if v.is_finite() { fmt_fixed(v, 2) } else { String::new() };
            w.line(&format!("{s},{},{},{},{},{},{t},{p},{sig}", d.a, d.b, num(d.mean_diff), num(d.se), d.n))?;
        }
    }
    w.finish()
}
