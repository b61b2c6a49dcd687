use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use statrs::function::gamma::digamma;

use super::{ColumnKind, FeatureMatrix};
use crate::error::{Error, Result};
use crate::io::{fmt_num, fmt_p, CsvWriter, ReportState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FTest {
    pub f: f64,
    pub p: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Univariate linear-regression F test of `y` on `x`.
///
/// `F = r² / (1 - r²) · (n - 2)` with `p` from the upper tail of F(1, n-2).
///
/// ```
/// use hrcal::features::f_test;
/// let x: Vec<f64> = (0..50).map(f64::from).collect();
/// let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
/// assert!(f_test(&x, &y).unwrap().p < 1e-12);
/// ```
pub fn f_test(x: &[f64], y: &[f64]) -> Result<FTest> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Shape(format!("x has {n} values, y has {}", y.len())));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!("F test needs n >= 3, got {n}")));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::DegenerateFeature("constant feature column".into()));
    }
    if syy == 0.0 {
        return Err(Error::DegenerateTarget("constant target".into()));
    }
    let r2 = ((sxy * sxy) / (sxx * syy)).min(1.0);
    let dof = (n - 2) as f64;
    if r2 >= 1.0 {
        return Ok(FTest { f: f64::INFINITY, p: 0.0 });
    }
    let f = r2 / (1.0 - r2) * dof;
    let dist = FisherSnedecor::new(1.0, dof).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(FTest { f, p: dist.sf(f).clamp(0.0, 1.0) })
}

/// Standardizes and adds a 1e-10-scale jitter so tied values do not
/// produce zero neighbour distances. The jitter stream is fixed, so the
/// estimate is deterministic.
fn prepare(v: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = mean(v);
    let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt();
    let s = if sd > 0.0 { sd } else { 1.0 };
    let scaled: Vec<f64> = v.iter().map(|x| x / s).collect();
    let amp = 1e-10 * mean(&scaled.iter().map(|x| x.abs()).collect::<Vec<_>>()).max(1.0);
    scaled
        .into_iter()
        .map(|x| {
            let e: f64 = StandardNormal.sample(rng);
            x + amp * e
        })
        .collect()
}

/// Number of values in `sorted` within the open interval `(c - r, c + r)`.
fn count_within(sorted: &[f64], c: f64, r: f64) -> usize {
    let lo = sorted.partition_point(|&v| v <= c - r);
    let hi = sorted.partition_point(|&v| v < c + r);
    hi.saturating_sub(lo)
}

/// Distance to the k-th nearest other point in 1-D.
fn kth_gap_1d(sorted: &[f64], i: usize, k: usize) -> f64 {
    let (mut l, mut r) = (i, i);
    let mut d = 0.0;
    for _ in 0..k {
        let dl = if l > 0 { sorted[i] - sorted[l - 1] } else { f64::INFINITY };
        let dr = if r + 1 < sorted.len() { sorted[r + 1] - sorted[i] } else { f64::INFINITY };
        if dl <= dr {
            l -= 1;
            d = dl;
        } else {
            r += 1;
            d = dr;
        }
    }
    d
}

/// Kraskov-Stögbauer-Grassberger estimate for two continuous variables,
/// max-norm in the joint space.
fn mi_cc(x: &[f64], y: &[f64], k: usize) -> f64 {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys_o: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut xs_sorted = x.to_vec();
    xs_sorted.sort_by(f64::total_cmp);
    let mut ys_sorted = y.to_vec();
    ys_sorted.sort_by(f64::total_cmp);

    let mut acc = 0.0;
    let mut best = vec![f64::INFINITY; k];
    for p in 0..n {
        best.fill(f64::INFINITY);
        let insert = |best: &mut Vec<f64>, d: f64| {
            if d < best[k - 1] {
                let pos = best.partition_point(|&b| b <= d);
                best.insert(pos, d);
                best.pop();
            }
        };
        let mut lo = p;
        let mut hi = p + 1;
        loop {
            let dl = if lo > 0 { xs[p] - xs[lo - 1] } else { f64::INFINITY };
            let dh = if hi < n { xs[hi] - xs[p] } else { f64::INFINITY };
            let (dx, j) = if dl <= dh { (dl, lo.wrapping_sub(1)) } else { (dh, hi) };
            if !(dx < best[k - 1]) {
                break;
            }
            let d = dx.max((ys_o[j] - ys_o[p]).abs());
            insert(&mut best, d);
            if dl <= dh {
                lo -= 1;
            } else {
                hi += 1;
            }
        }
        let eps = best[k - 1];
        let nx = count_within(&xs_sorted, xs[p], eps) - 1;
        let ny = count_within(&ys_sorted, ys_o[p], eps) - 1;
        acc += digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0);
    }
    (digamma(n as f64) + digamma(k as f64) - acc / n as f64).max(0.0)
}

/// Ross's estimator for a discrete `x` and continuous `y`. Labels seen only
/// once are ignored.
fn mi_cd(labels: &[f64], y: &[f64], k: usize) -> f64 {
    let mut groups: Vec<(f64, Vec<f64>)> = Vec::new();
    for (&l, &v) in labels.iter().zip(y) {
        match groups.iter_mut().find(|(g, _)| *g == l) {
            Some((_, vs)) => vs.push(v),
            None => groups.push((l, vec![v])),
        }
    }
    let kept: Vec<&(f64, Vec<f64>)> = groups.iter().filter(|(_, v)| v.len() > 1).collect();
    let n: usize = kept.iter().map(|(_, v)| v.len()).sum();
    if n == 0 {
        return 0.0;
    }
    let mut all: Vec<f64> = kept.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    let (mut s_k, mut s_label, mut s_m) = (0.0, 0.0, 0.0);
    for (_, vs) in kept {
        let mut sorted = vs.clone();
        sorted.sort_by(f64::total_cmp);
        let kk = k.min(sorted.len() - 1);
        for i in 0..sorted.len() {
            let r = kth_gap_1d(&sorted, i, kk);
            let m = count_within(&all, sorted[i], r);
            s_k += digamma(kk as f64);
            s_label += digamma(sorted.len() as f64);
            s_m += digamma(m as f64);
        }
    }
    let nf = n as f64;
    (digamma(nf) + (s_k - s_label - s_m) / nf).max(0.0)
}

/// k-nearest-neighbour mutual information in nats between a feature and a
/// continuous target. `discrete` selects the estimator for categorical
/// features. Negative raw estimates are clamped to zero.
pub fn mutual_information(x: &[f64], y: &[f64], k: usize, discrete: bool) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Shape(format!("x has {n} values, y has {}", y.len())));
    }
    if k == 0 {
        return Err(Error::Config("MI needs k >= 1".into()));
    }
    if n <= k {
        return Err(Error::InsufficientData(format!("MI needs n > k, got n={n}, k={k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let yj = prepare(y, &mut rng);
    if discrete {
        Ok(mi_cd(x, &yj, k))
    } else {
        let xj = prepare(x, &mut rng);
        Ok(mi_cc(&xj, &yj, k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub p_threshold: f64,
    pub mi_threshold: f64,
    pub k: usize,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            p_threshold: 0.05,
            mi_threshold: 0.3,
            k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub feature: String,
    pub state: ReportState,
    pub f_statistic: f64,
    pub p_value: f64,
    pub mi_nats: f64,
    /// The column was constant in this state (reported as p = 1, MI = 0).
    pub degenerate: bool,
    pub selected: bool,
}

/// Per (feature, state) test results on one set of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub entries: Vec<SelectionEntry>,
    /// Participants whose rows produced the report.
    pub participants: Vec<String>,
}

impl SelectionReport {
    pub fn get(&self, feature: &str, state: ReportState) -> Option<&SelectionEntry> {
        self.entries.iter().find(|e| e.feature == feature && e.state == state)
    }

    /// Features selected in `state`, in column order.
    pub fn selected(&self, state: ReportState) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.state == state && e.selected)
            .map(|e| e.feature.clone())
            .collect()
    }
}

/// Runs both dependency tests for every column on the rows of one state. A
/// feature is selected when `p < p_threshold` or `MI > mi_threshold`.
pub fn select_in_state(matrix: &FeatureMatrix, state: ReportState, opts: &SelectionOptions) -> Result<Vec<SelectionEntry>> {
    let sub = matrix.filter_state(state);
    let mut entries = Vec::new();
    for (j, name) in matrix.names.iter().enumerate() {
        let x = sub.column(j);
        let discrete = matrix.kinds[j] == ColumnKind::Categorical;
        let (f, p, degenerate) = match f_test(&x, &sub.target) {
            Ok(r) => (r.f, r.p, false),
            Err(Error::DegenerateFeature(_)) | Err(Error::DegenerateTarget(_)) | Err(Error::InsufficientData(_)) => {
                (0.0, 1.0, true)
            }
            Err(e) => return Err(e),
        };
        let mi = if degenerate || sub.n_rows() <= opts.k {
            0.0
        } else {
            mutual_information(&x, &sub.target, opts.k, discrete)?
        };
        entries.push(SelectionEntry {
            feature: name.clone(),
            state,
            f_statistic: f,
            p_value: p,
            mi_nats: mi,
            degenerate,
            selected: p < opts.p_threshold || mi > opts.mi_threshold,
        });
    }
    Ok(entries)
}

/// [`select_in_state`] for RS, LS, IS and all rows together.
pub fn select_features(matrix: &FeatureMatrix, opts: &SelectionOptions) -> Result<SelectionReport> {
    let mut entries = Vec::new();
    for state in ReportState::ALL {
        entries.extend(select_in_state(matrix, state, opts)?);
    }
    Ok(SelectionReport {
        entries,
        participants: matrix.participants(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub feature: String,
    pub state: ReportState,
    pub p_mean: f64,
    pub p_se: f64,
    pub mi_mean: f64,
    pub mi_se: f64,
    pub linear_pass: bool,
    pub mi_pass: bool,
    /// Folds in which the feature was selected.
    pub selected_folds: usize,
    pub n_folds: usize,
}

/// Mean ± SE across folds of each (feature, state) test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub entries: Vec<SummaryEntry>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = mean(v);
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Aggregates per-fold reports. Pass markers use the fold means against the
/// thresholds.
pub fn aggregate_selection(reports: &[SelectionReport], opts: &SelectionOptions) -> SelectionSummary {
    let Some(first) = reports.first() else {
        return SelectionSummary { entries: Vec::new() };
    };
    let entries = first
        .entries
        .iter()
        .map(|e| {
            let found: Vec<&SelectionEntry> = reports.iter().filter_map(|r| r.get(&e.feature, e.state)).collect();
            let (p_mean, p_se) = mean_se(&found.iter().map(|x| x.p_value).collect::<Vec<_>>());
            let (mi_mean, mi_se) = mean_se(&found.iter().map(|x| x.mi_nats).collect::<Vec<_>>());
            SummaryEntry {
                feature: e.feature.clone(),
                state: e.state,
                p_mean,
                p_se,
                mi_mean,
                mi_se,
                linear_pass: p_mean < opts.p_threshold,
                mi_pass: mi_mean > opts.mi_threshold,
                selected_folds: found.iter().filter(|x| x.selected).count(),
                n_folds: found.len(),
            }
        })
        .collect();
    SelectionSummary { entries }
}

/// Wide CSV: one row per feature, for each state the mean p-value and MI
/// with their SE and pass markers (`*` linear test, `+` MI test).
pub fn write_selection_csv(summary: &SelectionSummary, path: &Path) -> Result<()> {
    let mut header = String::from("feature");
    for s in ReportState::ALL {
        for col in ["p", "p_se", "linear", "mi", "mi_se", "dependency", "selected_folds"] {
            header.push_str(&format!(",{s}_{col}"));
        }
    }
    let mut w = CsvWriter::create(path, &header)?;
    let mut features: Vec<&str> = Vec::new();
    for e in &summary.entries {
        if !features.contains(&e.feature.as_str()) {
            features.push(&e.feature);
        }
    }
    for f in features {
        let mut line = f.to_string();
        for s in ReportState::ALL {
            match summary.entries.iter().find(|e| e.feature == f && e.state == s) {
                Some(e) => line.push_str(&format!(
                    ",{},{},{},{},{},{},{}",
                    fmt_p(e.p_mean),
                    fmt_p(e.p_se),
                    if e.linear_pass { "*" } else { "" },
                    fmt_num(e.mi_mean),
                    fmt_num(e.mi_se),
                    if e.mi_pass { "+" } else { "" },
                    e.selected_folds
                )),
                None => line.push_str(",,,,,,,"),
            }
        }
        w.line(&line)?;
    }
    w.finish()
}
