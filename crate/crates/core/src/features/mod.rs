//! The 15-second feature grid: assembly from processed sessions, feature
//! selection, training-set standardization and rolling windows.

mod rolling;
mod scale;
mod select;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use rolling::{build_rolling_windows, segment_lengths, WindowSpec};
pub use scale::{apply_scaler, fit_scaler, ScalerStats};
pub use select::{
    aggregate_selection, f_test, mutual_information, select_features, select_in_state, write_selection_csv, FTest,
    SelectionEntry, SelectionOptions, SelectionReport, SelectionSummary, SummaryEntry,
};

use crate::activity::{classify_pal, compute_counts, interval_value, steps_per_minute, CountConfig, PalScheme};
use crate::error::{Error, Result};
use crate::io::{ActivityState, ReportState, SampledSeries, SessionRecord};
use crate::signal::{align_indices, HeartRateSeries};

pub const DEVICE_HR: &str = "device_hr";
pub const PAL: &str = "pal";
pub const STEP_RATE: &str = "step_rate";
pub const GENDER: &str = "gender";
pub const PSQI: &str = "psqi";
pub const BMI: &str = "bmi";

/// Name of the sensor-fusion PAL column for a scheme.
pub fn fusion_column(scheme: PalScheme) -> String {
    format!("fusion_pal_{}", scheme.name())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    /// Ordinal or binary codes; never standardized.
    Categorical,
}

/// Rows on the 15 s grid with named feature columns and the ECG target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    /// Row-major, `n_rows * names.len()` cells.
    pub data: Vec<f64>,
    pub target: Vec<f64>,
    pub t: Vec<f64>,
    pub grid_index: Vec<i64>,
    pub state: Vec<ActivityState>,
    pub participant: Vec<String>,
}

impl FeatureMatrix {
    pub fn empty(names: Vec<String>, kinds: Vec<ColumnKind>) -> Self {
        Self {
            names,
            kinds,
            data: Vec::new(),
            target: Vec::new(),
            t: Vec::new(),
            grid_index: Vec::new(),
            state: Vec::new(),
            participant: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n_rows()).map(|i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn push_row(&mut self, row: &[f64], target: f64, t: f64, grid_index: i64, state: ActivityState, participant: &str) {
        debug_assert_eq!(row.len(), self.n_cols());
        self.data.extend_from_slice(row);
        self.target.push(target);
        self.t.push(t);
        self.grid_index.push(grid_index);
        self.state.push(state);
        self.participant.push(participant.to_string());
    }

    /// Rows at `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut out = Self::empty(self.names.clone(), self.kinds.clone());
        for &i in idx {
            out.push_row(self.row(i), self.target[i], self.t[i], self.grid_index[i], self.state[i], &self.participant[i]);
        }
        out
    }

    pub fn filter_rows(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.n_rows()).filter(|&i| keep(i)).collect();
        self.select_rows(&idx)
    }

    pub fn filter_state(&self, state: ReportState) -> Self {
        self.filter_rows(|i| state.contains(self.state[i]))
    }

    pub fn filter_participants(&self, ids: &[&str]) -> Self {
        self.filter_rows(|i| ids.contains(&self.participant[i].as_str()))
    }

    /// Keeps the named columns, in the given order.
    pub fn select_columns(&self, names: &[&str]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| self.col_index(n).ok_or_else(|| Error::Shape(format!("no column {n:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut out = self.clone();
        out.names = idx.iter().map(|&j| self.names[j].clone()).collect();
        out.kinds = idx.iter().map(|&j| self.kinds[j]).collect();
        out.data = self.rows().flat_map(|r| idx.iter().map(move |&j| r[j])).collect();
        Ok(out)
    }

    /// Distinct participant ids in order of first appearance.
    pub fn participants(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for p in &self.participant {
            if !seen.contains(p) {
                seen.push(p.clone());
            }
        }
        seen
    }

    /// Concatenates matrices with identical columns.
    pub fn concat(parts: &[FeatureMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InsufficientData("nothing to concatenate".into()))?;
        let mut out = Self::empty(first.names.clone(), first.kinds.clone());
        for p in parts {
            if p.names != out.names {
                return Err(Error::Shape("column names differ between matrices".into()));
            }
            for i in 0..p.n_rows() {
                out.push_row(p.row(i), p.target[i], p.t[i], p.grid_index[i], p.state[i], &p.participant[i]);
            }
        }
        Ok(out)
    }
}

/// Where the `pal` column comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PalSource {
    /// PAL reported by the device of interest (`device_pal.csv`).
    Device,
    Scheme(PalScheme),
}

impl fmt::Display for PalSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PalSource::Device => f.write_str("device"),
            PalSource::Scheme(s) => f.write_str(s.name()),
        }
    }
}

impl FromStr for PalSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "device" => Ok(PalSource::Device),
            other => other.parse().map(PalSource::Scheme),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureOptions {
    pub pal_source: PalSource,
    /// Extra PAL columns computed from the raw accelerometer.
    pub fusion: Vec<PalScheme>,
    pub counts: CountConfig,
    pub grid_step_s: f64,
    pub grid_tolerance_s: f64,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            pal_source: PalSource::Device,
            fusion: Vec::new(),
            counts: CountConfig::default(),
            grid_step_s: 15.0,
            grid_tolerance_s: 2.5,
        }
    }
}

/// Column names and kinds produced by [`assemble_matrix`] for `opts`.
pub fn feature_columns(opts: &FeatureOptions) -> (Vec<String>, Vec<ColumnKind>) {
    use ColumnKind::*;
    let mut names: Vec<String> = [DEVICE_HR, PAL, STEP_RATE, GENDER, PSQI, BMI].map(String::from).to_vec();
    let mut kinds = vec![Numeric, Categorical, Numeric, Categorical, Numeric, Numeric];
    for s in &opts.fusion {
        names.push(fusion_column(*s));
        kinds.push(Categorical);
    }
    (names, kinds)
}

fn pal_series(session: &SessionRecord, scheme: PalScheme, counts: &CountConfig) -> Result<SampledSeries> {
    let cpm = compute_counts(&session.accel, scheme.axis_mode(), counts)?;
    let v = cpm
        .v
        .iter()
        .map(|&c| classify_pal(c, scheme).map(|l| l.code() as f64))
        .collect::<Result<Vec<_>>>()?;
    SampledSeries::new(cpm.t, v, crate::io::Unit::PalLevel, crate::io::Source::Derived)
}

/// Rate of the step interval `[t_i, t_{i+1})` containing `t`.
fn step_rate_at(rate: &SampledSeries, cumulative: &SampledSeries, t: f64) -> Option<f64> {
    let i = cumulative.t.partition_point(|&x| x <= t).checked_sub(1)?;
    (i + 1 < cumulative.len()).then(|| rate.v[i])
}

/// Builds the feature rows of one session against its grid-aligned truth.
pub fn session_rows(session: &SessionRecord, truth: &HeartRateSeries, opts: &FeatureOptions) -> Result<FeatureMatrix> {
    let (names, kinds) = feature_columns(opts);
    let mut out = FeatureMatrix::empty(names, kinds);
    let step = opts.grid_step_s;

    let device: BTreeMap<i64, f64> = align_indices(&session.device_hr.t, step, opts.grid_tolerance_s)
        .into_iter()
        .map(|(k, i)| (k, session.device_hr.v[i]))
        .collect();
    let pal = match opts.pal_source {
        PalSource::Device => session.device_pal.clone(),
        PalSource::Scheme(s) => Some(pal_series(session, s, &opts.counts)?),
    };
    let fusion = opts
        .fusion
        .iter()
        .map(|&s| pal_series(session, s, &opts.counts))
        .collect::<Result<Vec<_>>>()?;
    let rate = steps_per_minute(&session.steps)?;
    let p = &session.profile;

    let mut row = Vec::with_capacity(out.n_cols());
    for (t, target) in truth.iter() {
        let k = (t / step).round() as i64;
        let gt = k as f64 * step;
        let Some(state) = session.schedule.state_at(gt) else { continue };
        let Some(&hr) = device.get(&k) else { continue };
        let Some(pal) = pal.as_ref().and_then(|s| interval_value(s, gt, 60.0)) else { continue };
        let Some(sr) = step_rate_at(&rate, &session.steps, gt) else { continue };
        row.clear();
        row.extend([hr, pal, sr, p.gender.code(), p.psqi as f64, p.bmi]);
        let mut complete = true;
        for f in &fusion {
            match interval_value(f, gt, 60.0) {
                Some(v) => row.push(v),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if complete {
            out.push_row(&row, target, gt, k, state, &p.id);
        }
    }
    Ok(out)
}

/// Stacks the feature rows of every session. Rows lacking any feature or
/// the target are dropped.
pub fn assemble_matrix(sessions: &[(&SessionRecord, &HeartRateSeries)], opts: &FeatureOptions) -> Result<FeatureMatrix> {
    let (names, kinds) = feature_columns(opts);
    let mut parts = vec![FeatureMatrix::empty(names, kinds)];
    for (s, truth) in sessions {
        parts.push(session_rows(s, truth, opts)?);
    }
    let m = FeatureMatrix::concat(&parts)?;
    if m.is_empty() {
        return Err(Error::InsufficientData("no grid point has the target and every feature".into()));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{Gender, ParticipantProfile, Schedule, ScheduleEntry, Source, TriaxialSeries, Unit};
    use crate::signal::Provenance;

    pub(crate) fn toy_session(id: &str, minutes: usize, dropout: Option<(f64, f64)>) -> (SessionRecord, HeartRateSeries) {
        let end = minutes as f64 * 60.0;
        let fs_acc = 32.0;
        let n_acc = (end * fs_acc) as usize;
        let accel = TriaxialSeries {
            t: (0..n_acc).map(|i| i as f64 / fs_acc).collect(),
            x: vec![0.0; n_acc],
            y: vec![0.0; n_acc],
            z: vec![1.0; n_acc],
        };
        let dev_t: Vec<f64> = (0..(end / 5.0) as usize)
            .map(|i| i as f64 * 5.0)
            .filter(|t| dropout.is_none_or(|(a, b)| *t < a || *t >= b))
            .collect();
        let dev_v = dev_t.iter().map(|t| 70.0 + t / 600.0).collect();
        let minute_t: Vec<f64> = (0..=minutes).map(|m| m as f64 * 60.0).collect();
        let session = SessionRecord {
            profile: ParticipantProfile {
                id: id.into(),
                gender: Gender::Female,
                bmi: 22.5,
                psqi: 4,
            },
            fs_ecg: 250.0,
            fs_acc,
            ecg: SampledSeries::empty(Unit::MilliVolt, Source::Ecg),
            device_hr: SampledSeries::new(dev_t, dev_v, Unit::Bpm, Source::Device).unwrap(),
            other_devices: vec![],
            device_pal: Some(
                SampledSeries::new(minute_t[..minutes].to_vec(), vec![0.0; minutes], Unit::PalLevel, Source::Device).unwrap(),
            ),
            accel,
            steps: SampledSeries::new(minute_t.clone(), vec![0.0; minutes + 1], Unit::Steps, Source::Device).unwrap(),
            schedule: Schedule(vec![ScheduleEntry {
                state: ActivityState::RS,
                t_start: 0.0,
                t_end: end,
            }]),
        };
        let tt: Vec<f64> = (0..(end / 15.0) as usize).map(|k| k as f64 * 15.0).collect();
        let tv = tt.iter().map(|t| 71.0 + t / 600.0).collect();
        (session, HeartRateSeries::new(tt, tv, Provenance::EcgTruth))
    }

    #[test]
    fn full_coverage_gives_four_rows_per_minute() {
        let (s, truth) = toy_session("A", 30, None);
        let m = assemble_matrix(&[(&s, &truth)], &FeatureOptions::default()).unwrap();
        assert_eq!(m.n_rows(), 120);
        assert!(m.state.iter().all(|&s| s == ActivityState::RS));
        assert_eq!(m.row(0), &[70.0, 0.0, 0.0, 1.0, 4.0, 22.5]);
    }

    #[test]
    fn device_dropout_removes_rows() {
        let (s, truth) = toy_session("A", 30, Some((600.0, 900.0)));
        let m = assemble_matrix(&[(&s, &truth)], &FeatureOptions::default()).unwrap();
        // 20 grid points fall in the gap; the two gap edges stay within tolerance
        assert!(m.n_rows() < 120 && m.n_rows() >= 100, "{}", m.n_rows());
        assert!(!m.t.iter().any(|&t| t > 605.0 && t < 895.0));
    }

    #[test]
    fn participants_are_kept_apart() {
        let (a, ta) = toy_session("A", 5, None);
        let (b, tb) = toy_session("B", 5, None);
        let m = assemble_matrix(&[(&a, &ta), (&b, &tb)], &FeatureOptions::default()).unwrap();
        assert_eq!(m.participants(), vec!["A".to_string(), "B".to_string()]);
        assert_eq!(m.n_rows(), 40);
    }

    #[test]
    fn fusion_columns_come_from_accelerometer() {
        let (s, truth) = toy_session("A", 5, None);
        let opts = FeatureOptions {
            fusion: PalScheme::ALL.to_vec(),
            ..FeatureOptions::default()
        };
        let m = assemble_matrix(&[(&s, &truth)], &opts).unwrap();
        assert_eq!(m.n_cols(), 10);
        assert_eq!(m.names[6], "fusion_pal_crouter_va");
        assert!(m.rows().all(|r| r[6..].iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn no_rows_is_an_error() {
        let (s, _) = toy_session("A", 5, None);
        let empty = HeartRateSeries::new(vec![], vec![], Provenance::EcgTruth);
        assert!(matches!(
            assemble_matrix(&[(&s, &empty)], &FeatureOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn column_selection_and_concat() {
        let (s, truth) = toy_session("A", 2, None);
        let m = assemble_matrix(&[(&s, &truth)], &FeatureOptions::default()).unwrap();
        let sel = m.select_columns(&[BMI, DEVICE_HR]).unwrap();
        assert_eq!(sel.row(0), &[22.5, 70.0]);
        assert!(m.select_columns(&["nope"]).is_err());
        let both = FeatureMatrix::concat(&[m.clone(), m.clone()]).unwrap();
        assert_eq!(both.n_rows(), 2 * m.n_rows());
        assert!(FeatureMatrix::concat(&[m, sel]).is_err());
    }

    #[test]
    fn pal_source_parses() {
        assert_eq!("device".parse::<PalSource>().unwrap(), PalSource::Device);
        assert_eq!(
            "troiano_va".parse::<PalSource>().unwrap(),
            PalSource::Scheme(PalScheme::TroianoVa)
        );
        assert!("x".parse::<PalSource>().is_err());
    }
}
