use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, DEVICE_HR, PAL, STEP_RATE};
use crate::error::{Error, Result};

/// Rolling-window layout: `size_points` trailing grid points of each rolled
/// column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub size_points: usize,
    pub cadence_s: f64,
    pub rolled_columns: Vec<String>,
}

impl WindowSpec {
    /// Rolls device heart rate, PAL and step rate.
    pub fn new(size_points: usize) -> Self {
        Self {
            size_points,
            cadence_s: 15.0,
            rolled_columns: [DEVICE_HR, PAL, STEP_RATE].map(String::from).to_vec(),
        }
    }
}

/// Lengths of the runs of consecutive rows that share a participant and sit
/// on adjacent grid points.
pub fn segment_lengths(m: &FeatureMatrix) -> Vec<usize> {
    let mut out = Vec::new();
    let mut len = 0;
    for i in 0..m.n_rows() {
        let joins = i > 0 && m.participant[i] == m.participant[i - 1] && m.grid_index[i] == m.grid_index[i - 1] + 1;
        if joins {
            len += 1;
        } else {
            if len > 0 {
                out.push(len);
            }
            len = 1;
        }
    }
    if len > 0 {
        out.push(len);
    }
    out
}

/// Replaces each rolled column by its `w` trailing values, named `col@lag`
/// with lag `w-1` (oldest) down to `0` (current row). Non-rolled columns
/// are appended once. The first `w-1` rows of every contiguous segment have
/// no full window and are dropped.
///
/// ```
/// use hrcal::features::{build_rolling_windows, FeatureMatrix, ColumnKind, WindowSpec};
/// use hrcal::io::ActivityState;
///
/// let mut m = FeatureMatrix::empty(vec!["device_hr".into(), "bmi".into()], vec![ColumnKind::Numeric; 2]);
/// for k in 0..4 {
///     m.push_row(&[60.0 + k as f64, 22.0], 61.0, 15.0 * k as f64, k, ActivityState::RS, "A");
/// }
/// let spec = WindowSpec { size_points: 3, cadence_s: 15.0, rolled_columns: vec!["device_hr".into()] };
/// let r = build_rolling_windows(&m, &spec).unwrap();
/// assert_eq!(r.names, ["device_hr@2", "device_hr@1", "device_hr@0", "bmi"]);
/// assert_eq!(r.row(0), &[60.0, 61.0, 62.0, 22.0]);
/// assert_eq!(r.n_rows(), 2);
/// ```
pub fn build_rolling_windows(m: &FeatureMatrix, spec: &WindowSpec) -> Result<FeatureMatrix> {
    let w = spec.size_points;
    if w == 0 {
        return Err(Error::Config("window size must be at least 1".into()));
    }
    let rolled = spec
        .rolled_columns
        .iter()
        .map(|c| {
            m.col_index(c)
                .ok_or_else(|| Error::Config(format!("rolled column {c:?} not in matrix")))
        })
        .collect::<Result<Vec<_>>>()?;
    let statics: Vec<usize> = (0..m.n_cols()).filter(|j| !rolled.contains(j)).collect();

    let mut names = Vec::new();
    let mut kinds = Vec::new();
    for &j in &rolled {
        for lag in (0..w).rev() {
            names.push(format!("{}@{lag}", m.names[j]));
            kinds.push(m.kinds[j]);
        }
    }
    for &j in &statics {
        names.push(m.names[j].clone());
        kinds.push(m.kinds[j]);
    }
    let mut out = FeatureMatrix::empty(names, kinds);

    let mut start = 0;
    let mut row = Vec::with_capacity(out.n_cols());
    for len in segment_lengths(m) {
        for end in (start + w - 1)..(start + len) {
            row.clear();
            for &j in &rolled {
                row.extend((end + 1 - w..=end).map(|i| m.row(i)[j]));
            }
            row.extend(statics.iter().map(|&j| m.row(end)[j]));
            out.push_row(&row, m.target[end], m.t[end], m.grid_index[end], m.state[end], &m.participant[end]);
        }
        start += len;
    }
    Ok(out)
}
