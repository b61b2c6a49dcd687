//! ECG to ground-truth heart rate on the 15-second analysis grid.
//!
//! The chain is: band-pass the raw ECG to isolate QRS energy, detect R peaks
//! with an adaptive threshold, convert R-R intervals to beats per minute,
//! resample to a uniform rate, low-pass to suppress false detections, shift
//! to compensate device lag and finally snap to the analysis grid.

pub mod filter;
mod peaks;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ActivityState, SampledSeries, Schedule, SessionRecord, Source, Unit};

pub use filter::{FilterKind, FilterSpec, Sos};
pub use peaks::{detect_r_peaks, detect_r_peaks_with, PeakDetector};

/// Plausible heart-rate range, exclusive bounds in bpm.
pub const HR_RANGE: (f64, f64) = (20.0, 250.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    EcgTruth,
    DeviceRaw,
    Calibrated,
}

/// Heart rate in bpm with timestamps in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartRateSeries {
    pub t: Vec<f64>,
    pub bpm: Vec<f64>,
    pub provenance: Provenance,
}

impl HeartRateSeries {
    pub fn new(t: Vec<f64>, bpm: Vec<f64>, provenance: Provenance) -> Self {
        assert_eq!(t.len(), bpm.len(), "timestamp/value length mismatch");
        Self { t, bpm, provenance }
    }

    pub fn from_series(s: &SampledSeries, provenance: Provenance) -> Self {
        Self::new(s.t.clone(), s.v.clone(), provenance)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.t.iter().copied().zip(self.bpm.iter().copied())
    }

    pub fn to_sampled(&self) -> SampledSeries {
        let source = match self.provenance {
            Provenance::EcgTruth => Source::Ecg,
            Provenance::DeviceRaw => Source::Device,
            Provenance::Calibrated => Source::Derived,
        };
        SampledSeries {
            t: self.t.clone(),
            v: self.bpm.clone(),
            unit: Unit::Bpm,
            source,
        }
    }

    /// Rejects values outside the plausible range.
    pub fn validate(&self) -> Result<()> {
        for (t, v) in self.iter() {
            if !(v > HR_RANGE.0 && v < HR_RANGE.1) {
                return Err(Error::Validation(format!(
                    "heart rate {v} bpm at t={t} outside ({}, {})",
                    HR_RANGE.0, HR_RANGE.1
                )));
            }
        }
        Ok(())
    }

    /// Drops samples outside the plausible range.
    pub fn retain_plausible(mut self) -> Self {
        let keep: Vec<bool> = self
            .bpm
            .iter()
            .map(|&v| v > HR_RANGE.0 && v < HR_RANGE.1)
            .collect();
        let mut k = keep.iter();
        self.t.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.bpm.retain(|_| *k.next().unwrap());
        self
    }
}

/// Zero-phase band-pass of a uniformly sampled ECG.
pub fn bandpass_ecg(ecg: &SampledSeries, fs: f64, spec: &FilterSpec) -> Result<SampledSeries> {
    if fs <= 40.0 {
        return Err(Error::Config(format!(
            "ECG sampling rate {fs} Hz too low for QRS band-pass (need > 40 Hz)"
        )));
    }
    let sos = spec.design(fs)?;
    Ok(SampledSeries {
        t: ecg.t.clone(),
        v: sos.filtfilt(&ecg.v),
        unit: ecg.unit,
        source: Source::Derived,
    })
}

/// Converts R-peak times to instantaneous heart rate. Each interval
/// `t[i+1] - t[i]` yields the sample `(t[i+1], 60 / interval)`.
pub fn rr_to_hr(peaks: &[f64]) -> Result<HeartRateSeries> {
    if peaks.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 R peaks, got {}",
            peaks.len()
        )));
    }
    let (t, bpm) = peaks
        .windows(2)
        .map(|w| (w[1], 60.0 / (w[1] - w[0])))
        .unzip();
    Ok(HeartRateSeries::new(t, bpm, Provenance::EcgTruth))
}

/// Linear-interpolation resampling onto `t0 + k / rate_hz`, split into
/// separate uniform segments wherever input samples are more than `max_gap_s`
/// apart.
pub fn resample_segments(hr: &HeartRateSeries, rate_hz: f64, max_gap_s: f64) -> Vec<HeartRateSeries> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=hr.len() {
        let split = i == hr.len() || hr.t[i] - hr.t[i - 1] > max_gap_s;
        if split {
            if i - start >= 2 {
                out.push(resample_slice(&hr.t[start..i], &hr.bpm[start..i], rate_hz, hr.provenance));
            }
            start = i;
        }
    }
    out
}

fn resample_slice(t: &[f64], v: &[f64], rate_hz: f64, provenance: Provenance) -> HeartRateSeries {
    let dt = 1.0 / rate_hz;
    // snap to the global rate grid so segments from different sources line up
    let k0 = (t[0] * rate_hz).ceil() as i64;
    let k1 = (t[t.len() - 1] * rate_hz).floor() as i64;
    let mut ts = Vec::new();
    let mut vs = Vec::new();
    let mut j = 0;
    for k in k0..=k1 {
        let tk = k as f64 * dt;
        while j + 2 < t.len() && t[j + 1] < tk {
            j += 1;
        }
        let (ta, tb) = (t[j], t[j + 1]);
        let w = ((tk - ta) / (tb - ta)).clamp(0.0, 1.0);
        ts.push(tk);
        vs.push(v[j] + w * (v[j + 1] - v[j]));
    }
    HeartRateSeries::new(ts, vs, provenance)
}

fn uniform_rate(t: &[f64]) -> Option<f64> {
    if t.len() < 2 {
        return None;
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let regular = t
        .windows(2)
        .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-6 * dt.max(1.0));
    (regular && dt > 0.0).then(|| 1.0 / dt)
}

/// Zero-phase Butterworth low-pass of a uniformly sampled heart-rate series.
/// `normalized_cutoff` is a fraction of the series' Nyquist frequency.
pub fn lowpass_hr(hr: &HeartRateSeries, normalized_cutoff: f64, order: usize) -> Result<HeartRateSeries> {
    let spec = FilterSpec::lowpass(normalized_cutoff, order);
    if hr.len() < 2 {
        spec.validate(1.0)?;
        return Ok(hr.clone());
    }
    let fs = uniform_rate(&hr.t).ok_or_else(|| {
        Error::Validation("low-pass requires a uniformly resampled series".into())
    })?;
    let sos = spec.design(fs)?;
    Ok(HeartRateSeries::new(hr.t.clone(), sos.filtfilt(&hr.bpm), hr.provenance))
}

/// Adds `delay_s` to every timestamp.
pub fn shift_series(hr: &HeartRateSeries, delay_s: f64) -> HeartRateSeries {
    HeartRateSeries::new(
        hr.t.iter().map(|t| t + delay_s).collect(),
        hr.bpm.clone(),
        hr.provenance,
    )
}

/// Nearest-sample alignment onto the grid `k * step_s`. A grid point takes
/// the closest sample within `tolerance_s` (the earlier one on ties) and is
/// absent when no sample is that close.
pub fn align_to_grid(series: &HeartRateSeries, step_s: f64, tolerance_s: f64) -> HeartRateSeries {
    let (t, bpm): (Vec<f64>, Vec<f64>) = align_indices(&series.t, step_s, tolerance_s)
        .into_iter()
        .map(|(k, i)| (k as f64 * step_s, series.bpm[i]))
        .unzip();
    HeartRateSeries::new(t, bpm, series.provenance)
}

/// Grid index and chosen sample index for each grid point that has a sample
/// within tolerance.
pub fn align_indices(t: &[f64], step_s: f64, tolerance_s: f64) -> Vec<(i64, usize)> {
    let (Some(&first), Some(&last)) = (t.first(), t.last()) else {
        return Vec::new();
    };
    let k0 = ((first - tolerance_s) / step_s).ceil() as i64;
    let k1 = ((last + tolerance_s) / step_s).floor() as i64;
    let mut out = Vec::new();
    for k in k0..=k1 {
        let g = k as f64 * step_s;
        let pos = t.partition_point(|&x| x < g);
        let mut best: Option<(f64, usize)> = None;
        // earlier candidate first so it wins ties
        for i in [pos.checked_sub(1), Some(pos)].into_iter().flatten() {
            if let Some(&ti) = t.get(i) {
                let d = (ti - g).abs();
                if d <= tolerance_s && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, i));
                }
            }
        }
        if let Some((_, i)) = best {
            out.push((k, i));
        }
    }
    out
}

/// Constants of the ECG to heart-rate chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub bandpass: FilterSpec,
    pub detector: PeakDetector,
    /// Rate of the uniform resampling that precedes the low-pass.
    pub resample_hz: f64,
    pub lowpass_cutoff: f64,
    pub lowpass_order: usize,
    /// Gaps between beats longer than this split the series.
    pub max_gap_s: f64,
    /// Lag compensation applied to the ECG-derived truth, per state.
    pub shift_rs_s: f64,
    pub shift_ls_s: f64,
    pub shift_is_s: f64,
    pub grid_step_s: f64,
    pub grid_tolerance_s: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            bandpass: FilterSpec::bandpass(15.0, 20.0, 4),
            detector: PeakDetector::default(),
            resample_hz: 4.0,
            lowpass_cutoff: 0.05,
            lowpass_order: 2,
            max_gap_s: 3.0,
            shift_rs_s: 10.0,
            shift_ls_s: 10.0,
            shift_is_s: 0.0,
            grid_step_s: 15.0,
            grid_tolerance_s: 2.5,
        }
    }
}

impl ExtractionConfig {
    pub fn shift_for(&self, state: ActivityState) -> f64 {
        match state {
            ActivityState::RS => self.shift_rs_s,
            ActivityState::LS => self.shift_ls_s,
            ActivityState::IS => self.shift_is_s,
        }
    }
}

/// ECG to smoothed heart rate at `resample_hz`, without lag shift or grid
/// alignment. Segments separated by detection gaps are concatenated.
pub fn ecg_to_smoothed_hr(ecg: &SampledSeries, fs: f64, cfg: &ExtractionConfig) -> Result<HeartRateSeries> {
    let filtered = bandpass_ecg(ecg, fs, &cfg.bandpass)?;
    let peaks = detect_r_peaks_with(&filtered, &cfg.detector);
    let raw = rr_to_hr(&peaks)?.retain_plausible();
    let mut t = Vec::new();
    let mut bpm = Vec::new();
    for seg in resample_segments(&raw, cfg.resample_hz, cfg.max_gap_s) {
        let smooth = lowpass_hr(&seg, cfg.lowpass_cutoff, cfg.lowpass_order)?;
        t.extend(smooth.t);
        bpm.extend(smooth.bpm);
    }
    if t.is_empty() {
        return Err(Error::InsufficientData("no usable heart-rate segment".into()));
    }
    Ok(HeartRateSeries::new(t, bpm, Provenance::EcgTruth))
}

/// Applies the per-state lag shift. A sample is shifted by the delay of the
/// state it was recorded in and kept only if it stays inside that state.
pub fn shift_by_state(hr: &HeartRateSeries, schedule: &Schedule, cfg: &ExtractionConfig) -> HeartRateSeries {
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(hr.len());
    for entry in schedule.entries() {
        let delay = cfg.shift_for(entry.state);
        for (t, v) in hr.iter() {
            if t >= entry.t_start && t < entry.t_end {
                let ts = t + delay;
                if ts >= entry.t_start && ts < entry.t_end {
                    pairs.push((ts, v));
                }
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.dedup_by(|b, a| a.0 == b.0);
    let (t, bpm) = pairs.into_iter().unzip();
    HeartRateSeries::new(t, bpm, hr.provenance)
}

/// Full ground-truth extraction for one session: the grid-aligned,
/// lag-compensated ECG heart rate.
pub fn extract_truth_hr(session: &SessionRecord, cfg: &ExtractionConfig) -> Result<HeartRateSeries> {
    let smooth = ecg_to_smoothed_hr(&session.ecg, session.fs_ecg, cfg)?;
    let shifted = shift_by_state(&smooth, &session.schedule, cfg);
    let aligned = align_to_grid(&shifted, cfg.grid_step_s, cfg.grid_tolerance_s);
    Ok(aligned.retain_plausible())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hr(t: &[f64], v: &[f64]) -> HeartRateSeries {
        HeartRateSeries::new(t.to_vec(), v.to_vec(), Provenance::EcgTruth)
    }

    #[test]
    fn rr_examples() {
        let s = rr_to_hr(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(s.t, vec![1.0, 2.0]);
        assert_eq!(s.bpm, vec![60.0, 60.0]);
        let s = rr_to_hr(&[0.0, 0.5]).unwrap();
        assert_eq!((s.t[0], s.bpm[0]), (0.5, 120.0));
        assert!(matches!(rr_to_hr(&[0.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn shift_examples() {
        let s = hr(&[1.0], &[60.0]);
        assert_eq!(shift_series(&s, 10.0).t, vec![11.0]);
        assert_eq!(shift_series(&s, 0.0), s);
        assert_eq!(shift_series(&shift_series(&s, -10.0), 10.0), s);
    }

    #[test]
    fn align_examples() {
        let s = hr(&[14.9, 29.8], &[60.0, 61.0]);
        let g = align_to_grid(&s, 15.0, 2.0);
        assert_eq!(g.t, vec![15.0, 30.0]);
        assert_eq!(g.bpm, vec![60.0, 61.0]);

        let ts: Vec<f64> = (0..=40).map(|i| i as f64 * 5.0).filter(|&t| !(60.0..=120.0).contains(&t)).collect();
        let vs = vec![70.0; ts.len()];
        let g = align_to_grid(&hr(&ts, &vs), 15.0, 2.0);
        assert!(!g.t.contains(&75.0) && !g.t.contains(&90.0) && !g.t.contains(&105.0));
        assert!(g.t.contains(&45.0) && g.t.contains(&135.0));
    }

    #[test]
    fn align_tie_goes_to_earlier_sample() {
        let g = align_to_grid(&hr(&[14.0, 16.0], &[1.0, 2.0]), 15.0, 2.0);
        assert_eq!(g.t, vec![15.0]);
        assert_eq!(g.bpm, vec![1.0]);
    }

    #[test]
    fn lowpass_constant_and_cutoff_errors() {
        let t: Vec<f64> = (0..2400).map(|i| i as f64 * 0.25).collect();
        let s = hr(&t, &vec![70.0; t.len()]);
        let y = lowpass_hr(&s, 0.05, 2).unwrap();
        assert!(y.bpm.iter().all(|v| (v - 70.0).abs() < 1e-9));
        assert!(matches!(lowpass_hr(&s, 0.0, 2), Err(Error::Config(_))));
        assert!(matches!(lowpass_hr(&s, 1.0, 2), Err(Error::Config(_))));
    }

    #[test]
    fn lowpass_suppresses_single_spike() {
        let t: Vec<f64> = (0..2400).map(|i| i as f64 * 0.25).collect();
        let mut v = vec![70.0; t.len()];
        v[1200] = 150.0;
        let y = lowpass_hr(&hr(&t, &v), 0.05, 2).unwrap();
        let max = y.bpm.iter().cloned().fold(f64::MIN, f64::max);
        assert!(max < 90.0, "max {max}");
        let mean_in = v.iter().sum::<f64>() / v.len() as f64;
        let mean_out = y.bpm.iter().sum::<f64>() / v.len() as f64;
        assert!((mean_in - mean_out).abs() / mean_in < 0.01);
    }

    #[test]
    fn lowpass_tracks_slow_ramp() {
        // 60 -> 80 bpm over 10 minutes at 4 Hz
        let n = 2400;
        let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.25).collect();
        let v: Vec<f64> = (0..n).map(|i| 60.0 + 20.0 * i as f64 / (n - 1) as f64).collect();
        let y = lowpass_hr(&hr(&t, &v), 0.05, 2).unwrap();
        for (a, b) in y.bpm.iter().zip(&v) {
            assert!((a - b).abs() < 2.0);
        }
    }

    #[test]
    fn lowpass_rejects_irregular_series() {
        let s = hr(&[0.0, 0.25, 0.7, 1.0], &[60.0; 4]);
        assert!(matches!(lowpass_hr(&s, 0.05, 2), Err(Error::Validation(_))));
    }

    #[test]
    fn resampling_splits_on_gaps() {
        let s = hr(&[0.0, 1.0, 2.0, 10.0, 11.0], &[60.0, 62.0, 64.0, 70.0, 70.0]);
        let segs = resample_segments(&s, 4.0, 3.0);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].len(), 9);
        assert!((segs[0].bpm[2] - 61.0).abs() < 1e-12);
        assert_eq!(segs[1].t[0], 10.0);
    }

    #[test]
    fn fs_too_low_is_config_error() {
        let ecg = SampledSeries::new(vec![0.0, 0.025], vec![0.0, 0.0], Unit::MilliVolt, Source::Ecg).unwrap();
        assert!(matches!(
            bandpass_ecg(&ecg, 40.0, &FilterSpec::bandpass(15.0, 20.0, 4)),
            Err(Error::Config(_))
        ));
    }
}
