use serde::{Deserialize, Serialize};

use crate::io::SampledSeries;

/// Adaptive-threshold R-peak detector operating on the squared band-passed
/// ECG. A sample is a candidate when it is a local maximum above
/// `rolling mean + k_std * rolling std` of the squared signal over a centred
/// window; candidates closer than the refractory period keep the stronger one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakDetector {
    pub window_s: f64,
    pub k_std: f64,
    pub refractory_s: f64,
}

impl Default for PeakDetector {
    fn default() -> Self {
        Self {
            window_s: 2.0,
            k_std: 1.5,
            refractory_s: 0.25,
        }
    }
}

/// Detects R peaks with the default detector constants.
pub fn detect_r_peaks(filtered: &SampledSeries) -> Vec<f64> {
    detect_r_peaks_with(filtered, &PeakDetector::default())
}

pub fn detect_r_peaks_with(filtered: &SampledSeries, det: &PeakDetector) -> Vec<f64> {
    let n = filtered.len();
    if n < 3 {
        return Vec::new();
    }
    let t = &filtered.t;
    let fs = (n - 1) as f64 / (t[n - 1] - t[0]);
    let energy: Vec<f64> = filtered.v.iter().map(|v| v * v).collect();

    let mut s1 = Vec::with_capacity(n + 1);
    let mut s2 = Vec::with_capacity(n + 1);
    s1.push(0.0);
    s2.push(0.0);
    for &e in &energy {
        s1.push(s1.last().unwrap() + e);
        s2.push(s2.last().unwrap() + e * e);
    }
    let half = ((det.window_s * fs) / 2.0).round().max(1.0) as usize;
    let threshold = |i: usize| -> f64 {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let m = (hi - lo) as f64;
        let mean = (s1[hi] - s1[lo]) / m;
        let var = ((s2[hi] - s2[lo]) / m - mean * mean).max(0.0);
        mean + det.k_std * var.sqrt()
    };

    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        let e = energy[i];
        if !(e > energy[i - 1] && e >= energy[i + 1] && e > threshold(i)) {
            continue;
        }
        match peaks.last() {
            Some(&last) if t[i] - t[last] < det.refractory_s => {
                if e > energy[last] {
                    *peaks.last_mut().unwrap() = i;
                }
            }
            _ => peaks.push(i),
        }
    }
    peaks.into_iter().map(|i| t[i]).collect()
}
