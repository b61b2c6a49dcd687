//! Butterworth IIR design as cascaded second-order sections and zero-phase
//! (forward-backward) filtering.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FilterKind {
    /// Band edges in Hz.
    Bandpass { low_hz: f64, high_hz: f64 },
    /// Cutoff as a fraction of the Nyquist frequency.
    Lowpass { normalized_cutoff: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
}

impl FilterSpec {
    pub fn bandpass(low_hz: f64, high_hz: f64, order: usize) -> Self {
        Self {
            kind: FilterKind::Bandpass { low_hz, high_hz },
            order,
        }
    }

    pub fn lowpass(normalized_cutoff: f64, order: usize) -> Self {
        Self {
            kind: FilterKind::Lowpass { normalized_cutoff },
            order,
        }
    }

    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.order == 0 {
            return Err(Error::Config("filter order must be at least 1".into()));
        }
        match self.kind {
            FilterKind::Bandpass { low_hz, high_hz } => {
                if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
                    return Err(Error::Config(format!(
                        "bandpass {low_hz}-{high_hz} Hz needs 0 < low < high < fs/2 = {}",
                        fs / 2.0
                    )));
                }
            }
            FilterKind::Lowpass { normalized_cutoff } => {
                if !(normalized_cutoff > 0.0 && normalized_cutoff < 1.0) {
                    return Err(Error::Config(format!(
                        "normalized cutoff {normalized_cutoff} outside (0, 1)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Designs the digital filter for sampling rate `fs`.
    pub fn design(&self, fs: f64) -> Result<Sos> {
        self.validate(fs)?;
        Ok(match self.kind {
            FilterKind::Bandpass { low_hz, high_hz } => {
                butter_bandpass(self.order, low_hz, high_hz, fs)
            }
            FilterKind::Lowpass { normalized_cutoff } => {
                butter_lowpass(self.order, normalized_cutoff)
            }
        })
    }
}

/// One biquad, `a0` normalized to 1, direct form II transposed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + self.b[1] * z_inv + self.b[2] * z_inv * z_inv;
        let den = 1.0 + self.a[0] * z_inv + self.a[1] * z_inv * z_inv;
        num / den
    }

    fn dc_gain(&self) -> f64 {
        let den = 1.0 + self.a[0] + self.a[1];
        (self.b[0] + self.b[1] + self.b[2]) / den
    }

    fn scale(&mut self, k: f64) {
        for b in &mut self.b {
            *b *= k;
        }
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Complex response at normalized angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    /// Causal filtering with the given per-section initial states.
    fn lfilter_in_place(&self, x: &mut [f64], zi: &[[f64; 2]]) {
        for (s, z0) in self.sections.iter().zip(zi) {
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            let (mut z1, mut z2) = (z0[0], z0[1]);
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z1;
                z1 = b1 * xin - a1 * y + z2;
                z2 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Steady-state section states for a constant unit input.
    fn steady_state(&self) -> Vec<[f64; 2]> {
        let mut gain_in = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let g = s.dc_gain();
                let z2 = (s.b[2] - s.a[1] * g) * gain_in;
                let z1 = (s.b[1] - s.a[0] * g) * gain_in + z2;
                gain_in *= g;
                [z1, z2]
            })
            .collect()
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let ntaps = 2 * self.sections.len() + 1;
        let pad = (3 * ntaps).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let zi = self.steady_state();
        let scaled = |x0: f64| -> Vec<[f64; 2]> { zi.iter().map(|z| [z[0] * x0, z[1] * x0]).collect() };

        let x0 = ext[0];
        self.lfilter_in_place(&mut ext, &scaled(x0));
        ext.reverse();
        let y0 = ext[0];
        self.lfilter_in_place(&mut ext, &scaled(y0));
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Left-half-plane poles of the normalized analog Butterworth prototype.
fn prototype_poles(order: usize) -> Vec<Complex64> {
    let n = order as f64;
    (0..order)
        .map(|k| {
            let theta = PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn bilinear(s: Complex64, fs2: f64) -> Complex64 {
    (fs2 + s) / (fs2 - s)
}

/// Groups digital poles into sections: conjugate pairs first (upper half
/// plane representative), then the leftover real pole if any.
fn pole_sections(poles: &[Complex64]) -> (Vec<Complex64>, Vec<f64>) {
    let mut pairs = Vec::new();
    let mut reals = Vec::new();
    for &p in poles {
        if p.im.abs() < 1e-12 {
            reals.push(p.re);
        } else if p.im > 0.0 {
            pairs.push(p);
        }
    }
    (pairs, reals)
}

/// Lowpass Butterworth, cutoff `wn` as a fraction of Nyquist. Unit DC gain.
pub fn butter_lowpass(order: usize, wn: f64) -> Sos {
    // normalized sampling rate fs = 2 so that Nyquist = 1
    let fs2 = 4.0;
    let warped = fs2 * (PI * wn / 2.0).tan();
    let digital: Vec<Complex64> = prototype_poles(order)
        .into_iter()
        .map(|p| bilinear(p * warped, fs2))
        .collect();
    let (pairs, reals) = pole_sections(&digital);
    let mut sections = Vec::new();
    for p in pairs {
        let mut s = Biquad {
            b: [1.0, 2.0, 1.0],
            a: [-2.0 * p.re, p.norm_sqr()],
        };
        s.scale(1.0 / s.dc_gain());
        sections.push(s);
    }
    for r in reals {
        let mut s = Biquad {
            b: [1.0, 1.0, 0.0],
            a: [-r, 0.0],
        };
        s.scale(1.0 / s.dc_gain());
        sections.push(s);
    }
    Sos { sections }
}

/// Bandpass Butterworth of prototype order `order` (filter order `2*order`),
/// unit gain at the band's geometric centre.
pub fn butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Sos {
    let fs2 = 2.0 * fs;
    let w1 = fs2 * (PI * low_hz / fs).tan();
    let w2 = fs2 * (PI * high_hz / fs).tan();
    let w0 = (w1 * w2).sqrt();
    let bw = w2 - w1;
    let mut analog = Vec::with_capacity(2 * order);
    for p in prototype_poles(order) {
        let half = p * (bw / 2.0);
        let root = (half * half - w0 * w0).sqrt();
        analog.push(half + root);
        analog.push(half - root);
    }
    let digital: Vec<Complex64> = analog.into_iter().map(|s| bilinear(s, fs2)).collect();
    let (pairs, reals) = pole_sections(&digital);
    debug_assert!(reals.is_empty());
    let mut sections: Vec<Biquad> = pairs
        .into_iter()
        .map(|p| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    let w_center = 2.0 * (w0 / fs2).atan();
    let z_inv = Complex64::from_polar(1.0, -w_center);
    for s in &mut sections {
        let g = s.response(z_inv).norm();
        s.scale(1.0 / g);
    }
    Sos { sections }
}
