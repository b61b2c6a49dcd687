//! Synthetic cohorts following the three-state protocol: resting, laying
//! down, then a treadmill block. Ground-truth heart rate is known exactly, so
//! every downstream stage can be checked against it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::{compute_counts, interval_value, AxisMode, CountConfig};
use crate::error::{Error, Result};
use crate::io::{
    ActivityState, DeviceStream, Gender, ParticipantProfile, SampledSeries, Schedule,
    ScheduleEntry, SessionRecord, Source, TriaxialSeries, Unit,
};
use crate::signal::{HeartRateSeries, Provenance};

/// Rate of the latent heart-rate trace.
pub const TRUTH_HZ: f64 = 4.0;

/// One treadmill segment of the activity block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreadmillSegment {
    pub speed_kmh: f64,
    pub minutes: f64,
}

/// Per-state device error: `bias + noise_sd * ma_gain * (1 + cpm / cpm_ref) * e`
/// where `e` is unit-variance AR(1) noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceErrorModel {
    /// Indexed RS, LS, IS.
    pub bias_bpm: [f64; 3],
    pub noise_sd_bpm: [f64; 3],
    pub ma_gain: f64,
    pub cpm_ref: f64,
    /// Lag-one autocorrelation of the noise between device samples.
    pub ar_coef: f64,
    pub lag_s: f64,
    pub period_s: f64,
}

impl Default for DeviceErrorModel {
    fn default() -> Self {
        Self {
            bias_bpm: [1.5, 0.8, -3.0],
            noise_sd_bpm: [3.0, 2.2, 4.0],
            ma_gain: 1.0,
            cpm_ref: 1000.0,
            ar_coef: 0.8,
            lag_s: 10.0,
            period_s: 5.0,
        }
    }
}

/// An additional wrist device recorded next to the device of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraDevice {
    pub name: String,
    pub error: DeviceErrorModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n_participants: usize,
    pub seed: u64,
    pub rs_minutes: f64,
    /// LS duration drawn uniformly per participant from this range.
    pub ls_minutes: (f64, f64),
    pub treadmill: Vec<TreadmillSegment>,
    pub fs_ecg: f64,
    pub fs_acc: f64,
    pub device: DeviceErrorModel,
    pub extra_devices: Vec<ExtraDevice>,
    pub emit_device_pal: bool,
    pub ecg_noise_mv: f64,
    pub accel_noise_g: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        let seg = |speed_kmh, minutes| TreadmillSegment { speed_kmh, minutes };
        Self {
            n_participants: 12,
            seed: 42,
            rs_minutes: 30.0,
            ls_minutes: (60.0, 90.0),
            treadmill: vec![seg(0.0, 10.0), seg(2.0, 7.0), seg(5.0, 7.0), seg(8.0, 6.0), seg(0.0, 10.0)],
            fs_ecg: 250.0,
            fs_acc: 32.0,
            device: DeviceErrorModel::default(),
            extra_devices: Vec::new(),
            emit_device_pal: true,
            ecg_noise_mv: 0.02,
            accel_noise_g: 0.003,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_participants == 0 {
            return bad("n_participants must be positive");
        }
        if !(self.rs_minutes > 0.0 && self.ls_minutes.0 > 0.0 && self.ls_minutes.0 <= self.ls_minutes.1) {
            return bad("state durations must be positive with ls_min <= ls_max");
        }
        if self.treadmill.is_empty() || self.treadmill.iter().any(|s| !(s.minutes > 0.0 && s.speed_kmh >= 0.0)) {
            return bad("treadmill segments need positive durations and non-negative speeds");
        }
        if self.fs_ecg <= 40.0 || self.fs_acc < 20.0 {
            return bad("fs_ecg must exceed 40 Hz and fs_acc be at least 20 Hz");
        }
        for d in std::iter::once(&self.device).chain(self.extra_devices.iter().map(|d| &d.error)) {
            if d.noise_sd_bpm.iter().any(|&s| s < 0.0) || d.ma_gain < 0.0 || d.period_s <= 0.0 || d.cpm_ref <= 0.0 {
                return bad("device noise, gain, cpm_ref and period must be non-negative/positive");
            }
            if !(0.0..1.0).contains(&d.ar_coef) {
                return bad("ar_coef must lie in [0, 1)");
            }
        }
        if self.ecg_noise_mv < 0.0 || self.accel_noise_g < 0.0 {
            return bad("noise levels must be non-negative");
        }
        Ok(())
    }

    pub fn treadmill_minutes(&self) -> f64 {
        self.treadmill.iter().map(|s| s.minutes).sum()
    }
}

/// Latent quantities behind one generated session.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub id: String,
    /// True heart rate at [`TRUTH_HZ`].
    pub hr: HeartRateSeries,
    /// Multiplier on the peak exercise heart rate, around 1.
    pub fitness: f64,
    /// Treadmill speed (km/h) on the same timestamps as `hr`.
    pub speed_kmh: Vec<f64>,
    /// Times at which the protocol changes state or treadmill speed.
    pub transitions: Vec<f64>,
}

impl GroundTruth {
    /// Linear interpolation of the true heart rate, clamped at the ends.
    pub fn hr_at(&self, t: f64) -> f64 {
        interp(&self.hr.t, &self.hr.bpm, t)
    }
}

pub(crate) fn interp(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    let n = ts.len();
    if t <= ts[0] {
        return vs[0];
    }
    if t >= ts[n - 1] {
        return vs[n - 1];
    }
    let j = ts.partition_point(|&x| x <= t);
    let (t0, t1) = (ts[j - 1], ts[j]);
    vs[j - 1] + (vs[j] - vs[j - 1]) * (t - t0) / (t1 - t0)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn cadence_spm(speed_kmh: f64) -> f64 {
    if speed_kmh < 0.5 {
        0.0
    } else {
        60.0 + 12.5 * speed_kmh
    }
}

fn swing_amplitude_g(speed_kmh: f64) -> f64 {
    if speed_kmh < 0.5 {
        0.0
    } else {
        0.05 * (speed_kmh / 2.0).powf(1.6)
    }
}

fn device_pal_for_speed(speed_kmh: f64) -> f64 {
    match speed_kmh {
        v if v < 0.5 => 0.0,
        v if v < 3.5 => 1.0,
        v if v < 6.5 => 2.0,
        _ => 3.0,
    }
}

struct Plan {
    schedule: Schedule,
    /// (start, end, speed) for each treadmill segment, absolute seconds.
    segments: Vec<(f64, f64, f64)>,
    end: f64,
}

fn plan(cfg: &CohortConfig, rng: &mut ChaCha8Rng) -> Plan {
    let rs_end = cfg.rs_minutes * 60.0;
    let (lo, hi) = cfg.ls_minutes;
    let ls_min = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let ls_end = rs_end + (ls_min * 60.0).round();
    let mut segments = Vec::new();
    let mut t = ls_end;
    for s in &cfg.treadmill {
        let e = t + s.minutes * 60.0;
        segments.push((t, e, s.speed_kmh));
        t = e;
    }
    let entry = |state, t_start, t_end| ScheduleEntry { state, t_start, t_end };
    Plan {
        schedule: Schedule(vec![
            entry(ActivityState::RS, 0.0, rs_end),
            entry(ActivityState::LS, rs_end, ls_end),
            entry(ActivityState::IS, ls_end, t),
        ]),
        segments,
        end: t,
    }
}

/// Treadmill speed, ramped over 30 s at each segment start.
fn speed_at(plan: &Plan, t: f64) -> f64 {
    let mut prev = 0.0;
    for &(s, e, v) in &plan.segments {
        if t >= s && t < e {
            let ramp = ((t - s) / 30.0).min(1.0);
            return prev + (v - prev) * ramp;
        }
        prev = v;
    }
    0.0
}

fn truth_trace(
    plan: &Plan,
    profile: &ParticipantProfile,
    fitness: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dt = 1.0 / TRUTH_HZ;
    let n = (plan.end * TRUTH_HZ).floor() as usize;
    let personal = 0.3 * (profile.bmi - 23.0) + 0.4 * (profile.psqi as f64 - 5.0)
        + if profile.gender == Gender::Female { 3.0 } else { 0.0 }
        + 3.0 * gauss(rng);
    let rest = (68.0 + personal).clamp(52.0, 88.0);
    let peak = 165.0 * fitness;
    let rho = (-dt / 20.0f64).exp();
    let drive = 1.5 * (1.0 - rho * rho).sqrt();

    let mut t = Vec::with_capacity(n);
    let mut hr = Vec::with_capacity(n);
    let mut speed = Vec::with_capacity(n);
    let mut level = rest;
    let mut fluct = 0.0;
    let mut prev: Option<f64> = None;
    for i in 0..n {
        let ti = i as f64 * dt;
        let v = speed_at(plan, ti);
        let target = match plan.schedule.state_at(ti) {
            Some(ActivityState::LS) => rest - 8.0,
            Some(ActivityState::IS) if v >= 0.5 => rest + 5.0 + (peak - rest - 5.0) * (v / 8.0).powf(1.3),
            Some(ActivityState::IS) => rest + 5.0,
            _ => rest,
        };
        let tau = if target > level { 25.0 } else { 40.0 };
        level += ((target - level) * dt / tau).clamp(-2.0 * dt, 2.0 * dt);
        fluct = rho * fluct + drive * gauss(rng);
        let raw = (level + fluct).clamp(40.0, 190.0);
        // hard continuity bound of 3 bpm/s
        let x = match prev {
            Some(p) => p + (raw - p).clamp(-3.0 * dt, 3.0 * dt),
            None => raw,
        };
        prev = Some(x);
        t.push(ti);
        hr.push(x);
        speed.push(v);
    }
    (t, hr, speed)
}

/// R-wave surrogate: a Ricker pulse (negated second Gaussian derivative).
fn ricker(dt: f64, sigma: f64) -> f64 {
    let u = dt / sigma;
    (1.0 - u * u) * (-0.5 * u * u).exp()
}

/// ECG-like waveform whose beats follow `hr`: Ricker QRS pulses, a broad
/// T wave, baseline wander and white noise. Returns the waveform and the
/// beat times.
pub fn synth_ecg(hr: &HeartRateSeries, fs: f64, duration_s: f64, noise_mv: f64, rng: &mut ChaCha8Rng) -> (SampledSeries, Vec<f64>) {
    let n = (duration_s * fs).floor() as usize;
    let t: Vec<f64> = (0..n).map(|i| i as f64 / fs).collect();
    let mut beats = Vec::new();
    let mut phase = rng.random::<f64>();
    for i in 0..n.saturating_sub(1) {
        let rate = interp(&hr.t, &hr.bpm, t[i]) / 60.0 / fs;
        let next = phase + rate;
        if next.floor() > phase.floor() {
            beats.push(t[i] + (next.floor() - phase) / rate / fs);
        }
        phase = next;
    }
    let wander_f = 0.2 + 0.1 * rng.random::<f64>();
    let mut v: Vec<f64> = t
        .iter()
        .map(|&ti| 0.1 * (2.0 * std::f64::consts::PI * wander_f * ti).sin() + noise_mv * gauss(rng))
        .collect();
    let sigma_qrs = 0.012;
    let sigma_t = 0.04;
    for (k, &b) in beats.iter().enumerate() {
        let rr = if k > 0 { b - beats[k - 1] } else { 60.0 / interp(&hr.t, &hr.bpm, b) };
        let t_wave = b + 0.25 * rr.sqrt();
        let lo = (((b - 0.08) * fs).ceil().max(0.0)) as usize;
        let hi = ((((t_wave + 0.16) * fs).floor()) as usize).min(n.saturating_sub(1));
        for i in lo..=hi {
            let ti = t[i];
            v[i] += ricker(ti - b, sigma_qrs) + 0.3 * (-0.5 * ((ti - t_wave) / sigma_t).powi(2)).exp();
        }
    }
    (SampledSeries { t, v, unit: Unit::MilliVolt, source: Source::Ecg }, beats)
}

fn synth_accel(plan: &Plan, fs: f64, noise_g: f64, rng: &mut ChaCha8Rng) -> TriaxialSeries {
    let n = (plan.end * fs).floor() as usize;
    let mut a = TriaxialSeries {
        t: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
    };
    let mut phase = 0.0;
    for i in 0..n {
        let t = i as f64 / fs;
        let v = speed_at(plan, t);
        let amp = swing_amplitude_g(v);
        phase += 2.0 * std::f64::consts::PI * cadence_spm(v) / 120.0 / fs;
        a.t.push(t);
        a.x.push(0.3 * amp * (phase + 1.0).sin() + noise_g * gauss(rng));
        a.y.push(amp * phase.sin() + 0.25 * amp * (2.0 * phase + 0.3).sin() + noise_g * gauss(rng));
        a.z.push(1.0 + 0.15 * amp * (2.0 * phase).sin() + noise_g * gauss(rng));
    }
    a
}

fn synth_steps(plan: &Plan) -> SampledSeries {
    let mut t = Vec::new();
    let mut v = Vec::new();
    let mut acc = 0.0;
    let mut tm = 0.0;
    let dt = 0.25;
    let mut s = 0.0;
    while tm < plan.end {
        while s < tm {
            acc += cadence_spm(speed_at(plan, s)) / 60.0 * dt;
            s += dt;
        }
        t.push(tm);
        v.push(acc.floor());
        tm += 60.0;
    }
    SampledSeries { t, v, unit: Unit::Steps, source: Source::Device }
}

fn state_index(state: ActivityState) -> usize {
    match state {
        ActivityState::RS => 0,
        ActivityState::LS => 1,
        ActivityState::IS => 2,
    }
}

fn synth_device(
    truth: &GroundTruth,
    schedule: &Schedule,
    cpm: &SampledSeries,
    model: &DeviceErrorModel,
    end: f64,
    rng: &mut ChaCha8Rng,
) -> SampledSeries {
    let phase = rng.random::<f64>() * model.period_s;
    let innov = (1.0 - model.ar_coef * model.ar_coef).sqrt();
    let mut e = gauss(rng);
    let mut t = Vec::new();
    let mut v = Vec::new();
    let mut tk = phase;
    while tk < end {
        let state = schedule.state_at(tk).unwrap_or(ActivityState::RS);
        let si = state_index(state);
        let c = interval_value(cpm, tk, 60.0).unwrap_or(0.0);
        let sd = model.noise_sd_bpm[si] * model.ma_gain * (1.0 + c / model.cpm_ref);
        let bpm = truth.hr_at(tk - model.lag_s) + model.bias_bpm[si] + sd * e;
        t.push(tk);
        v.push(bpm.max(0.0));
        e = model.ar_coef * e + innov * gauss(rng);
        tk += model.period_s;
    }
    SampledSeries { t, v, unit: Unit::Bpm, source: Source::Device }
}

fn participant_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Generates one participant; `index` selects an independent random stream.
pub fn generate_participant(cfg: &CohortConfig, index: usize) -> Result<(SessionRecord, GroundTruth)> {
    cfg.validate()?;
    let mut rng = participant_rng(cfg.seed, index);
    let gender = if rng.random::<bool>() { Gender::Female } else { Gender::Male };
    let bmi = (24.0 + 3.5 * gauss(&mut rng)).clamp(17.0, 40.0);
    let bmi = (bmi * 10.0).round() / 10.0;
    let psqi = rng.random_range(0..=15u8);
    let profile = ParticipantProfile {
        id: format!("P{:02}", index + 1),
        gender,
        bmi,
        psqi,
    };
    let fitness = (1.0 + 0.05 * gauss(&mut rng) - 0.01 * (bmi - 24.0)).clamp(0.9, 1.1);
    let plan = plan(cfg, &mut rng);
    let (t, hr, speed) = truth_trace(&plan, &profile, fitness, &mut rng);
    let mut transitions: Vec<f64> = plan.schedule.entries().iter().skip(1).map(|e| e.t_start).collect();
    transitions.extend(plan.segments.iter().skip(1).map(|s| s.0));
    transitions.sort_by(f64::total_cmp);
    transitions.dedup();
    let truth = GroundTruth {
        id: profile.id.clone(),
        hr: HeartRateSeries::new(t, hr, Provenance::EcgTruth),
        fitness,
        speed_kmh: speed,
        transitions,
    };

    let (ecg, _) = synth_ecg(&truth.hr, cfg.fs_ecg, plan.end, cfg.ecg_noise_mv, &mut rng);
    let accel = synth_accel(&plan, cfg.fs_acc, cfg.accel_noise_g, &mut rng);
    let cpm = compute_counts(&accel, AxisMode::Va, &CountConfig::default())?;
    let device_hr = synth_device(&truth, &plan.schedule, &cpm, &cfg.device, plan.end, &mut rng);
    let other_devices = cfg
        .extra_devices
        .iter()
        .map(|d| DeviceStream {
            name: d.name.clone(),
            hr: synth_device(&truth, &plan.schedule, &cpm, &d.error, plan.end, &mut rng),
        })
        .collect();
    let device_pal = cfg.emit_device_pal.then(|| {
        let minutes = (plan.end / 60.0).floor() as usize;
        let t: Vec<f64> = (0..minutes).map(|m| m as f64 * 60.0).collect();
        let v = t
            .iter()
            .map(|&m| {
                let mean = (0..60).map(|s| speed_at(&plan, m + s as f64 + 0.5)).sum::<f64>() / 60.0;
                device_pal_for_speed(mean)
            })
            .collect();
        SampledSeries { t, v, unit: Unit::PalLevel, source: Source::Device }
    });
    let session = SessionRecord {
        profile,
        fs_ecg: cfg.fs_ecg,
        fs_acc: cfg.fs_acc,
        ecg,
        device_hr,
        other_devices,
        device_pal,
        accel,
        steps: synth_steps(&plan),
        schedule: plan.schedule,
    };
    Ok((session, truth))
}

/// Generates the whole cohort, one independent random stream per participant.
pub fn generate_cohort(cfg: &CohortConfig) -> Result<Vec<(SessionRecord, GroundTruth)>> {
    cfg.validate()?;
    (0..cfg.n_participants)
        .into_par_iter()
        .map(|i| generate_participant(cfg, i))
        .collect()
}

/// What a miscalibration profile sees at each device sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiscalContext {
    pub t: f64,
    pub device_bpm: f64,
    pub true_bpm: f64,
    pub cpm: f64,
    pub state: ActivityState,
}

/// Replaces the device heart rate by `profile(ctx)` at every device sample.
/// The ground truth and every other stream are left untouched.
pub fn inject_known_miscalibration(
    session: &SessionRecord,
    truth: &GroundTruth,
    profile: impl Fn(&MiscalContext) -> f64,
) -> Result<SessionRecord> {
    let cpm = compute_counts(&session.accel, AxisMode::Va, &CountConfig::default())?;
    let mut out = session.clone();
    for (t, v) in out.device_hr.t.iter().zip(out.device_hr.v.iter_mut()) {
        let ctx = MiscalContext {
            t: *t,
            device_bpm: *v,
            true_bpm: truth.hr_at(*t),
            cpm: interval_value(&cpm, *t, 60.0).unwrap_or(0.0),
            state: session.schedule.state_at(*t).unwrap_or(ActivityState::RS),
        };
        *v = profile(&ctx);
    }
    Ok(out)
}
