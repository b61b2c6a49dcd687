use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical unit carried by a [`SampledSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    MilliVolt,
    Bpm,
    G,
    Cpm,
    StepsPerMin,
    /// Cumulative step count.
    Steps,
    /// Ordinal PAL code 0-3.
    PalLevel,
}

/// Where a series came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Ecg,
    Device,
    Derived,
}

/// Timestamped scalar stream. Timestamps are seconds since session start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSeries {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub unit: Unit,
    pub source: Source,
}

impl SampledSeries {
    pub fn new(t: Vec<f64>, v: Vec<f64>, unit: Unit, source: Source) -> Result<Self> {
        if t.len() != v.len() {
            return Err(Error::Shape(format!(
                "{} timestamps but {} values",
                t.len(),
                v.len()
            )));
        }
        Ok(Self { t, v, unit, source })
    }

    pub fn empty(unit: Unit, source: Source) -> Self {
        Self {
            t: Vec::new(),
            v: Vec::new(),
            unit,
            source,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.t.iter().copied().zip(self.v.iter().copied())
    }

    /// Checks the series invariants: strictly increasing finite timestamps,
    /// finite values, and no negative heart rate.
    pub fn validate(&self, name: &str) -> Result<()> {
        if self.t.len() != self.v.len() {
            return Err(Error::Validation(format!("{name}: length mismatch")));
        }
        for (i, (&t, &v)) in self.t.iter().zip(&self.v).enumerate() {
            if !t.is_finite() {
                return Err(Error::Validation(format!(
                    "{name}: non-finite timestamp at sample {i}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "{name}: non-finite value at t={t}"
                )));
            }
            if self.unit == Unit::Bpm && v < 0.0 {
                return Err(Error::Validation(format!(
                    "{name}: negative heart rate {v} at t={t}"
                )));
            }
            if i > 0 && t <= self.t[i - 1] {
                return Err(Error::Validation(format!(
                    "{name}: timestamps not strictly increasing at sample {i} (t={t})"
                )));
            }
        }
        Ok(())
    }

    /// Coefficient of variation of the sampling intervals; 0 for perfectly
    /// regular series, `None` with fewer than three samples.
    pub fn cadence_cv(&self) -> Option<f64> {
        if self.t.len() < 3 {
            return None;
        }
        let dts: Vec<f64> = self.t.windows(2).map(|w| w[1] - w[0]).collect();
        let n = dts.len() as f64;
        let mean = dts.iter().sum::<f64>() / n;
        let var = dts.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        Some(var.sqrt() / mean)
    }
}

/// Triaxial accelerometer stream in g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriaxialSeries {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl TriaxialSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let n = self.t.len();
        if self.x.len() != n || self.y.len() != n || self.z.len() != n {
            return Err(Error::Validation(format!("{name}: axis length mismatch")));
        }
        for i in 0..n {
            let t = self.t[i];
            if !t.is_finite() || !self.x[i].is_finite() || !self.y[i].is_finite() || !self.z[i].is_finite()
            {
                return Err(Error::Validation(format!(
                    "{name}: non-finite sample at index {i}"
                )));
            }
            if i > 0 && t <= self.t[i - 1] {
                return Err(Error::Validation(format!(
                    "{name}: timestamps not strictly increasing at sample {i} (t={t})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    /// Binary encoding fed to models.
    pub fn code(self) -> f64 {
        match self {
            Gender::Male => 0.0,
            Gender::Female => 1.0,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
        })
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "male" => Ok(Gender::Male),
            "female" => Ok(Gender::Female),
            other => Err(Error::Validation(format!("unknown gender {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    pub id: String,
    pub gender: Gender,
    /// kg/m²
    pub bmi: f64,
    /// Pittsburgh Sleep Quality Index, 0..=21.
    pub psqi: u8,
}

impl ParticipantProfile {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(|c: char| c == ',' || c.is_whitespace()) {
            return Err(Error::Validation(format!(
                "participant id {:?} must be non-empty without commas or whitespace",
                self.id
            )));
        }
        if !(self.bmi.is_finite() && self.bmi > 0.0) {
            return Err(Error::Validation(format!(
                "{}: bmi must be finite and positive, got {}",
                self.id, self.bmi
            )));
        }
        if self.psqi > 21 {
            return Err(Error::Validation(format!(
                "{}: psqi {} outside [0, 21]",
                self.id, self.psqi
            )));
        }
        Ok(())
    }
}

/// Protocol state a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityState {
    /// Resting
    RS,
    /// Laying down
    LS,
    /// Intense treadmill activity
    IS,
}

impl ActivityState {
    pub const ALL: [ActivityState; 3] = [ActivityState::RS, ActivityState::LS, ActivityState::IS];

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityState::RS => "RS",
            ActivityState::LS => "LS",
            ActivityState::IS => "IS",
        }
    }
}

impl fmt::Display for ActivityState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActivityState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "RS" => Ok(ActivityState::RS),
            "LS" => Ok(ActivityState::LS),
            "IS" => Ok(ActivityState::IS),
            other => Err(Error::Validation(format!("unknown state {other:?}"))),
        }
    }
}

/// A single state or the aggregate over all three, as used in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReportState {
    One(ActivityState),
    All,
}

impl ReportState {
    pub const ALL: [ReportState; 4] = [
        ReportState::One(ActivityState::RS),
        ReportState::One(ActivityState::LS),
        ReportState::One(ActivityState::IS),
        ReportState::All,
    ];

    pub fn contains(self, state: ActivityState) -> bool {
        match self {
            ReportState::One(s) => s == state,
            ReportState::All => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReportState::One(s) => s.as_str(),
            ReportState::All => "ALL",
        }
    }
}

impl fmt::Display for ReportState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReportState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ALL" | "All" | "all" => Ok(ReportState::All),
            other => other.parse().map(ReportState::One),
        }
    }
}

/// Half-open interval `[t_start, t_end)` of one protocol state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub state: ActivityState,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schedule(pub Vec<ScheduleEntry>);

impl Schedule {
    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.0.iter().enumerate() {
            if !(e.t_start.is_finite() && e.t_end.is_finite() && e.t_start < e.t_end) {
                return Err(Error::Validation(format!(
                    "schedule entry {i} ({}) has empty or invalid interval [{}, {})",
                    e.state, e.t_start, e.t_end
                )));
            }
            if i > 0 && e.t_start < self.0[i - 1].t_end {
                return Err(Error::Validation(format!(
                    "schedule entry {i} ({}) overlaps or precedes entry {}",
                    e.state,
                    i - 1
                )));
            }
        }
        Ok(())
    }

    pub fn state_at(&self, t: f64) -> Option<ActivityState> {
        self.0
            .iter()
            .find(|e| t >= e.t_start && t < e.t_end)
            .map(|e| e.state)
    }

    /// `(first start, last end)`.
    pub fn span(&self) -> Option<(f64, f64)> {
        Some((self.0.first()?.t_start, self.0.last()?.t_end))
    }
}

/// A named heart-rate stream from a wrist device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceStream {
    pub name: String,
    pub hr: SampledSeries,
}

/// One participant's full recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub profile: ParticipantProfile,
    pub fs_ecg: f64,
    pub fs_acc: f64,
    pub ecg: SampledSeries,
    /// Heart rate of the device of interest.
    pub device_hr: SampledSeries,
    /// Further devices recorded alongside, used by device validation.
    pub other_devices: Vec<DeviceStream>,
    /// PAL reported by the device itself, ordinal 0-3, when available.
    pub device_pal: Option<SampledSeries>,
    pub accel: TriaxialSeries,
    pub steps: SampledSeries,
    pub schedule: Schedule,
}

/// Knobs for checks the protocol leaves to judgement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    /// Device series whose interval coefficient of variation exceeds this are
    /// reported as irregular (never dropped).
    pub max_device_cadence_cv: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            max_device_cadence_cv: 0.5,
        }
    }
}

fn check_uniform(t: &[f64], fs: f64, name: &str) -> Result<()> {
    let dt = 1.0 / fs;
    let tol = 0.01 * dt;
    for (i, w) in t.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > tol {
            return Err(Error::Validation(format!(
                "{name}: non-uniform sampling at sample {} (dt={}, expected {dt})",
                i + 1,
                w[1] - w[0]
            )));
        }
    }
    Ok(())
}

impl SessionRecord {
    pub fn id(&self) -> &str {
        &self.profile.id
    }

    /// All device streams, the device of interest first under the name `device`.
    pub fn devices(&self) -> impl Iterator<Item = (&str, &SampledSeries)> {
        std::iter::once(("device", &self.device_hr))
            .chain(self.other_devices.iter().map(|d| (d.name.as_str(), &d.hr)))
    }

    /// Validates every invariant of the record. Returns non-fatal warnings.
    pub fn validate(&self, opts: &ValidationOptions) -> Result<Vec<String>> {
        let id = &self.profile.id;
        self.profile.validate()?;
        if !(self.fs_ecg.is_finite() && self.fs_ecg > 0.0) {
            return Err(Error::Validation(format!("{id}: invalid fs_ecg {}", self.fs_ecg)));
        }
        if !(self.fs_acc.is_finite() && self.fs_acc > 0.0) {
            return Err(Error::Validation(format!("{id}: invalid fs_acc {}", self.fs_acc)));
        }
        self.schedule.validate()?;
        self.ecg.validate(&format!("{id}/ecg"))?;
        check_uniform(&self.ecg.t, self.fs_ecg, &format!("{id}/ecg"))?;
        self.accel.validate(&format!("{id}/accel"))?;
        check_uniform(&self.accel.t, self.fs_acc, &format!("{id}/accel"))?;
        self.steps.validate(&format!("{id}/steps"))?;
        let mut warnings = Vec::new();
        for (name, hr) in self.devices() {
            hr.validate(&format!("{id}/{name}"))?;
            if let Some(cv) = hr.cadence_cv() {
                if cv > opts.max_device_cadence_cv {
                    warnings.push(format!(
                        "{id}/{name}: irregular sampling (interval cv {cv:.3})"
                    ));
                }
            }
        }
        if let Some(pal) = &self.device_pal {
            pal.validate(&format!("{id}/device_pal"))?;
            if pal.v.iter().any(|&v| !(0.0..=3.0).contains(&v) || v.fract() != 0.0) {
                return Err(Error::Validation(format!(
                    "{id}/device_pal: levels must be integers 0-3"
                )));
            }
        }
        if let Some((start, end)) = self.schedule.span() {
            let check = |name: &str, t: &[f64]| -> Result<()> {
                if let (Some(&a), Some(&b)) = (t.first(), t.last()) {
                    if a < start || b > end {
                        return Err(Error::Validation(format!(
                            "{id}/{name}: samples [{a}, {b}] outside schedule span [{start}, {end}]"
                        )));
                    }
                }
                Ok(())
            };
            check("ecg", &self.ecg.t)?;
            check("accel", &self.accel.t)?;
            check("steps", &self.steps.t)?;
            for (name, hr) in self.devices() {
                check(name, &hr.t)?;
            }
        } else {
            return Err(Error::Validation(format!("{id}: empty schedule")));
        }
        Ok(warnings)
    }
}
