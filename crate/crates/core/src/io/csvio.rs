use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::session::{
    DeviceStream, Gender, ParticipantProfile, SampledSeries, Schedule, ScheduleEntry,
    SessionRecord, Source, TriaxialSeries, Unit, ValidationOptions,
};

pub const META_HEADER: &str = "fs_ecg,fs_acc,participant_id,gender,bmi,psqi";
pub const ECG_HEADER: &str = "t,mv";
pub const DEVICE_HR_HEADER: &str = "t,bpm";
pub const ACCEL_HEADER: &str = "t,x,y,z";
pub const STEPS_HEADER: &str = "t,cumulative_steps";
pub const SCHEDULE_HEADER: &str = "state,t_start,t_end";
pub const DEVICE_PAL_HEADER: &str = "t,pal";

/// Formats a value as decimal text with at most 9 significant digits.
///
/// Output never uses exponent notation and is locale independent. Formatting
/// a value parsed from this function's output reproduces the same text.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    format!("{rounded}")
}

/// P-values: four significant digits, scientific below 1e-4.
///
/// ```
/// assert_eq!(hrcal::io::fmt_p(0.0123456), "0.01235");
/// assert_eq!(hrcal::io::fmt_p(1.26655566e-188), "1.27e-188");
/// assert_eq!(hrcal::io::fmt_p(0.0), "0");
/// ```
pub fn fmt_p(p: f64) -> String {
    if p == 0.0 || p >= 1e-4 {
        let r: f64 = format!("{p:.3e}").parse().unwrap_or(p);
        format!("{r}")
    } else {
        format!("{p:.2e}")
    }
}

/// Fixed-decimal formatting used by report tables.
pub fn fmt_fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    // avoid "-0.00"
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// A parsed CSV: header names plus string records with their line numbers.
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn parse_err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            file: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    pub fn expect_header(&self, expected: &str) -> Result<()> {
        let got = self.header.join(",");
        if got != expected {
            return Err(self.parse_err(1, format!("expected header {expected:?}, found {got:?}")));
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| self.parse_err(1, format!("missing column {name:?}")))
    }

    pub fn f64_at(&self, line: usize, row: &[String], col: usize) -> Result<f64> {
        let raw = row
            .get(col)
            .ok_or_else(|| self.parse_err(line, format!("missing field {}", col + 1)))?;
        raw.trim()
            .parse::<f64>()
            .map_err(|_| self.parse_err(line, format!("invalid number {raw:?}")))
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table {
        path: path.to_path_buf(),
        header,
        rows,
    })
}

fn read_series(path: &Path, header: &str, unit: Unit, source: Source) -> Result<SampledSeries> {
    let table = read_table(path)?;
    table.expect_header(header)?;
    let mut t = Vec::with_capacity(table.rows.len());
    let mut v = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        t.push(table.f64_at(*line, row, 0)?);
        v.push(table.f64_at(*line, row, 1)?);
    }
    SampledSeries::new(t, v, unit, source)
}

/// Buffered writer that funnels every line through one place so output is
/// byte-deterministic.
pub struct CsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.line(header)?;
        Ok(w)
    }

    pub fn line(&mut self, line: &str) -> Result<()> {
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn write_series(path: &Path, header: &str, s: &SampledSeries) -> Result<()> {
    let mut w = CsvWriter::create(path, header)?;
    for (t, v) in s.iter() {
        w.line(&format!("{},{}", fmt_num(t), fmt_num(v)))?;
    }
    w.finish()
}

fn device_file_name(name: &str) -> String {
    format!("device_hr_{name}.csv")
}

/// Loads one session directory and validates it.
pub fn load_session(dir: &Path) -> Result<SessionRecord> {
    load_session_with(dir, &ValidationOptions::default())
}

pub fn load_session_with(dir: &Path, opts: &ValidationOptions) -> Result<SessionRecord> {
    let meta = read_table(&dir.join("meta.csv"))?;
    meta.expect_header(META_HEADER)?;
    let (line, row) = match meta.rows.as_slice() {
        [one] => one,
        _ => return Err(meta.parse_err(2, "meta.csv must contain exactly one data row")),
    };
    let fs_ecg = meta.f64_at(*line, row, 0)?;
    let fs_acc = meta.f64_at(*line, row, 1)?;
    let gender: Gender = row[3]
        .parse()
        .map_err(|e: Error| meta.parse_err(*line, e.to_string()))?;
    let psqi_raw = meta.f64_at(*line, row, 5)?;
    if psqi_raw.fract() != 0.0 || !(0.0..=21.0).contains(&psqi_raw) {
        return Err(Error::Validation(format!(
            "{}: psqi must be an integer in [0, 21], got {psqi_raw}",
            row[2]
        )));
    }
    let profile = ParticipantProfile {
        id: row[2].clone(),
        gender,
        bmi: meta.f64_at(*line, row, 4)?,
        psqi: psqi_raw as u8,
    };

    let ecg = read_series(&dir.join("ecg.csv"), ECG_HEADER, Unit::MilliVolt, Source::Ecg)?;
    let device_hr = read_series(
        &dir.join("device_hr.csv"),
        DEVICE_HR_HEADER,
        Unit::Bpm,
        Source::Device,
    )?;

    let accel_table = read_table(&dir.join("accel.csv"))?;
    accel_table.expect_header(ACCEL_HEADER)?;
    let n = accel_table.rows.len();
    let mut accel = TriaxialSeries {
        t: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        z: Vec::with_capacity(n),
    };
    for (line, row) in &accel_table.rows {
        accel.t.push(accel_table.f64_at(*line, row, 0)?);
        accel.x.push(accel_table.f64_at(*line, row, 1)?);
        accel.y.push(accel_table.f64_at(*line, row, 2)?);
        accel.z.push(accel_table.f64_at(*line, row, 3)?);
    }

    let steps = read_series(&dir.join("steps.csv"), STEPS_HEADER, Unit::Steps, Source::Device)?;

    let sched_table = read_table(&dir.join("schedule.csv"))?;
    sched_table.expect_header(SCHEDULE_HEADER)?;
    let mut entries = Vec::with_capacity(sched_table.rows.len());
    for (line, row) in &sched_table.rows {
        let state = row[0]
            .parse()
            .map_err(|e: Error| sched_table.parse_err(*line, e.to_string()))?;
        entries.push(ScheduleEntry {
            state,
            t_start: sched_table.f64_at(*line, row, 1)?,
            t_end: sched_table.f64_at(*line, row, 2)?,
        });
    }

    let pal_path = dir.join("device_pal.csv");
    let device_pal = if pal_path.exists() {
        Some(read_series(&pal_path, DEVICE_PAL_HEADER, Unit::PalLevel, Source::Device)?)
    } else {
        None
    };

    let mut other_names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter_map(|f| {
            f.strip_prefix("device_hr_")
                .and_then(|r| r.strip_suffix(".csv"))
                .map(str::to_string)
        })
        .collect();
    other_names.sort();
    let other_devices = other_names
        .into_iter()
        .map(|name| {
            let hr = read_series(
                &dir.join(device_file_name(&name)),
                DEVICE_HR_HEADER,
                Unit::Bpm,
                Source::Device,
            )?;
            Ok(DeviceStream { name, hr })
        })
        .collect::<Result<Vec<_>>>()?;

    let session = SessionRecord {
        profile,
        fs_ecg,
        fs_acc,
        ecg,
        device_hr,
        other_devices,
        device_pal,
        accel,
        steps,
        schedule: Schedule(entries),
    };
    for w in session.validate(opts)? {
        log::warn!("{w}");
    }
    Ok(session)
}

/// Writes a session as the directory of CSV files read by [`load_session`].
pub fn write_session(session: &SessionRecord, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = &session.profile;
    let mut meta = CsvWriter::create(&dir.join("meta.csv"), META_HEADER)?;
    meta.line(&format!(
        "{},{},{},{},{},{}",
        fmt_num(session.fs_ecg),
        fmt_num(session.fs_acc),
        p.id,
        p.gender,
        fmt_num(p.bmi),
        p.psqi
    ))?;
    meta.finish()?;
    write_series(&dir.join("ecg.csv"), ECG_HEADER, &session.ecg)?;
    write_series(&dir.join("device_hr.csv"), DEVICE_HR_HEADER, &session.device_hr)?;
    for d in &session.other_devices {
        write_series(&dir.join(device_file_name(&d.name)), DEVICE_HR_HEADER, &d.hr)?;
    }
    if let Some(pal) = &session.device_pal {
        write_series(&dir.join("device_pal.csv"), DEVICE_PAL_HEADER, pal)?;
    }
    let a = &session.accel;
    let mut acc = CsvWriter::create(&dir.join("accel.csv"), ACCEL_HEADER)?;
    for i in 0..a.len() {
        acc.line(&format!(
            "{},{},{},{}",
            fmt_num(a.t[i]),
            fmt_num(a.x[i]),
            fmt_num(a.y[i]),
            fmt_num(a.z[i])
        ))?;
    }
    acc.finish()?;
    write_series(&dir.join("steps.csv"), STEPS_HEADER, &session.steps)?;
    let mut sched = CsvWriter::create(&dir.join("schedule.csv"), SCHEDULE_HEADER)?;
    for e in session.schedule.entries() {
        sched.line(&format!(
            "{},{},{}",
            e.state,
            fmt_num(e.t_start),
            fmt_num(e.t_end)
        ))?;
    }
    sched.finish()
}

/// Loads every session directory (any subdirectory holding a `meta.csv`)
/// under `dir`, ordered by directory name.
pub fn load_cohort(dir: &Path) -> Result<Vec<SessionRecord>> {
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("meta.csv").is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no session directories found under {}",
            dir.display()
        )));
    }
    subdirs.iter().map(|d| load_session(d)).collect()
}

/// Writes each session to `dir/<participant_id>/`.
pub fn write_cohort(sessions: &[SessionRecord], dir: &Path) -> Result<()> {
    for s in sessions {
        write_session(s, &dir.join(s.id()))?;
    }
    Ok(())
}
