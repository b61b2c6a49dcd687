//! Flat `key = value` configuration. Blank lines and text after `#` are
//! ignored; `grid` and `synth.extra_device` may repeat.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::{FeatureOptions, SelectionOptions};
use crate::models::{default_grid, Algorithm, ModelSpec};
use crate::signal::{ExtractionConfig, FilterSpec};
use crate::synth::{CohortConfig, ExtraDevice, TreadmillSegment};

/// Deterministic device error added to synthetic cohorts so that
/// calibration has something to learn. Applies during IS only, except
/// `scale`, which multiplies every device reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Miscalibration {
    pub is_bias_bpm: f64,
    /// Extra bpm per 1000 cpm during IS.
    pub is_cpm_gain: f64,
    pub scale: f64,
}

impl Default for Miscalibration {
    fn default() -> Self {
        Self {
            is_bias_bpm: 0.0,
            is_cpm_gain: 0.0,
            scale: 1.0,
        }
    }
}

impl Miscalibration {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Cohort directory; a synthetic cohort is generated when absent.
    pub data_dir: Option<PathBuf>,
    pub seed: u64,
    /// Seed of the synthetic cohort; defaults to `seed`.
    pub synth_seed: Option<u64>,
    pub synth: CohortConfig,
    pub miscalibration: Miscalibration,
    pub extraction: ExtractionConfig,
    pub features: FeatureOptions,
    pub selection_enabled: bool,
    pub selection: SelectionOptions,
    pub grid: Vec<ModelSpec>,
    /// Folds used by the grid search, taken from the front; 0 uses all.
    pub grid_folds: usize,
    /// Evaluate the model without rolling windows.
    pub plain: bool,
    pub windows: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            seed: 42,
            synth_seed: None,
            synth: CohortConfig::default(),
            miscalibration: Miscalibration::default(),
            extraction: ExtractionConfig::default(),
            features: FeatureOptions::default(),
            selection_enabled: true,
            selection: SelectionOptions::default(),
            grid: Vec::new(),
            grid_folds: 0,
            plain: true,
            windows: vec![5, 10, 15],
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
}

fn triple(key: &str, v: &str) -> Result<[f64; 3]> {
    let xs: Vec<f64> = list(key, v)?;
    xs.try_into()
        .map_err(|_| Error::Config(format!("{key}: expected three values (RS,LS,IS)")))
}

fn pair(key: &str, v: &str) -> Result<(f64, f64)> {
    match list::<f64>(key, v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Config(format!("{key}: expected two values"))),
    }
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let in_config = |source| Error::Stage {
            stage: "config",
            source: Box::new(source),
        };
        let text = fs::read_to_string(path).map_err(|e| in_config(Error::io(path, e)))?;
        let mut cfg = Self::parse(&text).map_err(|e| {
            in_config(match e {
                Error::Parse { line, msg, .. } => Error::Parse {
                    file: path.to_path_buf(),
                    line,
                    msg,
                },
                other => other,
            })
        })?;
        // relative data paths are resolved against the config file
        if let (Some(d), Some(parent)) = (&cfg.data_dir, path.parent()) {
            if d.is_relative() {
                cfg.data_dir = Some(parent.join(d));
            }
        }
        Ok(cfg)
    }

    /// Parses configuration text on top of the defaults.
    ///
    /// ```
    /// let cfg = hrcal::pipeline::PipelineConfig::parse(
    ///     "seed = 7\nwindows = 10\ngrid = knn:n_neighbors=5,p=2  # one spec\n",
    /// ).unwrap();
    /// assert_eq!(cfg.seed, 7);
    /// assert_eq!(cfg.windows, [10]);
    /// assert_eq!(cfg.grid.len(), 1);
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                file: PathBuf::from("<config>"),
                line: i + 1,
                msg,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.synth.device;
        let x = &mut self.extraction;
        match key {
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "seed" => self.seed = num(key, v)?,
            "synth.seed" => self.synth_seed = Some(num(key, v)?),
            "synth.participants" => self.synth.n_participants = num(key, v)?,
            "synth.rs_minutes" => self.synth.rs_minutes = num(key, v)?,
            "synth.ls_minutes" => self.synth.ls_minutes = pair(key, v)?,
            "synth.treadmill" => {
                self.synth.treadmill = v
                    .split(',')
                    .map(|seg| {
                        let (s, m) = seg
                            .split_once(':')
                            .ok_or_else(|| Error::Config(format!("{key}: expected speed:minutes, got {seg:?}")))?;
                        Ok(TreadmillSegment {
                            speed_kmh: num(key, s)?,
                            minutes: num(key, m)?,
                        })
                    })
                    .collect::<Result<_>>()?
            }
            "synth.fs_ecg" => self.synth.fs_ecg = num(key, v)?,
            "synth.fs_acc" => self.synth.fs_acc = num(key, v)?,
            "synth.device_pal" => self.synth.emit_device_pal = boolean(key, v)?,
            "synth.ecg_noise_mv" => self.synth.ecg_noise_mv = num(key, v)?,
            "synth.accel_noise_g" => self.synth.accel_noise_g = num(key, v)?,
            "synth.bias_bpm" => d.bias_bpm = triple(key, v)?,
            "synth.noise_sd_bpm" => d.noise_sd_bpm = triple(key, v)?,
            "synth.ma_gain" => d.ma_gain = num(key, v)?,
            "synth.cpm_ref" => d.cpm_ref = num(key, v)?,
            "synth.ar_coef" => d.ar_coef = num(key, v)?,
            "synth.lag_s" => d.lag_s = num(key, v)?,
            "synth.period_s" => d.period_s = num(key, v)?,
            "synth.extra_device" => {
                let (name, noise) = v
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("{key}: expected name:rs,ls,is")))?;
                let mut error = d.clone();
                error.noise_sd_bpm = triple(key, noise)?;
                error.bias_bpm = [0.0; 3];
                self.synth.extra_devices.push(ExtraDevice {
                    name: name.trim().to_string(),
                    error,
                });
            }
            "miscal.is_bias_bpm" => self.miscalibration.is_bias_bpm = num(key, v)?,
            "miscal.is_cpm_gain" => self.miscalibration.is_cpm_gain = num(key, v)?,
            "miscal.scale" => self.miscalibration.scale = num(key, v)?,
            "extract.bandpass_hz" => {
                let (lo, hi) = pair(key, v)?;
                x.bandpass = FilterSpec::bandpass(lo, hi, x.bandpass.order);
            }
            "extract.bandpass_order" => x.bandpass.order = num(key, v)?,
            "extract.k_std" => x.detector.k_std = num(key, v)?,
            "extract.window_s" => x.detector.window_s = num(key, v)?,
            "extract.refractory_s" => x.detector.refractory_s = num(key, v)?,
            "extract.resample_hz" => x.resample_hz = num(key, v)?,
            "extract.lowpass_cutoff" => x.lowpass_cutoff = num(key, v)?,
            "extract.lowpass_order" => x.lowpass_order = num(key, v)?,
            "extract.max_gap_s" => x.max_gap_s = num(key, v)?,
            "extract.shift_s" => [x.shift_rs_s, x.shift_ls_s, x.shift_is_s] = triple(key, v)?,
            "grid_step_s" => {
                x.grid_step_s = num(key, v)?;
                self.features.grid_step_s = x.grid_step_s;
            }
            "grid_tolerance_s" => {
                x.grid_tolerance_s = num(key, v)?;
                self.features.grid_tolerance_s = x.grid_tolerance_s;
            }
            "pal_source" => self.features.pal_source = v.parse()?,
            "fusion" => self.features.fusion = v.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?,
            "selection" => self.selection_enabled = boolean(key, v)?,
            "selection.p_threshold" => self.selection.p_threshold = num(key, v)?,
            "selection.mi_threshold" => self.selection.mi_threshold = num(key, v)?,
            "selection.k" => self.selection.k = num(key, v)?,
            "grid" => self.grid.push(v.parse()?),
            "grid.default" => {
                for a in v.split(',').filter(|s| !s.trim().is_empty()) {
                    self.grid.extend(default_grid(a.parse::<Algorithm>()?));
                }
            }
            "grid.folds" => self.grid_folds = num(key, v)?,
            "plain" => self.plain = boolean(key, v)?,
            "windows" => self.windows = list(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// The cohort generator settings with the resolved seed.
    pub fn cohort(&self) -> CohortConfig {
        CohortConfig {
            seed: self.synth_seed.unwrap_or(self.seed),
            ..self.synth.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows.contains(&0) {
            return Err(Error::Config("window sizes must be at least 1".into()));
        }
        if !self.plain && self.windows.is_empty() {
            return Err(Error::Config("nothing to evaluate: plain = false and no windows".into()));
        }
        for s in &self.grid {
            s.validate()?;
        }
        if self.data_dir.is_none() {
            self.cohort().validate()?;
        }
        Ok(())
    }
}
