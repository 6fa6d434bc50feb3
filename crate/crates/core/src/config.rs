//! Scenario configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dtw::DtwParams;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_NCC_WINDOW;
use crate::ism::{ShoeboxRoom, DEFAULT_SINC_HALFWIDTH};
use crate::kalman::{KalmanParams, Variant};
use crate::signal::{Point3, SampleClock};
use crate::transition::TransitionOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate: f64,
    /// Number of RIR taps `N` tracked by the filter.
    pub rir_length: usize,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    pub scenario: Scenario,
    #[serde(default)]
    pub kalman: KalmanParams,
    #[serde(default)]
    pub dtw: DtwParams,
    #[serde(default)]
    pub transition: TransitionOptions,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub output: OutputOptions,
}

fn default_seed() -> u64 {
    7
}

fn default_rate() -> f64 {
    16_000.0
}

fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

/// Exactly one of a simulated room or a recorded dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Synthetic(SyntheticScenario),
    Dataset(DatasetScenario),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScenario {
    pub room: ShoeboxRoom,
    pub source: Point3,
    #[serde(default = "default_order")]
    pub max_order: u32,
    #[serde(default = "default_halfwidth")]
    pub sinc_halfwidth: usize,
    /// Polyline through the room; each leg is one segment.
    pub waypoints: Vec<Point3>,
    /// Microphone speed per leg, m/s.
    pub speeds: Vec<f64>,
    /// Recording SNR in dB; omit for a noise-free recording.
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// Standard deviation of the white source signal.
    #[serde(default = "default_source_std")]
    pub source_std: f64,
    /// Locations between ground-truth RIRs written by `simulate`.
    #[serde(default = "default_grid_stride")]
    pub grid_stride: usize,
}

fn default_order() -> u32 {
    1
}

fn default_halfwidth() -> usize {
    DEFAULT_SINC_HALFWIDTH
}

fn default_source_std() -> f64 {
    1.0
}

fn default_grid_stride() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetScenario {
    pub root: PathBuf,
    /// Measurement points `p` used as segment boundaries, ascending.
    pub boundaries: Vec<usize>,
    /// Resample audio whose rate differs from `sample_rate`.
    #[serde(default)]
    pub resample: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Location-lag search window of the NCC alignment.
    pub ncc_window: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ncc_window: DEFAULT_NCC_WINDOW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputOptions {
    /// Per-location gain and innovation traces.
    pub traces: bool,
    /// Cost matrices, warp paths and transition matrices as CSV.
    pub debug: bool,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        // dataset roots are relative to the config file
        if let Scenario::Dataset(d) = &mut cfg.scenario {
            if d.root.is_relative() {
                if let Some(dir) = path.parent() {
                    d.root = dir.join(&d.root);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn clock(&self) -> Result<SampleClock> {
        SampleClock::new(self.sample_rate)
    }

    pub fn validate(&self) -> Result<()> {
        self.clock()?;
        if self.rir_length == 0 {
            return Err(Error::config("rir_length must be positive"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("no variants selected"));
        }
        self.kalman.validate(self.rir_length)?;
        if self.dtw.min_diag_len == 0 {
            return Err(Error::config("dtw.min_diag_len must be positive"));
        }
        match &self.scenario {
            Scenario::Synthetic(s) => {
                s.room.validate()?;
                if s.waypoints.len() < 2 {
                    return Err(Error::config("synthetic trajectory needs at least two waypoints"));
                }
                if s.speeds.len() != s.waypoints.len() - 1 {
                    return Err(Error::config(format!(
                        "{} legs but {} speeds",
                        s.waypoints.len() - 1,
                        s.speeds.len()
                    )));
                }
                if s.speeds.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::config("speeds must be positive"));
                }
                if s.grid_stride == 0 {
                    return Err(Error::config("grid_stride must be positive"));
                }
                if s.source_std.is_nan() || s.source_std <= 0.0 {
                    return Err(Error::config("source_std must be positive"));
                }
            }
            Scenario::Dataset(d) => {
                if d.boundaries.len() < 2 || d.boundaries.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::config(
                        "dataset boundaries need at least two strictly increasing points",
                    ));
                }
            }
        }
        Ok(())
    }
}
