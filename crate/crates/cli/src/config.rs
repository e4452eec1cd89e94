//! Run configs. Each command reads an optional JSON document, applies flag
//! overrides on top and validates the result before touching any data.

use std::fs;
use std::path::{Path, PathBuf};

use gsvs::esd::EsdOptions;
use gsvs::pipeline::{default_candidates, DEFAULT_SCAN_STRIDE};
use gsvs::recon::{Encoding, EncodingSpec};
use gsvs::synth::PhantomSpec;
use gsvs::{DenoiseConfig, GammaChoice, InterleavedMode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{CliResult, Failure};

pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Format(format!("{}: {e}", path.display())))
}

pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> CliResult<T> {
    path.map_or_else(|| Ok(T::default()), |p| load(p))
}

pub fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| Failure::usage(format!("missing --{flag} (or \"{flag}\" in the config)")))
}

pub fn check_threads(threads: Option<usize>) -> CliResult<()> {
    if threads == Some(0) {
        return Err(Failure::usage("--threads must be positive"));
    }
    Ok(())
}

fn scan_default() -> DenoiseConfig {
    DenoiseConfig {
        gamma: GammaChoice::Scan {
            candidates: default_candidates(),
            stride: DEFAULT_SCAN_STRIDE,
        },
        ..DenoiseConfig::fixed(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiseRun {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub noise: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Interleaved processing; plain denoising when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<InterleavedMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default = "scan_default")]
    pub denoise: DenoiseConfig,
}

impl Default for DenoiseRun {
    fn default() -> Self {
        Self {
            input: None,
            noise: None,
            output: None,
            mode: None,
            threads: None,
            denoise: scan_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaRun {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub noise: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_candidates")]
    pub candidates: Vec<f64>,
    #[serde(default = "default_scan_stride")]
    pub stride: usize,
    #[serde(default)]
    pub esd: EsdOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub phase_correction: bool,
    #[serde(default)]
    pub whitened: bool,
    #[serde(default = "yes")]
    pub esd_cache: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn default_scan_stride() -> usize {
    DEFAULT_SCAN_STRIDE
}

fn yes() -> bool {
    true
}

impl Default for GammaRun {
    fn default() -> Self {
        Self {
            input: None,
            noise: None,
            output: None,
            candidates: default_candidates(),
            stride: DEFAULT_SCAN_STRIDE,
            esd: EsdOptions::default(),
            seed: 0,
            phase_correction: true,
            whitened: false,
            esd_cache: true,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRun {
    pub phantom: PhantomSpec,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateRun {
    /// Acquisition model; every encoding is validated on its own.
    #[serde(default = "toy_encoding")]
    pub encoding: EncodingSpec,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default = "default_validate_stride")]
    pub stride: usize,
    #[serde(default)]
    pub seed: u64,
    /// Accepted range for the median of every estimator.
    #[serde(default = "default_bounds")]
    pub bounds: [f64; 2],
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

/// Fully sampled 32 x 32 single-slice acquisition with four coils.
pub fn toy_encoding() -> EncodingSpec {
    EncodingSpec {
        dims: [32, 32, 1],
        spacing_mm: [1.0; 3],
        coils: 4,
        coil_correlation: 0.3,
        encodings: vec![Encoding::default()],
        schedule: None,
    }
}

fn default_draws() -> usize {
    800
}

fn default_patch() -> usize {
    200
}

fn default_validate_stride() -> usize {
    8
}

fn default_bounds() -> [f64; 2] {
    [0.95, 1.05]
}

impl Default for ValidateRun {
    fn default() -> Self {
        Self {
            encoding: toy_encoding(),
            draws: default_draws(),
            patch_size: default_patch(),
            stride: default_validate_stride(),
            seed: 0,
            bounds: default_bounds(),
            output: None,
            threads: None,
        }
    }
}

impl ValidateRun {
    pub fn validate(&self) -> CliResult<()> {
        if self.patch_size < 2 || self.patch_size > self.draws {
            return Err(Failure::usage(format!(
                "patch size must lie in 2..=draws, got M={} with {} draws",
                self.patch_size, self.draws
            )));
        }
        if self.stride == 0 {
            return Err(Failure::usage("stride must be positive"));
        }
        if !(self.bounds[0] < self.bounds[1]) {
            return Err(Failure::usage("bounds must be increasing"));
        }
        if self.encoding.schedule.is_some() {
            return Err(Failure::usage(
                "validation runs each encoding separately; drop the schedule",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EsdSource {
    White {
        patch_size: usize,
        volumes: usize,
        #[serde(default = "one")]
        sigma2: f64,
    },
    /// Marginal covariance of the patch centred at `center`.
    Model {
        noise: PathBuf,
        center: [usize; 3],
        patch_size: usize,
        volumes: usize,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsdRun {
    pub source: EsdSource,
    #[serde(default)]
    pub esd: EsdOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}
