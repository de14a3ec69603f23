use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use simcal_core::baselines::{CagcnConfig, EtsConfig, VsConfig};
use simcal_core::classifier::GcnConfig;
use simcal_core::simcalib::SimCalibConfig;
use simcal_core::theory::{SweepPoint, WorldParams};
use simcal_core::CsbmParams;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Uncal,
    Ts,
    Vs,
    Ets,
    Cagcn,
    Simcalib,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Uncal,
        Method::Ts,
        Method::Vs,
        Method::Ets,
        Method::Cagcn,
        Method::Simcalib,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Uncal => "uncal",
            Method::Ts => "ts",
            Method::Vs => "vs",
            Method::Ets => "ets",
            Method::Cagcn => "cagcn",
            Method::Simcalib => "simcalib",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                CliError::Usage(format!(
                    "unknown method '{s}'; valid methods: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    /// Train 2000 epochs with no early stopping and no weight decay; only
    /// `gcn.hidden` is kept from `gcn`.
    pub overtrain: bool,
    pub gcn: GcnConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            overtrain: true,
            gcn: GcnConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn effective(&self, seed: u64) -> GcnConfig {
        if self.overtrain {
            GcnConfig {
                hidden: self.gcn.hidden,
                ..GcnConfig::overtrained(seed)
            }
        } else {
            GcnConfig {
                seed,
                ..self.gcn.clone()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoryConfig {
    /// Fields not set per grid point (`σ²`, label mode, σ-aware flag).
    pub template: WorldParams,
    pub points: Vec<SweepPoint>,
    pub trials: usize,
    pub mc_samples: usize,
}

/// The worked example point: `d = 64`, `n = 4`, `|a| = 2.66`, `b = 0`.
pub const EXAMPLE_POINT: SweepPoint = SweepPoint {
    d: 64,
    n: 4,
    a: 2.66,
    b_norm: 0.0,
};

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            template: WorldParams::default(),
            points: vec![EXAMPLE_POINT],
            trials: 2000,
            mc_samples: 20000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed. Overrides `csbm.seed` and `pretrain.gcn.seed`, and
    /// together with each entry of `seeds` derives the calibrator seeds.
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub method: Method,
    /// Confidence bins for ECE, ACE and the reliability tables.
    pub bins: usize,
    /// Bundle and results directory.
    pub out: PathBuf,
    pub csbm: CsbmParams,
    pub pretrain: PretrainConfig,
    pub simcalib: SimCalibConfig,
    pub cagcn: CagcnConfig,
    pub vs: VsConfig,
    pub ets: EtsConfig,
    pub theory: TheoryConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            method: Method::Simcalib,
            bins: 15,
            out: PathBuf::from("simcal-run"),
            csbm: CsbmParams::default(),
            pretrain: PretrainConfig::default(),
            simcalib: SimCalibConfig::default(),
            cagcn: CagcnConfig::default(),
            vs: VsConfig::default(),
            ets: EtsConfig::default(),
            theory: TheoryConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.bins == 0 {
            return Err(CliError::Usage("bins must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Usage("seeds must not be empty".into()));
        }
        Ok(())
    }

    pub fn csbm_params(&self) -> CsbmParams {
        CsbmParams {
            seed: self.seed,
            ..self.csbm.clone()
        }
    }
}
