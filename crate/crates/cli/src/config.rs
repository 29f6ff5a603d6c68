use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use impact_core::estimation::ExecutionProxy;
use impact_core::market_sim::SimConfig;
use serde::{Deserialize, Serialize};

/// Contents of a `--config` TOML file. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub max_lag: Option<usize>,
    pub toy: ToyConfig,
    pub simulate: SimConfig,
    pub estimate: EstimateConfig,
    pub regroup: RegroupConfig,
    pub fit_powerlaw: PowerLawConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }
}

/// Toy-model run. When `kappa` is set, σ = 𝒢 = R² = 1 and γ is derived from
/// it; otherwise the explicit parameters are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub gamma_signal: f64,
    pub kappa: Option<f64>,
    pub gamma_impact: f64,
    pub gain: f64,
    pub risk_sq: f64,
    pub sigma: f64,
    pub dt: Option<f64>,
    pub n_steps: usize,
    pub price_noise: f64,
    pub replicas: usize,
    pub max_lag: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            gamma_signal: 0.1,
            kappa: Some(1.6875),
            gamma_impact: 1.0,
            gain: 1.0,
            risk_sq: 1.0,
            sigma: 1.0,
            dt: None,
            n_steps: 1_000_000,
            price_noise: 0.0,
            replicas: 1,
            max_lag: 100,
            seed: 0,
        }
    }
}

/// `fit` or a fixed exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DeltaRepr", into = "DeltaRepr")]
pub enum DeltaPolicy {
    Fit,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DeltaRepr {
    Value(f64),
    Word(String),
}

impl TryFrom<DeltaRepr> for DeltaPolicy {
    type Error = String;
    fn try_from(r: DeltaRepr) -> Result<Self, String> {
        match r {
            DeltaRepr::Value(v) => Ok(DeltaPolicy::Fixed(v)),
            DeltaRepr::Word(w) => w.parse(),
        }
    }
}

impl From<DeltaPolicy> for DeltaRepr {
    fn from(d: DeltaPolicy) -> Self {
        match d {
            DeltaPolicy::Fit => DeltaRepr::Word("fit".into()),
            DeltaPolicy::Fixed(v) => DeltaRepr::Value(v),
        }
    }
}

impl FromStr for DeltaPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "fit" {
            return Ok(DeltaPolicy::Fit);
        }
        s.parse::<f64>()
            .map(DeltaPolicy::Fixed)
            .map_err(|_| format!("expected `fit` or a number, got `{s}`"))
    }
}

impl fmt::Display for DeltaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaPolicy::Fit => write!(f, "fit"),
            DeltaPolicy::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum IxMode {
    Raw,
    Deconv,
}

impl From<IxMode> for ExecutionProxy {
    fn from(m: IxMode) -> Self {
        match m {
            IxMode::Raw => ExecutionProxy::Raw,
            IxMode::Deconv => ExecutionProxy::Deconvolved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub input: Option<PathBuf>,
    pub delta: DeltaPolicy,
    /// Amplitude used with a fixed δ.
    pub y0: f64,
    pub predictor: bool,
    pub regroup: Option<usize>,
    pub ix_mode: IxMode,
    pub deltas: Vec<f64>,
    pub max_lag: usize,
    pub sqrt_bins: usize,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            input: None,
            delta: DeltaPolicy::Fit,
            y0: 1.0,
            predictor: true,
            regroup: None,
            ix_mode: IxMode::Deconv,
            deltas: vec![0.5, 0.6, 1.0],
            max_lag: 10,
            sqrt_bins: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegroupConfig {
    pub input: Option<PathBuf>,
    pub k: usize,
}

impl Default for RegroupConfig {
    fn default() -> Self {
        RegroupConfig { input: None, k: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LagAxis {
    /// Fit against lag + 1 (days elapsed since the decision).
    Elapsed,
    /// Fit against the lag column as written.
    Lag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerLawConfig {
    pub input: Option<PathBuf>,
    pub column: Option<String>,
    pub lag_min: usize,
    pub lag_max: Option<usize>,
    pub axis: LagAxis,
}

impl Default for PowerLawConfig {
    fn default() -> Self {
        PowerLawConfig { input: None, column: None, lag_min: 1, lag_max: None, axis: LagAxis::Elapsed }
    }
}

pub fn require_input(input: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    match input {
        Some(p) => Ok(p),
        None => bail!("no input given: pass --input or set `input` in the config"),
    }
}
