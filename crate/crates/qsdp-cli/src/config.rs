//! JSON config schemas. Every file carries a `schema_version` and unknown
//! keys are rejected, so a typo in a field like `beta` fails loudly instead
//! of silently running defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qsdp::data::{CsvSchema, NormalizeMode, SecondLayer};
use qsdp::sdp::{LossKind, SolverConfig};
use qsdp::shaping::ShapeConfig;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::io(format!("cannot read config {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn check_version(version: u32, what: &str) -> Result<(), CliError> {
    if version != SCHEMA_VERSION {
        return Err(CliError::config(format!(
            "{what}: unsupported schema_version {version} (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

/// Where an experiment or gen-data run gets its dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Planted(PlantedSpec),
    PlantedMulticlass(MulticlassSpec),
    Csv(CsvSource),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedSpec {
    pub n: usize,
    pub d: usize,
    pub planted_m: usize,
    pub seed: u64,
    pub second_layer: SecondLayer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MulticlassSpec {
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    pub planted_m: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub schema: CsvSchema,
    pub train_fraction: f64,
    pub split_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub schema_version: u32,
    pub source: DataSource,
    #[serde(default = "default_normalize")]
    pub normalize: NormalizeMode,
}

pub fn default_normalize() -> NormalizeMode {
    NormalizeMode::None
}

impl GenDataConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.schema_version, "gen-data config")
    }
}

/// Variant selector as it appears in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum VariantChoice {
    Bilinear,
    Quadratic,
    Vector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSdpConfig {
    pub schema_version: u32,
    /// Binary dataset cache produced by `gen-data`.
    pub dataset: PathBuf,
    pub variant: VariantChoice,
    pub beta: f64,
    pub loss: LossKind,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl TrainSdpConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.schema_version, "train-sdp config")?;
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(CliError::config(format!("beta = {} must be >= 0", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeMethod {
    Krivine,
    Numeric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeCommandConfig {
    pub schema_version: u32,
    /// Solution JSON produced by `train-sdp`.
    pub solution: PathBuf,
    #[serde(default = "default_shape_method")]
    pub method: ShapeMethod,
    #[serde(default)]
    pub numeric: ShapeConfig,
}

pub fn default_shape_method() -> ShapeMethod {
    ShapeMethod::Krivine
}

impl ShapeCommandConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.schema_version, "shape config")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub schema_version: u32,
    /// Shaped covariance set produced by `shape`.
    pub shaped: PathBuf,
    pub neurons: usize,
    pub seed: u64,
}

impl SampleConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.schema_version, "sample config")?;
        if self.neurons == 0 {
            return Err(CliError::config("neurons must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBaselineConfig {
    pub schema_version: u32,
    pub dataset: PathBuf,
    pub loss: LossKind,
    pub train: qsdp::baseline::TrainConfig,
}

impl TrainBaselineConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.schema_version, "train-baseline config")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizeBaselineConfig {
    pub schema_version: u32,
    /// Real-valued weights JSON produced by `train-baseline`.
    pub weights: PathBuf,
    #[serde(default = "default_formula")]
    pub formula: qsdp::baseline::QuantizeFormula,
}

pub fn default_formula() -> qsdp::baseline::QuantizeFormula {
    qsdp::baseline::QuantizeFormula::LeastSquares
}

impl QuantizeBaselineConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.schema_version, "quantize-baseline config")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub schema_version: u32,
    /// Bit-packed network file.
    pub network: PathBuf,
    pub dataset: PathBuf,
    pub loss: LossKind,
    pub beta: f64,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.schema_version, "eval config")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvertTarget {
    /// Multi-level poly network to a binary bilinear network over lifted
    /// inputs.
    Bilinear,
    /// Bilinear network to the 3m-neuron quadratic-activation network.
    Quadratic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvertConfig {
    pub schema_version: u32,
    pub network: PathBuf,
    pub target: ConvertTarget,
}

impl ConvertConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.schema_version, "convert config")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Scale the learning rate by the neuron count (the fixed `1/m` second
    /// layer shrinks per-neuron gradients by `1/m`).
    #[serde(default = "default_true")]
    pub scale_lr_with_m: bool,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub name: String,
    pub source: DataSource,
    #[serde(default = "default_normalize")]
    pub normalize: NormalizeMode,
    pub variant: VariantChoice,
    pub beta: f64,
    pub loss: LossKind,
    /// Neuron grid, ascending.
    pub m_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub baseline: Option<BaselineSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        check_version(self.schema_version, "experiment config")?;
        if self.m_grid.is_empty() {
            return Err(CliError::config("m_grid must be nonempty".into()));
        }
        if !self.m_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(CliError::config("m_grid must be strictly ascending".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds must be nonempty".into()));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(CliError::config(format!("beta = {} must be >= 0", self.beta)));
        }
        if self.variant == VariantChoice::Quadratic {
            return Err(CliError::config(
                "experiment sampling is defined for the bilinear and vector variants; \
                 use train-sdp for the quadratic relaxation"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Real-valued trained weights exchanged between train-baseline and
/// quantize-baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsJson {
    pub m: usize,
    pub d: usize,
    /// Row-major `m x d`.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub alpha: Vec<f64>,
}
