//! Versioned report and model files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use geoeval_core::conformal::{ConformalModel, IntervalReport};
use geoeval_core::data::{DepthClass, RowDiagnostic};
use geoeval_core::featsel::{CategoryShare, StabilityReport};
use geoeval_core::metrics::MetricsRow;
use geoeval_core::model::{StratumCalibrator, TargetPipeline, Transform};
use geoeval_core::spatial::NNDistanceReport;
use geoeval_core::stats::FoldDiagnostic;

use crate::config::RunConfig;
use crate::error::CliError;

/// Bumped in the major component on breaking layout changes.
pub const SCHEMA_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: u64 = 1;

/// Deterministic id: the first 16 hex digits of the SHA-256 of the echoed config.
pub fn run_id(cfg: &RunConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub n_records: usize,
    pub n_features: usize,
    pub stratum_counts: BTreeMap<String, usize>,
    pub rejected_rows: Vec<RowDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub block_km: f64,
    pub n_blocks: usize,
    pub development_blocks: Vec<usize>,
    pub test_blocks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlanSummary {
    pub k: usize,
    pub mode: String,
    pub fold_sizes: Vec<usize>,
    pub stratum_balance: Vec<BTreeMap<String, usize>>,
    pub max_share_deviation: f64,
    pub oversized_blocks: Vec<usize>,
    pub block_to_fold: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionPoint {
    pub id: String,
    pub stratum: String,
    pub depth_class: DepthClass,
    pub observed: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySection {
    pub report: StabilityReport,
    pub category_shares: Vec<CategoryShare>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSection {
    /// Which predictions the intervals were scored on.
    pub scope: String,
    pub overall: Option<IntervalReport>,
    pub by_stratum: Vec<IntervalReport>,
    /// Intervals whose lower bound was raised to zero.
    pub floored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub target: String,
    pub transform: Transform,
    pub n_development: usize,
    pub n_test: usize,
    pub fold_diagnostics: Vec<FoldDiagnostic>,
    pub stability: Option<StabilitySection>,
    pub selected_features: Vec<String>,
    pub feature_importances: Vec<(String, f64)>,
    pub calibration: StratumCalibrator,
    /// OOF (pooled and fold-mean), per-fold and test rows.
    pub metrics: Vec<MetricsRow>,
    pub conformal: ConformalModel,
    pub intervals: IntervalSection,
    pub oof_predictions: Vec<PredictionPoint>,
    pub test_predictions: Vec<PredictionPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub run_id: String,
    pub config: RunConfig,
    pub dataset: DatasetInfo,
    pub blocks: BlockInfo,
    pub fold_plan: FoldPlanSummary,
    /// Test blocks against development blocks.
    pub leakage: Option<NNDistanceReport>,
    pub targets: Vec<TargetReport>,
}

/// Wall-clock seconds per stage, kept out of the report so reports stay reproducible.
pub type Timing = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub pipeline: TargetPipeline,
    pub calibrator: StratumCalibrator,
    pub conformal: ConformalModel,
    pub floor_intervals: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: String,
    pub run_id: String,
    pub feature_names: Vec<String>,
    pub targets: Vec<TargetModel>,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Pipeline(format!("{}: {e}", path.display())))
}

/// Parses a versioned JSON file, refusing unknown major versions.
pub fn read_versioned<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Data(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CliError::Data("missing schema_version".into()))?;
    let major: u64 = version
        .split('.')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| CliError::Data(format!("malformed schema_version {version:?}")))?;
    if major != SUPPORTED_MAJOR {
        return Err(CliError::Data(format!("unsupported schema major version {major} (expected {SUPPORTED_MAJOR})")));
    }
    serde_json::from_value(value).map_err(|e| CliError::Data(e.to_string()))
}

pub fn load_report(path: &Path) -> Result<RunReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_versioned(&text)
}

pub fn load_model(path: &Path) -> Result<ModelBundle, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_versioned(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Deserialize)]
    struct Probe {
        #[allow(dead_code)]
        schema_version: String,
    }

    #[test]
    fn rejects_unknown_major() {
        assert!(read_versioned::<Probe>(r#"{"schema_version":"1.4"}"#).is_ok());
        let err = read_versioned::<Probe>(r#"{"schema_version":"2.0"}"#).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(read_versioned::<Probe>(r#"{}"#).is_err());
    }

    #[test]
    fn run_id_tracks_config() {
        let a = RunConfig { seed: Some(1), ..RunConfig::default() };
        let b = RunConfig { seed: Some(2), ..RunConfig::default() };
        assert_eq!(run_id(&a), run_id(&a.clone()));
        assert_ne!(run_id(&a), run_id(&b));
        assert_eq!(run_id(&a).len(), 16);
    }
}
