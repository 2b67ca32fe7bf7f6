use thiserror::Error;

use geoeval_core::conformal::ConformalError;
use geoeval_core::data::DataError;
use geoeval_core::metrics::MetricError;
use geoeval_core::model::ModelError;
use geoeval_core::spatial::SpatialError;
use geoeval_core::splitting::SplitError;
use geoeval_core::stats::StatsError;
use geoeval_core::synth::SynthError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("pipeline failure: {0}")]
    Pipeline(String),
}

impl CliError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config { field: field.to_string(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Data(_) => 3,
            CliError::Pipeline(_) => 4,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidConfig(m) => CliError::config("synth", m),
            other => CliError::Data(other.to_string()),
        }
    }
}

macro_rules! pipeline_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Pipeline(e.to_string())
            }
        })*
    };
}

pipeline_errors!(ModelError, SpatialError, SplitError, StatsError, MetricError, ConformalError, std::io::Error, serde_json::Error);
