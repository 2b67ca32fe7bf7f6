//! Predictor contract, boosted trees, per-target pipelines and per-stratum calibration.

mod calibration;
mod gbrt;
mod pipeline;

use thiserror::Error;

pub use calibration::{fit_stratum_calibration, AffineCorrection, StratumCalibrator};
pub use gbrt::{fit_gbrt, GbrtModel, GbrtParams, TreeNode};
pub use pipeline::{fit_pipeline_matrix, fit_target_pipeline, PipelineOptions, PipelineTrainer, TargetPipeline, Transform};

use crate::featsel::FeatselError;
use crate::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("feature matrix has {rows} rows but {targets} targets were given")]
    ShapeMismatch { rows: usize, targets: usize },
    #[error("too few rows to fit: got {got}, need at least {need}")]
    TooFewRows { got: usize, need: usize },
    #[error("non-finite {0} value")]
    NonFinite(&'static str),
    #[error("target {target:?} has {got} labeled samples, need at least {need}")]
    TooFewLabeled { target: String, got: usize, need: usize },
    #[error("log1p transform needs values above -1, found {0}")]
    TransformDomain(f64),
    #[error("aligned inputs differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("feature selection failed: {0}")]
    Featsel(Box<FeatselError>),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
}

impl From<FeatselError> for ModelError {
    fn from(e: FeatselError) -> Self {
        ModelError::Featsel(Box::new(e))
    }
}

/// A fitted regressor over a dense covariate vector.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &[f64]) -> f64;

    /// Non-negative per-feature importances.
    fn feature_importances(&self) -> Vec<f64>;

    fn predict_matrix(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|r| self.predict(x.row(r))).collect()
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict(&self, x: &[f64]) -> f64 {
        (**self).predict(x)
    }

    fn feature_importances(&self) -> Vec<f64> {
        (**self).feature_importances()
    }
}

/// Builds predictors from training data.
pub trait Trainer: Sync {
    type Model: Predictor;

    fn fit(&self, x: &Matrix, y: &[f64]) -> Result<Self::Model, ModelError>;
}

impl Trainer for GbrtParams {
    type Model = GbrtModel;

    fn fit(&self, x: &Matrix, y: &[f64]) -> Result<GbrtModel, ModelError> {
        fit_gbrt(x, y, self)
    }
}

/// Adapts a closure into a [`Trainer`].
pub struct FnTrainer<F>(pub F);

impl<F, M> Trainer for FnTrainer<F>
where
    F: Fn(&Matrix, &[f64]) -> Result<M, ModelError> + Sync,
    M: Predictor,
{
    type Model = M;

    fn fit(&self, x: &Matrix, y: &[f64]) -> Result<M, ModelError> {
        (self.0)(x, y)
    }
}

/// Predicts a fixed value; useful as a baseline trainer output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPredictor {
    pub value: f64,
    pub n_features: usize,
}

impl Predictor for ConstantPredictor {
    fn predict(&self, _x: &[f64]) -> f64 {
        self.value
    }

    fn feature_importances(&self) -> Vec<f64> {
        vec![0.0; self.n_features]
    }
}
