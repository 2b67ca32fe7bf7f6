use serde::{Deserialize, Serialize};

use super::{fit_gbrt, GbrtModel, GbrtParams, ModelError, Predictor, Trainer};
use crate::data::{Dataset, TargetConstraint};
use crate::featsel::{two_stage_select, FeatselConfig, Selection};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    Identity,
    Log1p,
}

impl Transform {
    pub fn forward(self, v: f64) -> Result<f64, ModelError> {
        match self {
            Transform::Identity => Ok(v),
            Transform::Log1p if v > -1.0 => Ok(v.ln_1p()),
            Transform::Log1p => Err(ModelError::TransformDomain(v)),
        }
    }

    pub fn inverse(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Log1p => v.exp_m1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub featsel: FeatselConfig,
    /// When false all covariates go straight to the model.
    pub select_features: bool,
    pub gbrt: GbrtParams,
    pub transform: Transform,
    pub min_labeled: usize,
    /// Overrides the floor-at-zero rule derived from the target name.
    pub nonnegative: Option<bool>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            featsel: FeatselConfig::default(),
            select_features: true,
            gbrt: GbrtParams::default(),
            transform: Transform::Identity,
            min_labeled: 100,
            nonnegative: None,
        }
    }
}

/// Per-target model carrying its own feature subset and output transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPipeline {
    pub target: String,
    pub transform: Transform,
    pub nonnegative: bool,
    /// Positions of the model inputs within the full covariate vector.
    pub feature_indices: Vec<usize>,
    pub feature_names: Vec<String>,
    pub model: GbrtModel,
    #[serde(skip)]
    pub selection: Option<Selection>,
}

impl TargetPipeline {
    fn finish(&self, raw: f64) -> f64 {
        let v = self.transform.inverse(raw);
        if self.nonnegative {
            v.max(0.0)
        } else {
            v
        }
    }

    /// Prediction from a covariate vector given in another column order.
    pub fn predict_named(&self, names: &[String], values: &[f64]) -> Result<f64, ModelError> {
        let x: Vec<f64> = self
            .feature_names
            .iter()
            .map(|f| {
                names.iter().position(|n| n == f).map(|i| values[i]).ok_or_else(|| ModelError::UnknownFeature(f.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(self.finish(self.model.predict(&x)))
    }

    /// Model-space prediction before inverse transform and flooring.
    pub fn predict_raw(&self, covariates: &[f64]) -> f64 {
        let x: Vec<f64> = self.feature_indices.iter().map(|&i| covariates[i]).collect();
        self.model.predict(&x)
    }
}

impl Predictor for TargetPipeline {
    fn predict(&self, covariates: &[f64]) -> f64 {
        self.finish(self.predict_raw(covariates))
    }

    fn feature_importances(&self) -> Vec<f64> {
        self.model.feature_importances()
    }
}

/// Fits selection and model on a covariate matrix laid out like `names`.
///
/// `fixed_features` skips selection and uses the given columns.
pub fn fit_pipeline_matrix(
    x: &Matrix,
    y: &[f64],
    names: &[String],
    target: &str,
    opts: &PipelineOptions,
    fixed_features: Option<&[usize]>,
) -> Result<TargetPipeline, ModelError> {
    if x.rows() != y.len() {
        return Err(ModelError::ShapeMismatch { rows: x.rows(), targets: y.len() });
    }
    let ty: Vec<f64> = y.iter().map(|&v| opts.transform.forward(v)).collect::<Result<_, _>>()?;
    let (feature_indices, selection) = match fixed_features {
        Some(f) => (f.to_vec(), None),
        None if opts.select_features && x.cols() > 0 => {
            let sel = two_stage_select(x, &ty, names, &opts.featsel)?;
            (sel.selected_columns.clone(), Some(sel))
        }
        None => ((0..x.cols()).collect(), None),
    };
    let model = fit_gbrt(&x.select_columns(&feature_indices), &ty, &opts.gbrt)?;
    let nonnegative = opts
        .nonnegative
        .unwrap_or(TargetConstraint::for_target(target) == TargetConstraint::NonNegative);
    Ok(TargetPipeline {
        target: target.to_string(),
        transform: opts.transform,
        nonnegative,
        feature_names: feature_indices.iter().map(|&i| names[i].clone()).collect(),
        feature_indices,
        model,
        selection,
    })
}

/// Fits the full per-target pipeline on the labeled records among `rows`.
pub fn fit_target_pipeline(
    ds: &Dataset,
    rows: &[usize],
    target: &str,
    opts: &PipelineOptions,
) -> Result<TargetPipeline, ModelError> {
    let labeled: Vec<usize> = rows.iter().copied().filter(|&i| ds.records[i].target(target).is_some()).collect();
    if labeled.len() < opts.min_labeled {
        return Err(ModelError::TooFewLabeled {
            target: target.to_string(),
            got: labeled.len(),
            need: opts.min_labeled,
        });
    }
    let x = ds.matrix(&labeled);
    let y = ds.target_values(target, &labeled);
    fit_pipeline_matrix(&x, &y, &ds.feature_names, target, opts, None)
}

/// [`Trainer`] refitting a pipeline, optionally on a frozen feature subset.
pub struct PipelineTrainer<'a> {
    pub target: String,
    pub names: &'a [String],
    pub opts: PipelineOptions,
    pub fixed_features: Option<Vec<usize>>,
}

impl Trainer for PipelineTrainer<'_> {
    type Model = TargetPipeline;

    fn fit(&self, x: &Matrix, y: &[f64]) -> Result<TargetPipeline, ModelError> {
        fit_pipeline_matrix(x, y, self.names, &self.target, &self.opts, self.fixed_features.as_deref())
    }
}
