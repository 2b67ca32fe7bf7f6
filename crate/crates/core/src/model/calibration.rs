use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Affine correction `a + b * prediction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineCorrection {
    pub a: f64,
    pub b: f64,
    pub n: usize,
}

impl AffineCorrection {
    pub const IDENTITY: AffineCorrection = AffineCorrection { a: 0.0, b: 1.0, n: 0 };

    pub fn apply(&self, prediction: f64) -> f64 {
        self.a + self.b * prediction
    }

    /// OLS of observations on predictions; `None` when predictions have no spread.
    fn ols(pred: &[f64], obs: &[f64]) -> Option<AffineCorrection> {
        let n = pred.len() as f64;
        let mp = pred.iter().sum::<f64>() / n;
        let mo = obs.iter().sum::<f64>() / n;
        let spp: f64 = pred.iter().map(|p| (p - mp).powi(2)).sum();
        let spo: f64 = pred.iter().zip(obs).map(|(p, o)| (p - mp) * (o - mo)).sum();
        let scale = pred.iter().map(|p| p.abs()).fold(1.0, f64::max);
        if !(spp > 1e-24 * scale * scale * n) {
            return None;
        }
        let b = spo / spp;
        Some(AffineCorrection { a: mo - b * mp, b, n: pred.len() })
    }
}

/// Per-stratum affine recalibration with a global fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumCalibrator {
    pub global: AffineCorrection,
    pub per_stratum: BTreeMap<String, AffineCorrection>,
    pub min_count: usize,
    /// Strata that fell back to the global pair or to identity, with the reason.
    pub diagnostics: Vec<String>,
}

impl StratumCalibrator {
    pub fn correction(&self, stratum: &str) -> &AffineCorrection {
        self.per_stratum.get(stratum).unwrap_or(&self.global)
    }

    pub fn apply(&self, prediction: f64, stratum: &str) -> f64 {
        self.correction(stratum).apply(prediction)
    }
}

/// Fits `observation ≈ a + b·prediction` per stratum by least squares.
///
/// Strata with fewer than `min_count` samples use the global fit.
pub fn fit_stratum_calibration<S: AsRef<str>>(
    predictions: &[f64],
    observations: &[f64],
    strata: &[S],
    min_count: usize,
) -> Result<StratumCalibrator, ModelError> {
    if predictions.len() != observations.len() {
        return Err(ModelError::LengthMismatch(predictions.len(), observations.len()));
    }
    if predictions.len() != strata.len() {
        return Err(ModelError::LengthMismatch(predictions.len(), strata.len()));
    }
    if predictions.is_empty() {
        return Err(ModelError::TooFewRows { got: 0, need: 1 });
    }
    let mut diagnostics = Vec::new();
    let global = AffineCorrection::ols(predictions, observations).unwrap_or_else(|| {
        diagnostics.push("global: predictions have zero variance, identity correction".to_string());
        AffineCorrection { n: predictions.len(), ..AffineCorrection::IDENTITY }
    });

    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((p, o), s) in predictions.iter().zip(observations).zip(strata) {
        let g = groups.entry(s.as_ref()).or_default();
        g.0.push(*p);
        g.1.push(*o);
    }
    let mut per_stratum = BTreeMap::new();
    for (s, (p, o)) in groups {
        if p.len() < min_count {
            diagnostics.push(format!("{s}: {} samples below floor {min_count}, global correction", p.len()));
            continue;
        }
        let fit = AffineCorrection::ols(&p, &o).unwrap_or_else(|| {
            diagnostics.push(format!("{s}: predictions have zero variance, identity correction"));
            AffineCorrection { n: p.len(), ..AffineCorrection::IDENTITY }
        });
        per_stratum.insert(s.to_string(), fit);
    }
    for d in &diagnostics {
        log::info!("calibration: {d}");
    }
    Ok(StratumCalibrator { global, per_stratum, min_count, diagnostics })
}
