//! Accuracy, agreement, distributional-fidelity and bias metrics, with
//! disaggregation by stratum.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Transform;
use crate::quantile::{iqr, mean};

/// Strata with fewer samples than this are flagged unstable.
pub const UNSTABLE_FLOOR: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("observed and predicted lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("non-finite value")]
    NonFinite,
    #[error("log1p undefined for {0}")]
    Domain(f64),
    #[error("both vectors have zero variance; CCC undefined")]
    ZeroVariance,
    #[error("observed values have zero range")]
    ZeroRange,
}

fn check(y: &[f64], yhat: &[f64], min: usize) -> Result<(), MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    if y.len() < min {
        return Err(MetricError::TooFew { need: min, got: y.len() });
    }
    if y.iter().chain(yhat).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

fn transformed(v: &[f64], t: Transform) -> Result<Vec<f64>, MetricError> {
    v.iter().map(|&x| t.forward(x).map_err(|_| MetricError::Domain(x))).collect()
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat, 1)?;
    Ok((y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat, 1)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Lin's concordance correlation coefficient with population moments.
///
/// When exactly one vector is constant the value is 0.
pub fn ccc(y: &[f64], yhat: &[f64], transform: Transform) -> Result<f64, MetricError> {
    check(y, yhat, 2)?;
    let (y, yhat) = (transformed(y, transform)?, transformed(yhat, transform)?);
    let n = y.len() as f64;
    let (my, mp) = (mean(&y), mean(&yhat));
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let vp = yhat.iter().map(|v| (v - mp).powi(2)).sum::<f64>() / n;
    if vy == 0.0 && vp == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    if vy == 0.0 || vp == 0.0 {
        log::warn!("ccc: one vector has zero variance, reporting 0");
        return Ok(0.0);
    }
    let cov = y.iter().zip(&yhat).map(|(a, b)| (a - my) * (b - mp)).sum::<f64>() / n;
    Ok(2.0 * cov / (vy + vp + (my - mp).powi(2)))
}

/// Willmott's index of agreement with exponent `p`.
pub fn willmott_d(y: &[f64], yhat: &[f64], p: f64) -> Result<f64, MetricError> {
    check(y, yhat, 2)?;
    let my = mean(y);
    let num: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs().powf(p)).sum();
    let den: f64 = y.iter().zip(yhat).map(|(a, b)| ((b - my).abs() + (a - my).abs()).powf(p)).sum();
    if den == 0.0 {
        // only reachable when y is constant and yhat == y
        log::warn!("willmott_d: zero denominator, perfect degenerate agreement");
        return Ok(1.0);
    }
    Ok(1.0 - num / den)
}

/// IQR of observations over RMSE, both on the transformed scale.
///
/// Zero RMSE yields `f64::INFINITY`.
pub fn rpiq(y: &[f64], yhat: &[f64], transform: Transform) -> Result<f64, MetricError> {
    check(y, yhat, 4)?;
    let (y, yhat) = (transformed(y, transform)?, transformed(yhat, transform)?);
    let e = rmse(&y, &yhat)?;
    if e == 0.0 {
        log::warn!("rpiq: zero RMSE, reporting infinity");
        return Ok(f64::INFINITY);
    }
    Ok(iqr(&y) / e)
}

/// mean(ŷ) − mean(y); negative means underestimation.
pub fn bias(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat, 1)?;
    Ok(mean(yhat) - mean(y))
}

/// RMSE divided by the observed range.
pub fn nrmse_minmax(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    let e = rmse(y, yhat)?;
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi <= lo {
        return Err(MetricError::ZeroRange);
    }
    Ok(e / (hi - lo))
}

/// Where a metrics row comes from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowLabel {
    pub target: String,
    /// e.g. `oof`, `test`, `fold-2`.
    pub scope: String,
    /// e.g. `pooled`, `aez`, `superclass`, `depth`.
    pub dimension: String,
    pub group: String,
}

/// Full metric suite for one slice of predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    #[serde(flatten)]
    pub label: RowLabel,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub ccc: Option<f64>,
    pub ccc_log1p: Option<f64>,
    pub willmott_d15: Option<f64>,
    pub rpiq: Option<f64>,
    pub bias: f64,
    pub nrmse_minmax: Option<f64>,
    pub unstable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub rpiq_transform: Transform,
    pub unstable_floor: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions { rpiq_transform: Transform::Log1p, unstable_floor: UNSTABLE_FLOOR }
    }
}

/// Every metric for one slice; undefined metrics become `None`.
pub fn metrics_row(y: &[f64], yhat: &[f64], label: RowLabel, opts: &MetricOptions) -> Result<MetricsRow, MetricError> {
    check(y, yhat, 1)?;
    Ok(MetricsRow {
        label,
        n: y.len(),
        rmse: rmse(y, yhat)?,
        mae: mae(y, yhat)?,
        ccc: ccc(y, yhat, Transform::Identity).ok(),
        ccc_log1p: ccc(y, yhat, Transform::Log1p).ok(),
        willmott_d15: willmott_d(y, yhat, 1.5).ok(),
        rpiq: rpiq(y, yhat, opts.rpiq_transform).ok(),
        bias: bias(y, yhat)?,
        nrmse_minmax: nrmse_minmax(y, yhat).ok(),
        unstable: y.len() < opts.unstable_floor,
    })
}

/// A pooled row followed by one row per distinct group label (sorted).
pub fn evaluate_stratified<S: AsRef<str>>(
    y: &[f64],
    yhat: &[f64],
    groups: &[S],
    target: &str,
    scope: &str,
    dimension: &str,
    opts: &MetricOptions,
) -> Result<Vec<MetricsRow>, MetricError> {
    check(y, yhat, 1)?;
    if groups.len() != y.len() {
        return Err(MetricError::LengthMismatch(y.len(), groups.len()));
    }
    let label = |dimension: &str, group: &str| RowLabel {
        target: target.to_string(),
        scope: scope.to_string(),
        dimension: dimension.to_string(),
        group: group.to_string(),
    };
    let mut rows = vec![metrics_row(y, yhat, label("pooled", "all"), opts)?];
    let mut by: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((a, b), g) in y.iter().zip(yhat).zip(groups) {
        let e = by.entry(g.as_ref()).or_default();
        e.0.push(*a);
        e.1.push(*b);
    }
    for (g, (gy, gp)) in by {
        rows.push(metrics_row(&gy, &gp, label(dimension, g), opts)?);
    }
    Ok(rows)
}

fn weighted<'a>(rows: impl Iterator<Item = (&'a MetricsRow, Option<f64>)>) -> Option<f64> {
    let (mut s, mut w) = (0.0, 0.0);
    for (r, v) in rows {
        if let Some(v) = v {
            s += r.n as f64 * v;
            w += r.n as f64;
        }
    }
    (w > 0.0).then(|| s / w)
}

/// Sample-count-weighted means of per-stratum rows, grouped by super-class.
/// Unstable rows and rows of other dimensions are ignored.
pub fn aggregate_superclass(
    rows: &[MetricsRow],
    dimension: &str,
    superclass_of: &BTreeMap<String, String>,
) -> Vec<MetricsRow> {
    let mut groups: BTreeMap<&str, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.label.dimension == dimension && !r.unstable) {
        if let Some(sc) = superclass_of.get(&r.label.group) {
            groups.entry(sc.as_str()).or_default().push(r);
        }
    }
    groups
        .into_iter()
        .map(|(sc, members)| {
            let first = &members[0].label;
            let agg = |f: fn(&MetricsRow) -> Option<f64>| weighted(members.iter().map(|r| (*r, f(r))));
            MetricsRow {
                label: RowLabel {
                    target: first.target.clone(),
                    scope: first.scope.clone(),
                    dimension: "superclass".into(),
                    group: sc.to_string(),
                },
                n: members.iter().map(|r| r.n).sum(),
                rmse: agg(|r| Some(r.rmse)).expect("non-empty"),
                mae: agg(|r| Some(r.mae)).expect("non-empty"),
                ccc: agg(|r| r.ccc),
                ccc_log1p: agg(|r| r.ccc_log1p),
                willmott_d15: agg(|r| r.willmott_d15),
                rpiq: agg(|r| r.rpiq),
                bias: agg(|r| Some(r.bias)).expect("non-empty"),
                nrmse_minmax: agg(|r| r.nrmse_minmax),
                unstable: false,
            }
        })
        .collect()
}

/// Unweighted metric-level mean of per-fold rows.
pub fn fold_mean(rows: &[MetricsRow], label: RowLabel) -> Option<MetricsRow> {
    if rows.is_empty() {
        return None;
    }
    let avg = |f: fn(&MetricsRow) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| mean(&v))
    };
    Some(MetricsRow {
        label,
        n: rows.iter().map(|r| r.n).sum(),
        rmse: avg(|r| Some(r.rmse))?,
        mae: avg(|r| Some(r.mae))?,
        ccc: avg(|r| r.ccc),
        ccc_log1p: avg(|r| r.ccc_log1p),
        willmott_d15: avg(|r| r.willmott_d15),
        rpiq: avg(|r| r.rpiq),
        bias: avg(|r| Some(r.bias))?,
        nrmse_minmax: avg(|r| r.nrmse_minmax),
        unstable: rows.iter().any(|r| r.unstable),
    })
}

/// Comma-separated table in the order RMSE, MAE, CCC(log1p), d1.5, RPIQ, Bias, NRMSE, n.
pub fn rows_to_csv(rows: &[MetricsRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into());
    let mut out = String::from("target,scope,dimension,group,rmse,mae,ccc_log1p,d1.5,rpiq,bias,nrmse_minmax,n,ccc,unstable\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{},{},{},{:.6},{},{},{},{}",
            r.label.target,
            r.label.scope,
            r.label.dimension,
            r.label.group,
            r.rmse,
            r.mae,
            opt(r.ccc_log1p),
            opt(r.willmott_d15),
            opt(r.rpiq),
            r.bias,
            opt(r.nrmse_minmax),
            r.n,
            opt(r.ccc),
            r.unstable
        );
    }
    out
}
