//! Two-sample distribution tests used to certify that folds differ.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::spatial::{nn_distance_report, NNDistanceReport, SpatialBlock, SpatialError};
use crate::splitting::FoldPlan;

/// Per-side sample size below which p-values are flagged approximate.
pub const ASYMPTOTIC_MIN_N: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 values per sample, got {n1} and {n2}")]
    TooFewValues { n1: usize, n2: usize },
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("all values are identical across both samples; statistic undefined")]
    Degenerate,
    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<StatsError> },
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestMethod {
    #[serde(rename = "KS")]
    Ks,
    #[serde(rename = "AD")]
    Ad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: TestMethod,
    /// KS: sup-distance D. AD: standardized statistic.
    pub statistic: f64,
    /// AD only: the unstandardized A² statistic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_statistic: Option<f64>,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    /// Fewer than [`ASYMPTOTIC_MIN_N`] values on a side.
    pub approximate: bool,
    /// The p-value hit the edge of the AD critical-value table.
    pub clamped: bool,
}

fn sorted_finite(v: &[f64]) -> Result<Vec<f64>, StatsError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Survival function of the Kolmogorov distribution, P(K > λ).
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // theta-function form converges fast for small λ
        let s: f64 = (1..=20)
            .map(|j| {
                let k = (2 * j - 1) as f64;
                (-k * k * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|j| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov–Smirnov test with asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    let (n1, n2) = (a.len(), b.len());
    if n1 < 2 || n2 < 2 {
        return Err(StatsError::TooFewValues { n1, n2 });
    }
    let (a, b) = (sorted_finite(a)?, sorted_finite(b)?);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < n1 && j < n2 {
        let x = a[i].min(b[j]);
        while i < n1 && a[i] <= x {
            i += 1;
        }
        while j < n2 && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    Ok(TestResult {
        method: TestMethod::Ks,
        statistic: d,
        raw_statistic: None,
        p_value: kolmogorov_survival(ne.sqrt() * d),
        n1,
        n2,
        approximate: n1.min(n2) < ASYMPTOTIC_MIN_N,
        clamped: false,
    })
}

/// Midrank k-sample Anderson–Darling A² (Scholz–Stephens A²_akN).
pub(crate) fn ad_k_sample_statistic(samples: &[Vec<f64>]) -> f64 {
    let mut pooled: Vec<f64> = samples.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let n = pooled.len() as f64;
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    for &z in &pooled {
        match distinct.last_mut() {
            Some((v, l)) if *v == z => *l += 1.0,
            _ => distinct.push((z, 1.0)),
        }
    }
    let mut total = 0.0;
    for s in samples {
        let s = {
            let mut s = s.clone();
            s.sort_by(f64::total_cmp);
            s
        };
        let ni = s.len() as f64;
        let (mut below, mut b_cum, mut k) = (0.0, 0.0, 0usize);
        let mut inner = 0.0;
        for &(z, l) in &distinct {
            let mut f = 0.0;
            while k < s.len() && s[k] == z {
                f += 1.0;
                k += 1;
            }
            let m_a = below + f / 2.0;
            let b_a = b_cum + l / 2.0;
            let denom = b_a * (n - b_a) - n * l / 4.0;
            if denom > 0.0 {
                inner += l / n * (n * m_a - ni * b_a).powi(2) / denom;
            }
            below += f;
            b_cum += l;
        }
        total += inner / ni;
    }
    (n - 1.0) / n * total
}

/// Variance of A²_akN under the null (Scholz–Stephens).
fn ad_variance(sizes: &[usize]) -> f64 {
    let k = sizes.len() as f64;
    let n_total: usize = sizes.iter().sum();
    let n = n_total as f64;
    let h_cap: f64 = sizes.iter().map(|&s| 1.0 / s as f64).sum();
    let h: f64 = (1..n_total).map(|i| 1.0 / i as f64).sum();
    // g = Σ_{i=1}^{N-2} Σ_{j=i+1}^{N-1} 1 / ((N - i) j), with the inner sum as h - h_i
    let mut g = 0.0;
    let mut h_i = 0.0;
    for i in 1..n_total.saturating_sub(1) {
        h_i += 1.0 / i as f64;
        g += (h - h_i) / (n - i as f64);
    }
    let a = (4.0 * g - 6.0) * (k - 1.0) + (10.0 - 6.0 * g) * h_cap;
    let b = (2.0 * g - 4.0) * k * k + 8.0 * h * k + (2.0 * g - 14.0 * h - 4.0) * h_cap - 8.0 * h + 4.0 * g - 6.0;
    let c = (6.0 * h + 2.0 * g - 2.0) * k * k + (4.0 * h - 4.0 * g + 6.0) * k + (2.0 * h - 6.0) * h_cap + 4.0 * h;
    let d = (2.0 * h + 6.0) * k * k - 4.0 * h * k;
    (a * n.powi(3) + b * n * n + c * n + d) / ((n - 1.0) * (n - 2.0) * (n - 3.0))
}

const AD_SIG: [f64; 7] = [0.25, 0.10, 0.05, 0.025, 0.01, 0.005, 0.001];
const AD_B0: [f64; 7] = [0.675, 1.281, 1.645, 1.96, 2.326, 2.573, 3.085];
const AD_B1: [f64; 7] = [-0.245, 0.25, 0.678, 1.149, 1.822, 2.364, 3.615];
const AD_B2: [f64; 7] = [-0.105, -0.305, -0.362, -0.391, -0.396, -0.345, -0.154];

/// p-value for a standardized statistic with `k` samples: log-linear
/// interpolation in the critical-value table, clamped to [0.001, 0.25].
fn ad_p_value(t: f64, k: usize) -> (f64, bool) {
    let m = (k - 1) as f64;
    let crit: Vec<f64> = (0..7).map(|i| AD_B0[i] + AD_B1[i] / m.sqrt() + AD_B2[i] / m).collect();
    if t <= crit[0] {
        return (AD_SIG[0], true);
    }
    if t >= crit[6] {
        return (AD_SIG[6], true);
    }
    let i = crit.iter().rposition(|&c| c <= t).expect("t above first node");
    let w = (t - crit[i]) / (crit[i + 1] - crit[i]);
    ((AD_SIG[i].ln() + w * (AD_SIG[i + 1].ln() - AD_SIG[i].ln())).exp(), false)
}

/// Two-sample Anderson–Darling test (k-sample form with k = 2, midranks).
pub fn ad_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    let (n1, n2) = (a.len(), b.len());
    if n1 < 2 || n2 < 2 {
        return Err(StatsError::TooFewValues { n1, n2 });
    }
    let (a, b) = (sorted_finite(a)?, sorted_finite(b)?);
    let first = a[0];
    if a.iter().chain(&b).all(|&v| v == first) {
        return Err(StatsError::Degenerate);
    }
    let a2 = ad_k_sample_statistic(&[a, b]);
    let t = (a2 - 1.0) / ad_variance(&[n1, n2]).sqrt();
    let (p_value, clamped) = ad_p_value(t, 2);
    Ok(TestResult {
        method: TestMethod::Ad,
        statistic: t,
        raw_statistic: Some(a2),
        p_value,
        n1,
        n2,
        approximate: n1.min(n2) < ASYMPTOTIC_MIN_N,
        clamped,
    })
}

/// One fold against the union of the other folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostic {
    pub fold: usize,
    pub n_fold: usize,
    pub n_rest: usize,
    pub ks: TestResult,
    pub ad: TestResult,
    /// Absent for plans without spatial blocks.
    pub nn: Option<NNDistanceReport>,
}

/// KS, AD and nearest-neighbour distances for each fold versus the rest.
pub fn fold_diagnostics(
    ds: &Dataset,
    plan: &FoldPlan,
    blocks: &[SpatialBlock],
    target: &str,
) -> Result<Vec<FoldDiagnostic>, StatsError> {
    (0..plan.k)
        .map(|fold| {
            let wrap = |e: StatsError| StatsError::Fold { fold, source: Box::new(e) };
            let (mut inside, mut rest) = (Vec::new(), Vec::new());
            for (&i, &f) in &plan.sample_to_fold {
                if let Some(v) = ds.records[i].target(target) {
                    if f == fold { &mut inside } else { &mut rest }.push(v);
                }
            }
            let ks = ks_two_sample(&inside, &rest).map_err(wrap)?;
            let ad = ad_two_sample(&inside, &rest).map_err(wrap)?;
            let nn = if plan.block_to_fold.is_empty() {
                None
            } else {
                let (test, train): (Vec<SpatialBlock>, Vec<SpatialBlock>) = blocks
                    .iter()
                    .filter(|b| plan.block_to_fold.contains_key(&b.block_id))
                    .cloned()
                    .partition(|b| plan.block_to_fold[&b.block_id] == fold);
                Some(nn_distance_report(&test, &train).map_err(|e| wrap(e.into()))?)
            };
            Ok(FoldDiagnostic { fold, n_fold: inside.len(), n_rest: rest.len(), ks, ad, nn })
        })
        .collect()
}
