//! Two-stage feature reduction: correlation filtering, then randomized
//! stability selection driven by boosted-tree importances.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{fit_gbrt, GbrtParams, ModelError, Predictor};
use crate::{derive_seed, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum FeatselError {
    #[error("correlation threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid stability parameter: {0}")]
    InvalidParams(String),
    #[error("feature names ({names}) do not match matrix width ({cols})")]
    NameMismatch { names: usize, cols: usize },
    #[error("importance oracle failed on iteration {iteration}: {source}")]
    Oracle { iteration: usize, source: ModelError },
    #[error("feature {0:?} has no category")]
    Uncategorized(String),
    #[error("total stability is zero")]
    NoStability,
}

/// Outcome of the correlation filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFilter {
    /// Retained column indices in original order.
    pub kept: Vec<usize>,
    pub zero_variance: Vec<usize>,
    /// (dropped column, kept column it duplicates, |r|).
    pub correlated: Vec<(usize, usize, f64)>,
}

/// Greedy column-order scan dropping any feature whose absolute Pearson
/// correlation with an already-kept feature exceeds `threshold`.
/// Zero-variance columns are dropped.
pub fn correlation_filter(x: &Matrix, threshold: f64) -> Result<CorrelationFilter, FeatselError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(FeatselError::InvalidThreshold(threshold));
    }
    let n = x.rows();
    if n < 2 {
        return Err(FeatselError::TooFewRows(n));
    }
    let mut kept: Vec<usize> = Vec::new();
    let mut standardized: Vec<Vec<f64>> = Vec::new();
    let mut zero_variance = Vec::new();
    let mut correlated = Vec::new();
    'cols: for j in 0..x.cols() {
        let col = x.column(j);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(FeatselError::NonFinite("feature matrix"));
        }
        let m = col.iter().sum::<f64>() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - m).powi(2)).sum();
        let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        if ss <= 1e-24 * scale * scale * n as f64 {
            log::info!("correlation filter: column {j} has zero variance, dropped");
            zero_variance.push(j);
            continue;
        }
        let sd = ss.sqrt();
        let z: Vec<f64> = col.iter().map(|v| (v - m) / sd).collect();
        for (k, zk) in kept.iter().zip(&standardized) {
            let r: f64 = z.iter().zip(zk).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0);
            if r.abs() > threshold {
                correlated.push((j, *k, r.abs()));
                continue 'cols;
            }
        }
        kept.push(j);
        standardized.push(z);
    }
    Ok(CorrelationFilter { kept, zero_variance, correlated })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceKind {
    /// Total split gain from the boosted trees.
    #[default]
    Gain,
    /// Increase in training MSE when a column is shuffled.
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityParams {
    pub iterations: usize,
    /// Fraction of rows drawn without replacement per iteration.
    pub subsample: f64,
    /// Features marked per iteration.
    pub top_k: usize,
    /// Selection probability needed to survive.
    pub threshold: f64,
    /// Survivors are padded from the top of the ranking up to this count.
    pub min_selected: usize,
    pub importance: ImportanceKind,
    pub oracle: GbrtParams,
    pub seed: u64,
}

impl Default for StabilityParams {
    fn default() -> Self {
        StabilityParams {
            iterations: 64,
            subsample: 0.5,
            top_k: 64,
            threshold: 0.6,
            min_selected: 1,
            importance: ImportanceKind::Gain,
            oracle: GbrtParams { n_trees: 50, max_depth: 3, ..GbrtParams::default() },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub initial: usize,
    pub after_stage1: usize,
    pub after_stage2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    /// Column index in the matrix handed to the selector.
    pub column: usize,
    pub pi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub pi: BTreeMap<String, f64>,
    /// Sorted by π descending, ties by column index.
    pub ranked: Vec<RankedFeature>,
    /// Names surviving stage 2, in ranking order.
    pub selected: Vec<String>,
    pub stage_counts: StageCounts,
    pub iterations: usize,
    pub threshold: f64,
}

impl StabilityReport {
    pub fn pi_of(&self, name: &str) -> Option<f64> {
        self.pi.get(name).copied()
    }
}

fn marked_features(importances: &[f64], top_k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importances.len()).filter(|&j| importances[j] > 0.0).collect();
    order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    order.truncate(top_k);
    order
}

fn permutation_importance(model: &impl Predictor, x: &Matrix, y: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = mse(&model.predict_matrix(x), y);
    (0..x.cols())
        .map(|j| {
            let mut shuffled = x.clone();
            let mut col = x.column(j);
            col.shuffle(rng);
            for (r, v) in col.into_iter().enumerate() {
                shuffled.set(r, j, v);
            }
            (mse(&model.predict_matrix(&shuffled), y) - base).max(0.0)
        })
        .collect()
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64
}

/// Randomized stability selection over the columns of `x`.
pub fn stability_select(
    x: &Matrix,
    y: &[f64],
    names: &[String],
    params: &StabilityParams,
) -> Result<StabilityReport, FeatselError> {
    if names.len() != x.cols() {
        return Err(FeatselError::NameMismatch { names: names.len(), cols: x.cols() });
    }
    if params.iterations < 2 {
        return Err(FeatselError::InvalidParams(format!("iterations must be >= 2, got {}", params.iterations)));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(FeatselError::InvalidParams(format!("subsample must lie in (0, 1], got {}", params.subsample)));
    }
    if params.top_k == 0 {
        return Err(FeatselError::InvalidParams("top_k must be positive".into()));
    }
    if !(0.0..=1.0).contains(&params.threshold) {
        return Err(FeatselError::InvalidParams(format!("threshold must lie in [0, 1], got {}", params.threshold)));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(FeatselError::NonFinite("target"));
    }
    let n = y.len();
    let m = ((params.subsample * n as f64).round() as usize).clamp(1, n);

    let marks: Vec<Vec<usize>> = (0..params.iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, it as u64));
            let mut rows: Vec<usize> = sample(&mut rng, n, m).into_vec();
            rows.sort_unstable();
            let xs = x.select_rows(&rows);
            let ys: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
            let oracle = GbrtParams { seed: derive_seed(params.seed ^ 0x5eed, it as u64), ..params.oracle.clone() };
            let model = fit_gbrt(&xs, &ys, &oracle)
                .map_err(|source| FeatselError::Oracle { iteration: it, source })?;
            let imp = match params.importance {
                ImportanceKind::Gain => model.feature_importances(),
                ImportanceKind::Permutation => permutation_importance(&model, &xs, &ys, &mut rng),
            };
            Ok(marked_features(&imp, params.top_k))
        })
        .collect::<Result<_, FeatselError>>()?;

    let mut counts = vec![0usize; x.cols()];
    for it in &marks {
        for &j in it {
            counts[j] += 1;
        }
    }
    let pis: Vec<f64> = counts.iter().map(|&c| c as f64 / params.iterations as f64).collect();
    let mut order: Vec<usize> = (0..x.cols()).collect();
    order.sort_by(|&a, &b| pis[b].total_cmp(&pis[a]).then(a.cmp(&b)));
    let ranked: Vec<RankedFeature> =
        order.iter().map(|&j| RankedFeature { name: names[j].clone(), column: j, pi: pis[j] }).collect();
    let mut n_selected = ranked.iter().take_while(|r| r.pi >= params.threshold).count();
    if n_selected < params.min_selected {
        log::warn!(
            "stability selection: {n_selected} features reach pi >= {}, padding to {}",
            params.threshold,
            params.min_selected
        );
        n_selected = params.min_selected.min(ranked.len());
    }
    let selected = ranked[..n_selected].iter().map(|r| r.name.clone()).collect();
    Ok(StabilityReport {
        pi: names.iter().cloned().zip(pis).collect(),
        ranked,
        selected,
        stage_counts: StageCounts { initial: x.cols(), after_stage1: x.cols(), after_stage2: n_selected },
        iterations: params.iterations,
        threshold: params.threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatselConfig {
    pub correlation_threshold: f64,
    pub stability: StabilityParams,
}

impl Default for FeatselConfig {
    fn default() -> Self {
        FeatselConfig { correlation_threshold: 0.95, stability: StabilityParams::default() }
    }
}

/// Both stages over a full feature matrix. Returned column indices refer to `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub filter: CorrelationFilter,
    pub report: StabilityReport,
    pub selected_columns: Vec<usize>,
}

pub fn two_stage_select(
    x: &Matrix,
    y: &[f64],
    names: &[String],
    cfg: &FeatselConfig,
) -> Result<Selection, FeatselError> {
    if names.len() != x.cols() {
        return Err(FeatselError::NameMismatch { names: names.len(), cols: x.cols() });
    }
    let filter = correlation_filter(x, cfg.correlation_threshold)?;
    let stage1_names: Vec<String> = filter.kept.iter().map(|&j| names[j].clone()).collect();
    let mut report = stability_select(&x.select_columns(&filter.kept), y, &stage1_names, &cfg.stability)?;
    report.stage_counts.initial = x.cols();
    let selected_columns = report
        .selected
        .iter()
        .map(|name| {
            let r = report.ranked.iter().find(|r| &r.name == name).expect("selected feature is ranked");
            filter.kept[r.column]
        })
        .collect();
    Ok(Selection { filter, report, selected_columns })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub category: String,
    pub total_pi: f64,
    pub share: f64,
}

/// Per-category summed π over the selected features, with shares summing to one.
pub fn category_stability(
    report: &StabilityReport,
    categories: &BTreeMap<String, String>,
) -> Result<Vec<CategoryShare>, FeatselError> {
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for name in &report.selected {
        let cat = categories.get(name).ok_or_else(|| FeatselError::Uncategorized(name.clone()))?;
        *totals.entry(cat.as_str()).or_default() += report.pi[name];
    }
    let sum: f64 = totals.values().sum();
    if !(sum > 0.0) {
        return Err(FeatselError::NoStability);
    }
    Ok(totals
        .into_iter()
        .map(|(c, t)| CategoryShare { category: c.to_string(), total_pi: t, share: t / sum })
        .collect())
}

/// Category of a feature name: the prefix before the first `_`, or the whole name.
pub fn default_category(name: &str) -> String {
    name.split('_').next().unwrap_or(name).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_row_major(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect())
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|j| format!("f{j}")).collect()
    }

    #[test]
    fn duplicated_column_kept_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = gaussian_matrix(50, 3, &mut rng);
        let x = base.select_columns(&[0, 1, 1, 2]);
        let f = correlation_filter(&x, 0.95).unwrap();
        assert_eq!(f.kept, vec![0, 1, 3]);
        assert_eq!(f.correlated.len(), 1);
        assert_eq!((f.correlated[0].0, f.correlated[0].1), (2, 1));
    }

    #[test]
    fn orthogonal_columns_all_kept() {
        let rows: Vec<Vec<f64>> = vec![
            vec![1.0, 1.0, 1.0],
            vec![1.0, -1.0, -1.0],
            vec![-1.0, 1.0, -1.0],
            vec![-1.0, -1.0, 1.0],
        ];
        let f = correlation_filter(&Matrix::from_rows(&rows), 0.95).unwrap();
        assert_eq!(f.kept, vec![0, 1, 2]);
    }

    #[test]
    fn planted_groups_reduce_to_one_member_each() {
        // columns: g0 g0 g0 s g1 g1 s g2 g2 s  (groups at r ≈ 0.99)
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 400;
        let latent = gaussian_matrix(n, 6, &mut rng);
        let layout = [0, 0, 0, 3, 1, 1, 4, 2, 2, 5];
        let mut data = Vec::new();
        for r in 0..n {
            for &src in &layout {
                let noise: f64 = StandardNormal.sample(&mut rng);
                let jitter = if src < 3 { 0.1 * noise } else { 0.0 };
                data.push(latent.get(r, src) + jitter);
            }
        }
        let x = Matrix::from_row_major(n, 10, data);
        let f = correlation_filter(&x, 0.95).unwrap();
        assert_eq!(f.kept, vec![0, 3, 4, 6, 7, 9]);
    }

    #[test]
    fn zero_variance_column_dropped() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 5.0]).collect();
        let f = correlation_filter(&Matrix::from_rows(&rows), 0.9).unwrap();
        assert_eq!(f.kept, vec![0]);
        assert_eq!(f.zero_variance, vec![1]);
    }

    #[test]
    fn filter_rejects_bad_threshold() {
        let x = Matrix::zeros(3, 2);
        assert_eq!(correlation_filter(&x, 0.0), Err(FeatselError::InvalidThreshold(0.0)));
        assert_eq!(correlation_filter(&Matrix::zeros(1, 2), 0.5), Err(FeatselError::TooFewRows(1)));
    }

    #[test]
    fn planted_signal_has_unit_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian_matrix(200, 20, &mut rng);
        let y = x.column(7);
        let params = StabilityParams { top_k: 3, seed: 5, ..Default::default() };
        let r = stability_select(&x, &y, &names(20), &params).unwrap();
        assert_eq!(r.pi_of("f7"), Some(1.0));
        assert_eq!(r.ranked[0].name, "f7");
        assert!(r.selected.contains(&"f7".to_string()));
        assert!(r.pi.values().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn noise_target_stays_unstable() {
        // 100 seeds, 2 of 50 noise features marked per iteration.
        let mut hits = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x = gaussian_matrix(100, 50, &mut rng);
            let y: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
            let params = StabilityParams {
                top_k: 2,
                seed,
                oracle: GbrtParams { n_trees: 20, max_depth: 2, ..GbrtParams::default() },
                ..Default::default()
            };
            let r = stability_select(&x, &y, &names(50), &params).unwrap();
            if r.ranked[0].pi < 0.5 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/100 seeds below 0.5");
    }

    #[test]
    fn full_subsample_gives_binary_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian_matrix(60, 10, &mut rng);
        let y: Vec<f64> = (0..60).map(|r| x.get(r, 0) + 0.5 * x.get(r, 4)).collect();
        let params = StabilityParams { iterations: 2, subsample: 1.0, top_k: 3, ..Default::default() };
        let r = stability_select(&x, &y, &names(10), &params).unwrap();
        assert!(r.pi.values().all(|&p| p == 0.0 || p == 0.5 || p == 1.0));
        assert!(r.pi.values().all(|&p| p != 0.5));
    }

    #[test]
    fn deterministic_and_permutation_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian_matrix(120, 8, &mut rng);
        let y: Vec<f64> = (0..120).map(|r| x.get(r, 2) * 2.0 + x.get(r, 5)).collect();
        let params = StabilityParams { iterations: 16, top_k: 2, ..Default::default() };
        let a = stability_select(&x, &y, &names(8), &params).unwrap();
        let b = stability_select(&x, &y, &names(8), &params).unwrap();
        assert_eq!(a, b);
        // reverse the column order; π per name is unchanged for clear signals
        let rev: Vec<usize> = (0..8).rev().collect();
        let rev_names: Vec<String> = rev.iter().map(|&j| format!("f{j}")).collect();
        let c = stability_select(&x.select_columns(&rev), &y, &rev_names, &params).unwrap();
        assert_eq!(c.pi_of("f2"), a.pi_of("f2"));
        assert_eq!(c.pi_of("f5"), a.pi_of("f5"));
    }

    #[test]
    fn permutation_importance_finds_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian_matrix(150, 6, &mut rng);
        let y = x.column(3);
        let params = StabilityParams {
            iterations: 4,
            top_k: 1,
            importance: ImportanceKind::Permutation,
            ..Default::default()
        };
        let r = stability_select(&x, &y, &names(6), &params).unwrap();
        assert_eq!(r.pi_of("f3"), Some(1.0));
    }

    #[test]
    fn two_stage_counts_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let base = gaussian_matrix(150, 10, &mut rng);
        let x = base.select_columns(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1, 2]);
        let y: Vec<f64> = (0..150).map(|r| base.get(r, 1) + base.get(r, 8)).collect();
        let cfg = FeatselConfig {
            stability: StabilityParams { iterations: 8, top_k: 2, ..Default::default() },
            ..Default::default()
        };
        let names: Vec<String> = (0..13).map(|j| format!("c{j}")).collect();
        let sel = two_stage_select(&x, &y, &names, &cfg).unwrap();
        let c = &sel.report.stage_counts;
        assert_eq!((c.initial, c.after_stage1), (13, 10));
        assert!(c.after_stage2 <= c.after_stage1);
        let mut cols = sel.selected_columns.clone();
        cols.sort_unstable();
        assert_eq!(cols, vec![1, 8]);
    }

    #[test]
    fn rejects_bad_stability_params() {
        let x = Matrix::zeros(10, 2);
        let y = vec![0.0; 10];
        let p = StabilityParams { iterations: 1, ..Default::default() };
        assert!(matches!(stability_select(&x, &y, &names(2), &p), Err(FeatselError::InvalidParams(_))));
        assert!(matches!(
            stability_select(&x, &y, &names(3), &StabilityParams::default()),
            Err(FeatselError::NameMismatch { .. })
        ));
    }

    fn report_with(pis: &[(&str, f64)]) -> StabilityReport {
        StabilityReport {
            pi: pis.iter().map(|(n, p)| (n.to_string(), *p)).collect(),
            ranked: vec![],
            selected: pis.iter().map(|(n, _)| n.to_string()).collect(),
            stage_counts: StageCounts { initial: pis.len(), after_stage1: pis.len(), after_stage2: pis.len() },
            iterations: 64,
            threshold: 0.0,
        }
    }

    #[test]
    fn category_shares() {
        let r = report_with(&[("eo_a", 1.0), ("eo_b", 1.0), ("clim_a", 1.0), ("terrain_a", 0.0)]);
        let one: BTreeMap<String, String> = r.pi.keys().map(|k| (k.clone(), "all".to_string())).collect();
        let s = category_stability(&r, &one).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].share, 1.0);

        let r = report_with(&[("a", 1.0), ("b", 1.0), ("c", 1.0), ("d", 1.0)]);
        let cats: BTreeMap<String, String> =
            [("a", "X"), ("b", "X"), ("c", "X"), ("d", "Y")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let s = category_stability(&r, &cats).unwrap();
        assert_eq!((s[0].share, s[1].share), (0.75, 0.25));

        let mut missing = cats.clone();
        missing.remove("d");
        assert_eq!(category_stability(&r, &missing), Err(FeatselError::Uncategorized("d".into())));
    }

    #[test]
    fn category_shares_match_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pis: Vec<(String, f64)> = (0..40).map(|j| (format!("f{j}"), rng.random::<f64>())).collect();
        let refs: Vec<(&str, f64)> = pis.iter().map(|(n, p)| (n.as_str(), *p)).collect();
        let r = report_with(&refs);
        let cats: BTreeMap<String, String> = pis.iter().enumerate().map(|(j, (n, _))| (n.clone(), format!("c{}", j % 3))).collect();
        let s = category_stability(&r, &cats).unwrap();
        let total: f64 = pis.iter().map(|p| p.1).sum();
        for share in &s {
            let direct: f64 = pis.iter().enumerate().filter(|(j, _)| format!("c{}", j % 3) == share.category).map(|(_, p)| p.1).sum();
            assert!((share.share - direct / total).abs() < 1e-12);
        }
        assert!((s.iter().map(|c| c.share).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn default_category_prefix() {
        assert_eq!(default_category("eo_ndvi_m03"), "eo");
        assert_eq!(default_category("elevation"), "elevation");
    }
}
