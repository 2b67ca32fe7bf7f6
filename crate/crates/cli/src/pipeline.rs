//! End-to-end workflow behind the CLI verbs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use geoeval_core::conformal::{calibrate_stratified, evaluate_intervals, evaluate_intervals_stratified, ConformalModel, Interval};
use geoeval_core::data::{load_dataset, ColumnSchema, Dataset, RowDiagnostic};
use geoeval_core::derive_seed;
use geoeval_core::featsel::{category_stability, default_category, two_stage_select, CategoryShare, Selection, StabilityReport};
use geoeval_core::metrics::{aggregate_superclass, evaluate_stratified, fold_mean, metrics_row, MetricOptions, MetricsRow, RowLabel};
use geoeval_core::model::{fit_stratum_calibration, fit_target_pipeline, PipelineOptions, PipelineTrainer, Predictor};
use geoeval_core::spatial::{assign_blocks, nn_distance_report, BlockingOptions, NNDistanceReport, SpatialBlock};
use geoeval_core::splitting::{allocate_folds, oof_predictions, random_fold_plan, split_calibration_test, FoldPlan};
use geoeval_core::stats::{fold_diagnostics, FoldDiagnostic};
use geoeval_core::synth::{generate, GroundTruth};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::*;

// derive_seed stream indices
const STREAM_SPLIT: u64 = 1;
const STREAM_FOLDS: u64 = 2;
const STREAM_FEATSEL: u64 = 3;
const STREAM_GBRT: u64 = 4;

/// Loaded data with its blocks, test hold-out and development fold plan.
pub struct Prepared {
    pub dataset: Dataset,
    pub rejected: Vec<RowDiagnostic>,
    pub truth: Option<GroundTruth>,
    pub blocks: Vec<SpatialBlock>,
    pub strata: Vec<String>,
    pub development_blocks: Vec<SpatialBlock>,
    pub test_blocks: Vec<SpatialBlock>,
    pub development_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub plan: FoldPlan,
}

pub fn load_data(cfg: &RunConfig) -> Result<(Dataset, Vec<RowDiagnostic>, Option<GroundTruth>), CliError> {
    if let Some(input) = &cfg.input {
        let schema = ColumnSchema { targets: cfg.targets.clone(), ..input.columns.clone() };
        let outcome = load_dataset(&input.path, &schema)?;
        for r in &outcome.rejected {
            log::warn!("rejected row {} ({}): {}", r.row, r.column, r.message);
        }
        return Ok((outcome.dataset, outcome.rejected, None));
    }
    let synth = cfg.synth.as_ref().ok_or_else(|| CliError::config("input", "no data source"))?;
    let synth = geoeval_core::synth::SynthConfig { seed: cfg.seed()?, ..synth.clone() };
    let out = generate(&synth)?;
    Ok((out.dataset, Vec::new(), Some(out.truth)))
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    cfg.validate()?;
    let seed = cfg.seed()?;
    let (dataset, rejected, truth) = load_data(cfg)?;
    for t in cfg.target_names() {
        if !dataset.has_target(&t) {
            return Err(CliError::config("targets", format!("target {t:?} not present in the data")));
        }
    }
    let blocks = assign_blocks(&dataset, &BlockingOptions::with_block_km(cfg.block_km))?;
    let strata: Vec<String> = dataset.records.iter().map(|r| r.stratum.clone()).collect();
    let (development_blocks, test_blocks) = if cfg.test_fraction > 0.0 {
        let split = split_calibration_test(&blocks, &strata, cfg.test_fraction, derive_seed(seed, STREAM_SPLIT))?;
        let (dev, test) = split.partition(&blocks);
        (dev.into_iter().cloned().collect::<Vec<_>>(), test.into_iter().cloned().collect::<Vec<_>>())
    } else {
        (blocks.clone(), Vec::new())
    };
    let rows_of = |bs: &[SpatialBlock]| {
        let mut rows: Vec<usize> = bs.iter().flat_map(|b| b.members.iter().copied()).collect();
        rows.sort_unstable();
        rows
    };
    let plan = allocate_folds(&development_blocks, &strata, cfg.k, derive_seed(seed, STREAM_FOLDS))
        .map_err(|e| CliError::Pipeline(format!("fold allocation: {e}")))?;
    log::info!(
        "{} records, {} blocks ({} development, {} test), {} folds",
        dataset.len(),
        blocks.len(),
        development_blocks.len(),
        test_blocks.len(),
        cfg.k
    );
    Ok(Prepared {
        development_rows: rows_of(&development_blocks),
        test_rows: rows_of(&test_blocks),
        dataset,
        rejected,
        truth,
        blocks,
        strata,
        development_blocks,
        test_blocks,
        plan,
    })
}

pub fn pipeline_options(cfg: &RunConfig, target: &str) -> Result<PipelineOptions, CliError> {
    let seed = cfg.seed()?;
    let mut featsel = cfg.featsel.clone();
    featsel.stability.seed = derive_seed(seed, STREAM_FEATSEL);
    let gbrt = geoeval_core::model::GbrtParams { seed: derive_seed(seed, STREAM_GBRT), ..cfg.gbrt.clone() };
    Ok(PipelineOptions {
        featsel,
        select_features: cfg.select_features,
        gbrt,
        transform: cfg.transform_for(target),
        min_labeled: cfg.min_labeled,
        nonnegative: None,
    })
}

fn plan_summary(plan: &FoldPlan) -> FoldPlanSummary {
    FoldPlanSummary {
        k: plan.k,
        mode: format!("{:?}", plan.mode).to_lowercase(),
        fold_sizes: plan.fold_sizes(),
        stratum_balance: plan.stratum_balance.clone(),
        max_share_deviation: plan.max_share_deviation(),
        oversized_blocks: plan.oversized_blocks.clone(),
        block_to_fold: plan.block_to_fold.clone(),
    }
}

fn leakage(p: &Prepared) -> Result<Option<NNDistanceReport>, CliError> {
    if p.test_blocks.is_empty() {
        return Ok(None);
    }
    Ok(Some(nn_distance_report(&p.test_blocks, &p.development_blocks)?))
}

fn metric_options(cfg: &RunConfig) -> MetricOptions {
    MetricOptions { unstable_floor: cfg.unstable_floor, ..MetricOptions::default() }
}

/// Pooled, per-stratum, per-depth and super-class rows for one scope.
fn scoped_rows(cfg: &RunConfig, target: &str, scope: &str, points: &[PredictionPoint]) -> Result<Vec<MetricsRow>, CliError> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let opts = metric_options(cfg);
    let y: Vec<f64> = points.iter().map(|p| p.observed).collect();
    let p: Vec<f64> = points.iter().map(|p| p.predicted).collect();
    let strata: Vec<&str> = points.iter().map(|p| p.stratum.as_str()).collect();
    let depths: Vec<&str> = points.iter().map(|p| p.depth_class.token()).collect();
    let mut rows = evaluate_stratified(&y, &p, &strata, target, scope, "stratum", &opts)?;
    rows.extend(evaluate_stratified(&y, &p, &depths, target, scope, "depth", &opts)?.into_iter().skip(1));
    if !cfg.superclasses.is_empty() {
        let agg = aggregate_superclass(&rows, "stratum", &cfg.superclasses);
        rows.extend(agg);
    }
    Ok(rows)
}

fn point(ds: &Dataset, i: usize, target: &str, predicted: f64) -> PredictionPoint {
    let r = &ds.records[i];
    PredictionPoint {
        id: r.id.clone(),
        stratum: r.stratum.clone(),
        depth_class: r.depth_class,
        observed: r.target(target).expect("labeled row"),
        predicted,
    }
}

fn category_shares(report: &StabilityReport) -> Vec<CategoryShare> {
    let categories = report.selected.iter().map(|n| (n.clone(), default_category(n))).collect();
    category_stability(report, &categories).unwrap_or_else(|e| {
        log::warn!("category shares skipped: {e}");
        Vec::new()
    })
}

fn floor_if(nonnegative: bool, v: f64) -> f64 {
    if nonnegative {
        v.max(0.0)
    } else {
        v
    }
}

struct TargetRun {
    report: TargetReport,
    model: TargetModel,
}

fn run_target(cfg: &RunConfig, p: &Prepared, target: &str, timing: &mut Timing) -> Result<TargetRun, CliError> {
    let ds = &p.dataset;
    let opts = pipeline_options(cfg, target)?;

    let t0 = Instant::now();
    let diagnostics = fold_diagnostics(ds, &p.plan, &p.development_blocks, target)?;
    timing.insert(format!("{target}.diagnostics"), t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let final_model = fit_target_pipeline(ds, &p.development_rows, target, &opts)?;
    timing.insert(format!("{target}.select_and_fit"), t0.elapsed().as_secs_f64());
    log::info!("{target}: {} features selected", final_model.feature_indices.len());

    let t0 = Instant::now();
    let trainer = PipelineTrainer {
        target: target.to_string(),
        names: &ds.feature_names,
        opts: opts.clone(),
        fixed_features: Some(final_model.feature_indices.clone()),
    };
    let oof = oof_predictions(&p.plan, &trainer, ds, target)?;
    timing.insert(format!("{target}.oof"), t0.elapsed().as_secs_f64());

    let oof_rows: Vec<usize> = (0..ds.len()).filter(|&i| oof[i].is_some()).collect();
    let oof_points: Vec<PredictionPoint> =
        oof_rows.iter().map(|&i| point(ds, i, target, oof[i].expect("filtered"))).collect();
    let observed: Vec<f64> = oof_points.iter().map(|q| q.observed).collect();
    let predicted: Vec<f64> = oof_points.iter().map(|q| q.predicted).collect();
    let strata: Vec<&str> = oof_points.iter().map(|q| q.stratum.as_str()).collect();

    let calibrator = if cfg.calibrate_by_stratum {
        fit_stratum_calibration(&predicted, &observed, &strata, cfg.calibration_min_count)?
    } else {
        fit_stratum_calibration(&predicted, &observed, &strata, usize::MAX)?
    };
    let nonneg = final_model.nonnegative;
    let calibrated_oof: Vec<f64> =
        predicted.iter().zip(&strata).map(|(v, s)| floor_if(nonneg, calibrator.apply(*v, s))).collect();

    let residuals: Vec<f64> = observed.iter().zip(&calibrated_oof).map(|(y, v)| (y - v).abs()).collect();
    let conformal = if cfg.stratified_conformal {
        calibrate_stratified(&residuals, &strata, cfg.alpha, cfg.conformal_min_count)?
    } else {
        ConformalModel::global(&residuals, cfg.alpha)?
    };

    let test_points: Vec<PredictionPoint> = p
        .test_rows
        .iter()
        .filter(|&&i| ds.records[i].target(target).is_some())
        .map(|&i| {
            let r = &ds.records[i];
            point(ds, i, target, floor_if(nonneg, calibrator.apply(final_model.predict(&r.covariates), &r.stratum)))
        })
        .collect();

    let mut metrics = scoped_rows(cfg, target, "oof", &oof_points)?;
    let opts_m = metric_options(cfg);
    let mut fold_rows = Vec::new();
    for fold in 0..p.plan.k {
        let idx: Vec<usize> = (0..oof_points.len()).filter(|&j| p.plan.fold_of(oof_rows[j]) == Some(fold)).collect();
        if idx.is_empty() {
            continue;
        }
        let y: Vec<f64> = idx.iter().map(|&j| observed[j]).collect();
        let v: Vec<f64> = idx.iter().map(|&j| predicted[j]).collect();
        let label = RowLabel { target: target.into(), scope: format!("fold-{fold}"), dimension: "pooled".into(), group: "all".into() };
        fold_rows.push(metrics_row(&y, &v, label, &opts_m)?);
    }
    let mean_label = RowLabel { target: target.into(), scope: "oof-fold-mean".into(), dimension: "pooled".into(), group: "all".into() };
    metrics.extend(fold_mean(&fold_rows, mean_label));
    metrics.extend(fold_rows);
    metrics.extend(scoped_rows(cfg, target, "test", &test_points)?);

    let (scope, eval_points) = if test_points.is_empty() {
        log::warn!("{target}: no test set, scoring intervals on the calibration residuals themselves");
        ("oof", oof_points.iter().zip(&calibrated_oof).map(|(q, v)| (q, *v)).collect::<Vec<_>>())
    } else {
        ("test", test_points.iter().map(|q| (q, q.predicted)).collect())
    };
    let intervals: Vec<Interval> = eval_points
        .iter()
        .map(|(q, v)| conformal.predict_interval(*v, Some(&q.stratum), cfg.floor_intervals && nonneg))
        .collect::<Result<_, _>>()?;
    let y_eval: Vec<f64> = eval_points.iter().map(|(q, _)| q.observed).collect();
    let s_eval: Vec<&str> = eval_points.iter().map(|(q, _)| q.stratum.as_str()).collect();
    let overall = match evaluate_intervals(&y_eval, &intervals) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("{target}: interval report skipped: {e}");
            None
        }
    };
    let interval_section = IntervalSection {
        scope: scope.into(),
        overall,
        by_stratum: evaluate_intervals_stratified(&y_eval, &intervals, &s_eval)?,
        floored: intervals.iter().filter(|i| i.floored).count(),
    };

    let stability = final_model.selection.as_ref().map(|sel: &Selection| StabilitySection {
        category_shares: category_shares(&sel.report),
        report: sel.report.clone(),
    });
    let importances = final_model.feature_names.iter().cloned().zip(final_model.feature_importances()).collect();

    Ok(TargetRun {
        report: TargetReport {
            target: target.to_string(),
            transform: opts.transform,
            n_development: oof_points.len(),
            n_test: test_points.len(),
            fold_diagnostics: diagnostics,
            stability,
            selected_features: final_model.feature_names.clone(),
            feature_importances: importances,
            calibration: calibrator.clone(),
            metrics,
            conformal: conformal.clone(),
            intervals: interval_section,
            oof_predictions: oof_points,
            test_predictions: test_points,
        },
        model: TargetModel { pipeline: final_model, calibrator, conformal, floor_intervals: cfg.floor_intervals },
    })
}

/// Everything a `run` produces.
pub struct RunOutput {
    pub report: RunReport,
    pub model: ModelBundle,
    pub timing: Timing,
    pub truth: Option<GroundTruth>,
}

/// The config as echoed into reports: seed streams resolved, output dir dropped.
pub fn effective_config(cfg: &RunConfig) -> RunConfig {
    let mut echo = cfg.clone();
    echo.output_dir = None;
    echo
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let start = Instant::now();
    let mut timing = Timing::new();
    let p = prepare(cfg)?;
    timing.insert("prepare".into(), start.elapsed().as_secs_f64());
    let echo = effective_config(cfg);
    let id = run_id(&echo);

    let mut targets = Vec::new();
    let mut models = Vec::new();
    for t in cfg.target_names() {
        let r = run_target(cfg, &p, &t, &mut timing)?;
        targets.push(r.report);
        models.push(r.model);
    }
    let mut stratum_counts = BTreeMap::new();
    for s in &p.strata {
        *stratum_counts.entry(s.clone()).or_insert(0) += 1;
    }
    let report = RunReport {
        schema_version: SCHEMA_VERSION.into(),
        run_id: id.clone(),
        config: echo,
        dataset: DatasetInfo {
            n_records: p.dataset.len(),
            n_features: p.dataset.width(),
            stratum_counts,
            rejected_rows: p.rejected.clone(),
        },
        blocks: BlockInfo {
            block_km: cfg.block_km,
            n_blocks: p.blocks.len(),
            development_blocks: p.development_blocks.iter().map(|b| b.block_id).collect(),
            test_blocks: p.test_blocks.iter().map(|b| b.block_id).collect(),
        },
        fold_plan: plan_summary(&p.plan),
        leakage: leakage(&p)?,
        targets,
    };
    let model = ModelBundle {
        schema_version: SCHEMA_VERSION.into(),
        run_id: id,
        feature_names: p.dataset.feature_names.clone(),
        targets: models,
    };
    timing.insert("total".into(), start.elapsed().as_secs_f64());
    Ok(RunOutput { report, model, timing, truth: p.truth })
}

/// Writes report.json, model.json, timing.json and metrics.csv into `dir`.
pub fn write_run(out: &RunOutput, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    write_json(&out.report, &dir.join("report.json"))?;
    write_json(&out.model, &dir.join("model.json"))?;
    write_json(&out.timing, &dir.join("timing.json"))?;
    let rows: Vec<MetricsRow> = out.report.targets.iter().flat_map(|t| t.metrics.iter().cloned()).collect();
    std::fs::write(dir.join("metrics.csv"), geoeval_core::metrics::rows_to_csv(&rows))?;
    if let Some(truth) = &out.truth {
        write_json(truth, &dir.join("truth.json"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDiagnostics {
    pub target: String,
    pub folds: Vec<FoldDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema_version: String,
    pub run_id: String,
    pub blocks: BlockInfo,
    pub fold_plan: FoldPlanSummary,
    pub leakage: Option<NNDistanceReport>,
    pub targets: Vec<TargetDiagnostics>,
}

/// Blocking, fold plan and per-fold KS/AD/NN diagnostics without model fitting.
pub fn diagnose(cfg: &RunConfig) -> Result<DiagnosticsReport, CliError> {
    let p = prepare(cfg)?;
    let targets = cfg
        .target_names()
        .into_iter()
        .map(|t| Ok(TargetDiagnostics { folds: fold_diagnostics(&p.dataset, &p.plan, &p.development_blocks, &t)?, target: t }))
        .collect::<Result<_, CliError>>()?;
    Ok(DiagnosticsReport {
        schema_version: SCHEMA_VERSION.into(),
        run_id: run_id(&effective_config(cfg)),
        blocks: BlockInfo {
            block_km: cfg.block_km,
            n_blocks: p.blocks.len(),
            development_blocks: p.development_blocks.iter().map(|b| b.block_id).collect(),
            test_blocks: p.test_blocks.iter().map(|b| b.block_id).collect(),
        },
        fold_plan: plan_summary(&p.plan),
        leakage: leakage(&p)?,
        targets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSelection {
    pub target: String,
    pub stability: StabilitySection,
    pub selected_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub schema_version: String,
    pub run_id: String,
    pub targets: Vec<TargetSelection>,
}

/// Two-stage feature selection on the development rows of each target.
pub fn select(cfg: &RunConfig) -> Result<SelectionReport, CliError> {
    let p = prepare(cfg)?;
    let ds = &p.dataset;
    let mut targets = Vec::new();
    for t in cfg.target_names() {
        let opts = pipeline_options(cfg, &t)?;
        let rows: Vec<usize> = p.development_rows.iter().copied().filter(|&i| ds.records[i].target(&t).is_some()).collect();
        let y: Vec<f64> = ds
            .target_values(&t, &rows)
            .into_iter()
            .map(|v| opts.transform.forward(v))
            .collect::<Result<_, _>>()?;
        let sel = two_stage_select(&ds.matrix(&rows), &y, &ds.feature_names, &opts.featsel)
            .map_err(|e| CliError::Pipeline(e.to_string()))?;
        targets.push(TargetSelection {
            target: t,
            selected_features: sel.report.selected.clone(),
            stability: StabilitySection {
                category_shares: category_shares(&sel.report),
                report: sel.report,
            },
        });
    }
    Ok(SelectionReport { schema_version: SCHEMA_VERSION.into(), run_id: run_id(&effective_config(cfg)), targets })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub rmse: f64,
    pub mae: f64,
    pub ccc: Option<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvComparison {
    pub target: String,
    /// Rows tagged `blocked` and `random` in their scope.
    pub blocked: MetricsRow,
    pub random: MetricsRow,
    /// Blocked minus random.
    pub delta: MetricDeltas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvComparisonReport {
    pub schema_version: String,
    pub run_id: String,
    pub modes: Vec<String>,
    pub targets: Vec<CvComparison>,
}

/// OOF metrics under blocked and random folds with the same model settings and features.
pub fn compare_cv_modes(cfg: &RunConfig) -> Result<CvComparisonReport, CliError> {
    let p = prepare(cfg)?;
    let ds = &p.dataset;
    let seed = cfg.seed()?;
    let random = random_fold_plan(&p.development_rows, &p.strata, cfg.k, derive_seed(seed, STREAM_FOLDS))?;
    let mut targets = Vec::new();
    for t in cfg.target_names() {
        let opts = pipeline_options(cfg, &t)?;
        let fixed = fit_target_pipeline(ds, &p.development_rows, &t, &opts)?.feature_indices;
        let trainer = PipelineTrainer { target: t.clone(), names: &ds.feature_names, opts, fixed_features: Some(fixed) };
        let score = |plan: &FoldPlan, mode: &str| -> Result<MetricsRow, CliError> {
            let oof = oof_predictions(plan, &trainer, ds, &t)?;
            let (y, v): (Vec<f64>, Vec<f64>) = (0..ds.len())
                .filter_map(|i| oof[i].map(|v| (ds.records[i].target(&t).expect("labeled"), v)))
                .unzip();
            let label = RowLabel { target: t.clone(), scope: mode.into(), dimension: "pooled".into(), group: "all".into() };
            Ok(metrics_row(&y, &v, label, &metric_options(cfg))?)
        };
        let blocked = score(&p.plan, "blocked")?;
        let random = score(&random, "random")?;
        let delta = MetricDeltas {
            rmse: blocked.rmse - random.rmse,
            mae: blocked.mae - random.mae,
            ccc: blocked.ccc.zip(random.ccc).map(|(a, b)| a - b),
            bias: blocked.bias - random.bias,
        };
        log::info!("{t}: blocked RMSE {:.4}, random RMSE {:.4}", blocked.rmse, random.rmse);
        targets.push(CvComparison { target: t, blocked, random, delta });
    }
    Ok(CvComparisonReport {
        schema_version: SCHEMA_VERSION.into(),
        run_id: run_id(&effective_config(cfg)),
        modes: vec!["blocked".into(), "random".into()],
        targets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: String,
    pub model_run_id: String,
    pub targets: Vec<TargetEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEvaluation {
    pub target: String,
    pub metrics: Vec<MetricsRow>,
    pub intervals: IntervalSection,
}

/// Scores a saved model bundle on a labeled dataset.
pub fn evaluate(model: &ModelBundle, data: &Path, columns: &ColumnSchema) -> Result<EvaluationReport, CliError> {
    let schema = ColumnSchema { targets: model.targets.iter().map(|t| t.pipeline.target.clone()).collect(), ..columns.clone() };
    let outcome = load_dataset(data, &schema)?;
    let ds = outcome.dataset;
    let opts = MetricOptions::default();
    let mut targets = Vec::new();
    for tm in &model.targets {
        let target = &tm.pipeline.target;
        let mut points = Vec::new();
        let mut intervals = Vec::new();
        for (i, r) in ds.records.iter().enumerate() {
            if r.target(target).is_none() {
                continue;
            }
            let raw = tm.pipeline.predict_named(&ds.feature_names, &r.covariates)?;
            let v = floor_if(tm.pipeline.nonnegative, tm.calibrator.apply(raw, &r.stratum));
            intervals.push(tm.conformal.predict_interval(v, Some(&r.stratum), tm.floor_intervals && tm.pipeline.nonnegative)?);
            points.push(point(&ds, i, target, v));
        }
        if points.is_empty() {
            return Err(CliError::Data(format!("no labeled rows for {target}")));
        }
        let y: Vec<f64> = points.iter().map(|q| q.observed).collect();
        let v: Vec<f64> = points.iter().map(|q| q.predicted).collect();
        let s: Vec<&str> = points.iter().map(|q| q.stratum.as_str()).collect();
        targets.push(TargetEvaluation {
            target: target.clone(),
            metrics: evaluate_stratified(&y, &v, &s, target, "evaluate", "stratum", &opts)?,
            intervals: IntervalSection {
                scope: "evaluate".into(),
                overall: evaluate_intervals(&y, &intervals).ok(),
                by_stratum: evaluate_intervals_stratified(&y, &intervals, &s)?,
                floored: intervals.iter().filter(|i| i.floored).count(),
            },
        });
    }
    Ok(EvaluationReport { schema_version: SCHEMA_VERSION.into(), model_run_id: model.run_id.clone(), targets })
}

