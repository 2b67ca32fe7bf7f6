use geoeval_core::conformal::{calibrate_stratified, evaluate_intervals, Interval};
use geoeval_core::data::{canonical_schema, load_dataset, save_dataset};
use geoeval_core::metrics::{ccc, evaluate_stratified, MetricOptions};
use geoeval_core::model::{
    fit_gbrt, fit_target_pipeline, GbrtParams, PipelineOptions, PipelineTrainer, Predictor, TargetPipeline, Transform,
};
use geoeval_core::spatial::{assign_blocks, BlockingOptions, SpatialBlock};
use geoeval_core::splitting::{allocate_folds, oof_predictions, split_calibration_test};
use geoeval_core::synth::{generate, GroundTruth, SynthConfig, TargetSkew};

fn small_config(seed: u64) -> SynthConfig {
    SynthConfig { n_samples: 600, extent_km: (500.0, 500.0), n_noise: 6, n_redundant: 2, seed, ..SynthConfig::default() }
}

fn fast_options() -> PipelineOptions {
    let mut opts = PipelineOptions {
        gbrt: GbrtParams { n_trees: 60, max_depth: 4, ..GbrtParams::default() },
        transform: Transform::Log1p,
        ..PipelineOptions::default()
    };
    opts.featsel.stability.iterations = 16;
    opts
}

#[test]
fn csv_round_trip_preserves_dataset() {
    let ds = generate(&small_config(1)).unwrap().dataset;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    save_dataset(&ds, &path).unwrap();
    let loaded = load_dataset(&path, &canonical_schema(&ds)).unwrap();
    assert!(loaded.rejected.is_empty());
    assert_eq!(loaded.dataset, ds);
}

#[test]
fn ground_truth_serializes() {
    let truth = generate(&small_config(2)).unwrap().truth;
    let json = serde_json::to_string(&truth).unwrap();
    let back: GroundTruth = serde_json::from_str(&json).unwrap();
    assert_eq!(back, truth);
    assert_eq!(truth.informative.len(), 5);
}

#[test]
fn noiseless_single_feature_is_learned() {
    let cfg = SynthConfig {
        n_samples: 500,
        n_informative: 1,
        n_noise: 0,
        n_redundant: 0,
        noise_sd: 0.0,
        covariate_noise_sd: 0.0,
        latent_sd: 0.0,
        stratum_effect_sd: 0.0,
        depth_effects: [0.0; 3],
        nonlinear: false,
        target_skew: TargetSkew::None,
        target_name: "y".into(),
        ..SynthConfig::default()
    };
    let ds = generate(&cfg).unwrap().dataset;
    let rows: Vec<usize> = (0..ds.len()).collect();
    let y = ds.target_values("y", &rows);
    let params = GbrtParams { n_trees: 50, learning_rate: 0.5, min_samples_leaf: 1, max_depth: 10, ..GbrtParams::default() };
    let model = fit_gbrt(&ds.matrix(&rows), &y, &params).unwrap();
    let fitted = model.predict_matrix(&ds.matrix(&rows));
    let sd = {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64).sqrt()
    };
    let rmse = (y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    assert!(rmse < 1e-6 * sd, "rmse {rmse} vs sd {sd}");
}

#[test]
fn blocked_workflow_end_to_end() {
    let ds = generate(&small_config(3)).unwrap().dataset;
    let blocks = assign_blocks(&ds, &BlockingOptions::with_block_km(100.0)).unwrap();
    let strata: Vec<&str> = ds.records.iter().map(|r| r.stratum.as_str()).collect();
    let split = split_calibration_test(&blocks, &strata, 0.2, 3).unwrap();
    let (dev, test) = split.partition(&blocks);
    let dev: Vec<SpatialBlock> = dev.into_iter().cloned().collect();
    assert!(!test.is_empty());

    let plan = allocate_folds(&dev, &strata, 5, 3).unwrap();
    let dev_rows: Vec<usize> = dev.iter().flat_map(|b| b.members.iter().copied()).collect();
    assert_eq!(plan.sample_to_fold.len(), dev_rows.len());

    let opts = fast_options();
    let final_model = fit_target_pipeline(&ds, &dev_rows, "SOC", &opts).unwrap();
    let trainer = PipelineTrainer {
        target: "SOC".into(),
        names: &ds.feature_names,
        opts: opts.clone(),
        fixed_features: Some(final_model.feature_indices.clone()),
    };
    let oof = oof_predictions(&plan, &trainer, &ds, "SOC").unwrap();
    let again = oof_predictions(&plan, &trainer, &ds, "SOC").unwrap();
    assert_eq!(oof, again, "OOF predictions must not depend on scheduling");

    let rows: Vec<usize> = dev_rows.iter().copied().filter(|&i| oof[i].is_some()).collect();
    assert_eq!(rows.len(), dev_rows.len());
    let y = ds.target_values("SOC", &rows);
    let p: Vec<f64> = rows.iter().map(|&i| oof[i].unwrap()).collect();
    assert!(p.iter().all(|v| *v >= 0.0));
    assert!(ccc(&y, &p, Transform::Log1p).unwrap() > 0.3);

    let s: Vec<&str> = rows.iter().map(|&i| strata[i]).collect();
    let table = evaluate_stratified(&y, &p, &s, "SOC", "oof", "stratum", &MetricOptions::default()).unwrap();
    assert_eq!(table[0].n, rows.len());
    assert_eq!(table.iter().skip(1).map(|r| r.n).sum::<usize>(), rows.len());

    let residuals: Vec<f64> = y.iter().zip(&p).map(|(a, b)| (a - b).abs()).collect();
    let conformal = calibrate_stratified(&residuals, &s, 0.1, 100).unwrap();
    let ints: Vec<Interval> =
        p.iter().zip(&s).map(|(v, st)| conformal.predict_interval(*v, Some(st), true).unwrap()).collect();
    let report = evaluate_intervals(&y, &ints).unwrap();
    assert!(report.picp >= 0.88, "in-sample coverage {}", report.picp);
}

#[test]
fn pipeline_model_survives_json() {
    let ds = generate(&small_config(4)).unwrap().dataset;
    let rows: Vec<usize> = (0..ds.len()).collect();
    let model = fit_target_pipeline(&ds, &rows, "SOC", &fast_options()).unwrap();
    let back: TargetPipeline = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
    for r in ds.records.iter().take(50) {
        assert_eq!(back.predict(&r.covariates), model.predict(&r.covariates));
    }
}
