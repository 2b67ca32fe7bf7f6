//! Stratified, group-aware fold allocation over spatial blocks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::model::{ModelError, Predictor, Trainer};
use crate::spatial::SpatialBlock;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("k must be at least 2, got {0}")]
    TooFewFolds(usize),
    #[error("k = {k} exceeds the number of blocks ({blocks})")]
    MoreFoldsThanBlocks { k: usize, blocks: usize },
    #[error("test fraction must lie in (0, 0.5), got {0}")]
    InvalidTestFraction(f64),
    #[error("need at least 2 blocks to split, got {0}")]
    TooFewBlocks(usize),
    #[error("training failed on fold {fold}: {source}")]
    Trainer { fold: usize, source: ModelError },
    #[error("fold {0} has no training samples")]
    EmptyTraining(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Spatial blocks are the units of assignment.
    Blocked,
    /// Every sample is its own unit.
    Random,
}

/// Assignment of blocks and samples to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub mode: SplitMode,
    pub block_to_fold: BTreeMap<usize, usize>,
    /// Record index → fold.
    pub sample_to_fold: BTreeMap<usize, usize>,
    /// Per fold, sample counts by stratum.
    pub stratum_balance: Vec<BTreeMap<String, usize>>,
    /// Blocks larger than twice the per-fold target, placed first.
    pub oversized_blocks: Vec<usize>,
    pub test_fraction: Option<f64>,
}

impl FoldPlan {
    pub fn fold_of(&self, sample: usize) -> Option<usize> {
        self.sample_to_fold.get(&sample).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        self.stratum_balance.iter().map(|m| m.values().sum()).collect()
    }

    /// Record indices in `fold`, ascending.
    pub fn samples_in(&self, fold: usize) -> Vec<usize> {
        self.sample_to_fold.iter().filter(|(_, &f)| f == fold).map(|(&s, _)| s).collect()
    }

    pub fn blocks_in(&self, fold: usize) -> Vec<usize> {
        self.block_to_fold.iter().filter(|(_, &f)| f == fold).map(|(&b, _)| b).collect()
    }

    /// Largest |fold share − global share| over folds and strata, in [0, 1].
    pub fn max_share_deviation(&self) -> f64 {
        let mut global: BTreeMap<&str, usize> = BTreeMap::new();
        for fold in &self.stratum_balance {
            for (s, c) in fold {
                *global.entry(s.as_str()).or_default() += c;
            }
        }
        let total: usize = global.values().sum();
        let mut worst = 0.0f64;
        for fold in &self.stratum_balance {
            let n: usize = fold.values().sum();
            if n == 0 {
                return 1.0;
            }
            for (s, &g) in &global {
                let c = fold.get(*s).copied().unwrap_or(0);
                worst = worst.max((c as f64 / n as f64 - g as f64 / total as f64).abs());
            }
        }
        worst
    }
}

/// Greedy largest-first allocation of weighted groups to bins with target
/// proportions. Returns the bin of each group.
///
/// Each group goes to the bin whose stratum shares it moves closest to
/// their targets: the increase of Σ_s (N_s/N)·(c_fs/N_s − p_f)² is
/// minimised, ties going to the lowest bin index. Empty bins are filled first.
fn allocate_groups(group_counts: &[BTreeMap<&str, usize>], proportions: &[f64], seed: u64) -> Vec<usize> {
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for g in group_counts {
        for (s, &c) in g {
            *totals.entry(*s).or_default() += c as f64;
        }
    }
    let grand: f64 = totals.values().sum();
    let strata: Vec<&str> = totals.keys().copied().collect();
    let n_bins = proportions.len();
    let mut filled = vec![vec![0.0f64; strata.len()]; n_bins];

    let mut order: Vec<usize> = (0..group_counts.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let size = |g: usize| group_counts[g].values().sum::<usize>();
    order.sort_by_key(|&g| std::cmp::Reverse(size(g)));

    let mut bin_of = vec![0usize; group_counts.len()];
    for g in order {
        let add: Vec<f64> = strata.iter().map(|s| group_counts[g].get(s).copied().unwrap_or(0) as f64).collect();
        let any_empty = filled.iter().any(|b| b.iter().all(|&c| c == 0.0));
        let mut best = (f64::INFINITY, 0usize);
        for (f, &p) in proportions.iter().enumerate() {
            if any_empty && filled[f].iter().any(|&c| c > 0.0) {
                continue;
            }
            let delta: f64 = strata
                .iter()
                .enumerate()
                .filter(|(si, _)| add[*si] > 0.0)
                .map(|(si, s)| {
                    let n_s = totals[s];
                    let before = filled[f][si] / n_s - p;
                    let after = (filled[f][si] + add[si]) / n_s - p;
                    n_s / grand * (after * after - before * before)
                })
                .sum();
            if delta < best.0 {
                best = (delta, f);
            }
        }
        bin_of[g] = best.1;
        for (si, a) in add.iter().enumerate() {
            filled[best.1][si] += a;
        }
    }
    bin_of
}

fn block_counts<'a, S: AsRef<str>>(blocks: &[SpatialBlock], strata: &'a [S]) -> Vec<BTreeMap<&'a str, usize>> {
    blocks
        .iter()
        .map(|b| {
            let mut m = BTreeMap::new();
            for &i in &b.members {
                *m.entry(strata[i].as_ref()).or_default() += 1;
            }
            m
        })
        .collect()
}

fn build_plan<S: AsRef<str>>(
    blocks: &[SpatialBlock],
    strata: &[S],
    k: usize,
    bin_of: &[usize],
    mode: SplitMode,
) -> FoldPlan {
    let mut block_to_fold = BTreeMap::new();
    let mut sample_to_fold = BTreeMap::new();
    let mut stratum_balance = vec![BTreeMap::new(); k];
    for (b, &f) in blocks.iter().zip(bin_of) {
        block_to_fold.insert(b.block_id, f);
        for &i in &b.members {
            sample_to_fold.insert(i, f);
            *stratum_balance[f].entry(strata[i].as_ref().to_string()).or_insert(0) += 1;
        }
    }
    let total: usize = blocks.iter().map(SpatialBlock::len).sum();
    let target = total as f64 / k as f64;
    let oversized_blocks = blocks.iter().filter(|b| b.len() as f64 > 2.0 * target).map(|b| b.block_id).collect();
    FoldPlan {
        k,
        mode,
        block_to_fold,
        sample_to_fold,
        stratum_balance,
        oversized_blocks,
        test_fraction: None,
    }
}

/// Assigns whole blocks to `k` folds with approximately proportional strata.
///
/// `strata` is indexed by record index, as are block members.
pub fn allocate_folds<S: AsRef<str>>(
    blocks: &[SpatialBlock],
    strata: &[S],
    k: usize,
    seed: u64,
) -> Result<FoldPlan, SplitError> {
    if k < 2 {
        return Err(SplitError::TooFewFolds(k));
    }
    if k > blocks.len() {
        return Err(SplitError::MoreFoldsThanBlocks { k, blocks: blocks.len() });
    }
    let bin_of = allocate_groups(&block_counts(blocks, strata), &vec![1.0 / k as f64; k], seed);
    let plan = build_plan(blocks, strata, k, &bin_of, SplitMode::Blocked);
    for b in &plan.oversized_blocks {
        log::warn!("fold allocation: block {b} exceeds twice the per-fold target");
    }
    Ok(plan)
}

/// Stratified k-fold over individual samples, ignoring spatial structure.
pub fn random_fold_plan<S: AsRef<str>>(
    samples: &[usize],
    strata: &[S],
    k: usize,
    seed: u64,
) -> Result<FoldPlan, SplitError> {
    let singletons: Vec<SpatialBlock> = samples
        .iter()
        .enumerate()
        .map(|(b, &i)| SpatialBlock {
            block_id: b,
            cell: (0, 0),
            members: vec![i],
            member_ids: vec![],
            centroid: (0.0, 0.0),
        })
        .collect();
    let mut plan = allocate_folds(&singletons, strata, k, seed)?;
    plan.mode = SplitMode::Random;
    plan.block_to_fold.clear();
    Ok(plan)
}

/// Block-level split into calibration and held-out test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTestSplit {
    pub calibration_blocks: Vec<usize>,
    pub test_blocks: Vec<usize>,
    pub test_fraction: f64,
}

impl CalibrationTestSplit {
    pub fn partition<'a>(&self, blocks: &'a [SpatialBlock]) -> (Vec<&'a SpatialBlock>, Vec<&'a SpatialBlock>) {
        let test: BTreeSet<usize> = self.test_blocks.iter().copied().collect();
        blocks.iter().partition(|b| !test.contains(&b.block_id))
    }
}

pub fn split_calibration_test<S: AsRef<str>>(
    blocks: &[SpatialBlock],
    strata: &[S],
    test_fraction: f64,
    seed: u64,
) -> Result<CalibrationTestSplit, SplitError> {
    if !(test_fraction > 0.0 && test_fraction < 0.5) {
        return Err(SplitError::InvalidTestFraction(test_fraction));
    }
    if blocks.len() < 2 {
        return Err(SplitError::TooFewBlocks(blocks.len()));
    }
    let bin_of = allocate_groups(&block_counts(blocks, strata), &[1.0 - test_fraction, test_fraction], seed);
    let (mut calibration_blocks, mut test_blocks) = (Vec::new(), Vec::new());
    for (b, &bin) in blocks.iter().zip(&bin_of) {
        if bin == 0 { &mut calibration_blocks } else { &mut test_blocks }.push(b.block_id);
    }
    if test_blocks.is_empty() {
        // every block outweighs the test share; hold out the smallest one
        let smallest = blocks.iter().min_by_key(|b| (b.len(), b.block_id)).expect("non-empty");
        calibration_blocks.retain(|&b| b != smallest.block_id);
        test_blocks.push(smallest.block_id);
    }
    Ok(CalibrationTestSplit { calibration_blocks, test_blocks, test_fraction })
}

/// Out-of-fold predictions for every labeled sample in the plan.
///
/// Entry `i` is `Some` when record `i` is in the plan and carries `target`.
pub fn oof_predictions<T: Trainer>(
    plan: &FoldPlan,
    trainer: &T,
    ds: &Dataset,
    target: &str,
) -> Result<Vec<Option<f64>>, SplitError> {
    let labeled: Vec<(usize, usize)> = plan
        .sample_to_fold
        .iter()
        .filter(|(&i, _)| ds.records[i].target(target).is_some())
        .map(|(&i, &f)| (i, f))
        .collect();
    let per_fold: Vec<Vec<(usize, f64)>> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let held: Vec<usize> = labeled.iter().filter(|p| p.1 == fold).map(|p| p.0).collect();
            if held.is_empty() {
                return Ok(Vec::new());
            }
            let train: Vec<usize> = labeled.iter().filter(|p| p.1 != fold).map(|p| p.0).collect();
            if train.is_empty() {
                return Err(SplitError::EmptyTraining(fold));
            }
            let model = trainer
                .fit(&ds.matrix(&train), &ds.target_values(target, &train))
                .map_err(|source| SplitError::Trainer { fold, source })?;
            Ok(held.iter().map(|&i| (i, model.predict(&ds.records[i].covariates))).collect())
        })
        .collect::<Result<_, SplitError>>()?;
    let mut out = vec![None; ds.len()];
    for (i, p) in per_fold.into_iter().flatten() {
        out[i] = Some(p);
    }
    Ok(out)
}
