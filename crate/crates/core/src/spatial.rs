//! Geodesic helpers, grid blocking and nearest-neighbour leakage audits.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::quantile::{mean, quantile_type7};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error, PartialEq)]
pub enum SpatialError {
    #[error("{0} block set is empty")]
    EmptyBlockSet(&'static str),
    #[error("block {0} appears in both test and training sets")]
    SharedBlock(usize),
    #[error("block size must be positive, got {0}")]
    InvalidBlockSize(f64),
}

/// Great-circle distance between two (lat, lon) points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Sinusoidal equal-area projection, returning (x, y) in km.
pub fn sinusoidal_km(lat: f64, lon: f64) -> (f64, f64) {
    let phi = lat.to_radians();
    (EARTH_RADIUS_KM * lon.to_radians() * phi.cos(), EARTH_RADIUS_KM * phi)
}

/// Inverse of [`sinusoidal_km`]. Longitude is not wrapped.
pub fn inverse_sinusoidal(x: f64, y: f64) -> (f64, f64) {
    let phi = y / EARTH_RADIUS_KM;
    let lon = (x / (EARTH_RADIUS_KM * phi.cos())).to_degrees();
    (phi.to_degrees(), lon)
}

/// A grid cell's worth of samples, treated as one unit during partitioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialBlock {
    pub block_id: usize,
    /// Grid cell indices in the projected plane.
    pub cell: (i64, i64),
    /// Record indices into the dataset the blocks were built from.
    pub members: Vec<usize>,
    pub member_ids: Vec<String>,
    /// Arithmetic mean of member (lat, lon).
    pub centroid: (f64, f64),
}

impl SpatialBlock {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockingOptions {
    pub block_km: f64,
    /// Shifts the grid origin by a seeded offset in [0, block_km) on each axis.
    pub offset_seed: Option<u64>,
}

impl Default for BlockingOptions {
    fn default() -> Self {
        BlockingOptions { block_km: 100.0, offset_seed: None }
    }
}

impl BlockingOptions {
    pub fn with_block_km(block_km: f64) -> Self {
        BlockingOptions { block_km, ..Default::default() }
    }

    fn origin(&self) -> (f64, f64) {
        match self.offset_seed {
            None => (0.0, 0.0),
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (rng.random::<f64>() * self.block_km, rng.random::<f64>() * self.block_km)
            }
        }
    }
}

/// Grid cell of a point under the given options.
pub fn grid_cell(lat: f64, lon: f64, opts: &BlockingOptions) -> (i64, i64) {
    let (ox, oy) = opts.origin();
    let (x, y) = sinusoidal_km(lat, lon);
    (((x - ox) / opts.block_km).floor() as i64, ((y - oy) / opts.block_km).floor() as i64)
}

/// Groups every record into a square grid cell of the sinusoidal projection.
///
/// Block ids follow the order in which cells are first met in the dataset.
pub fn assign_blocks(ds: &Dataset, opts: &BlockingOptions) -> Result<Vec<SpatialBlock>, SpatialError> {
    if !(opts.block_km > 0.0 && opts.block_km.is_finite()) {
        return Err(SpatialError::InvalidBlockSize(opts.block_km));
    }
    let mut by_cell: HashMap<(i64, i64), usize> = HashMap::new();
    let mut blocks: Vec<SpatialBlock> = Vec::new();
    for (i, r) in ds.records.iter().enumerate() {
        let cell = grid_cell(r.lat, r.lon, opts);
        let b = *by_cell.entry(cell).or_insert_with(|| {
            blocks.push(SpatialBlock {
                block_id: blocks.len(),
                cell,
                members: Vec::new(),
                member_ids: Vec::new(),
                centroid: (0.0, 0.0),
            });
            blocks.len() - 1
        });
        blocks[b].members.push(i);
        blocks[b].member_ids.push(r.id.clone());
    }
    for b in &mut blocks {
        let n = b.members.len() as f64;
        let (slat, slon) = b.members.iter().fold((0.0, 0.0), |(a, o), &i| {
            (a + ds.records[i].lat, o + ds.records[i].lon)
        });
        b.centroid = (slat / n, slon / n);
    }
    Ok(blocks)
}

/// Nearest-neighbour distances from each test block to the training blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NNDistanceReport {
    pub n_test_blocks: usize,
    pub mean_km: f64,
    pub median_km: f64,
    pub p95_km: f64,
    pub min_km: f64,
    /// (test block id, distance to nearest training block) in test-set order.
    pub per_block: Vec<(usize, f64)>,
}

impl NNDistanceReport {
    fn from_distances(per_block: Vec<(usize, f64)>) -> Self {
        let mut d: Vec<f64> = per_block.iter().map(|p| p.1).collect();
        d.sort_by(f64::total_cmp);
        NNDistanceReport {
            n_test_blocks: d.len(),
            mean_km: mean(&d),
            median_km: quantile_type7(&d, 0.5),
            p95_km: quantile_type7(&d, 0.95),
            min_km: d[0],
            per_block,
        }
    }

    /// True when some test block sits on top of a training block.
    pub fn has_leakage(&self, tolerance_km: f64) -> bool {
        self.min_km <= tolerance_km
    }
}

/// Latitude-sorted point set answering nearest-neighbour queries.
///
/// The search walks outward from the query latitude and stops once the
/// meridional distance alone exceeds the best haversine distance found.
struct LatIndex {
    points: Vec<(f64, f64)>,
}

impl LatIndex {
    fn new(mut points: Vec<(f64, f64)>) -> Self {
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        LatIndex { points }
    }

    fn nearest(&self, q: (f64, f64)) -> f64 {
        let start = self.points.partition_point(|p| p.0 < q.0);
        let mut best = f64::INFINITY;
        let bound = |p: &(f64, f64)| EARTH_RADIUS_KM * (p.0 - q.0).abs().to_radians();
        let slack = |best: f64| best + 1e-9 * (1.0 + best);
        for p in &self.points[start..] {
            if bound(p) > slack(best) {
                break;
            }
            best = best.min(haversine_km(q, *p));
        }
        for p in self.points[..start].iter().rev() {
            if bound(p) > slack(best) {
                break;
            }
            best = best.min(haversine_km(q, *p));
        }
        best
    }
}

fn check_disjoint(test: &[SpatialBlock], train: &[SpatialBlock]) -> Result<(), SpatialError> {
    if test.is_empty() {
        return Err(SpatialError::EmptyBlockSet("test"));
    }
    if train.is_empty() {
        return Err(SpatialError::EmptyBlockSet("training"));
    }
    let train_ids: std::collections::HashSet<usize> = train.iter().map(|b| b.block_id).collect();
    match test.iter().find(|b| train_ids.contains(&b.block_id)) {
        Some(b) => Err(SpatialError::SharedBlock(b.block_id)),
        None => Ok(()),
    }
}

/// Centroid-to-centroid nearest-neighbour distances.
pub fn nn_distance_report(
    test_blocks: &[SpatialBlock],
    train_blocks: &[SpatialBlock],
) -> Result<NNDistanceReport, SpatialError> {
    check_disjoint(test_blocks, train_blocks)?;
    let index = LatIndex::new(train_blocks.iter().map(|b| b.centroid).collect());
    let per_block = test_blocks.iter().map(|b| (b.block_id, index.nearest(b.centroid))).collect();
    Ok(NNDistanceReport::from_distances(per_block))
}

/// Audit variant: for each test block, the smallest member-to-member distance
/// to any training sample.
pub fn nn_member_distance_report(
    ds: &Dataset,
    test_blocks: &[SpatialBlock],
    train_blocks: &[SpatialBlock],
) -> Result<NNDistanceReport, SpatialError> {
    check_disjoint(test_blocks, train_blocks)?;
    let index = LatIndex::new(
        train_blocks
            .iter()
            .flat_map(|b| b.members.iter().map(|&i| ds.records[i].coord()))
            .collect(),
    );
    let per_block = test_blocks
        .iter()
        .map(|b| {
            let d = b
                .members
                .iter()
                .map(|&i| index.nearest(ds.records[i].coord()))
                .fold(f64::INFINITY, f64::min);
            (b.block_id, d)
        })
        .collect();
    Ok(NNDistanceReport::from_distances(per_block))
}
