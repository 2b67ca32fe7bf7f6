//! Split-conformal prediction intervals and coverage/sharpness scoring.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default per-stratum sample floor for stratified calibration.
pub const MIN_STRATUM_COUNT: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum ConformalError {
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("need at least {need} calibration residuals at this alpha, got {got}")]
    TooFewResiduals { need: usize, got: usize },
    #[error("residuals must be finite and non-negative, found {0}")]
    InvalidResidual(f64),
    #[error("aligned inputs differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("unknown stratum {0:?} and no global fallback configured")]
    UnknownStratum(String),
    #[error("evaluation targets have zero range; PINAW undefined")]
    ZeroRange,
    #[error("empty input")]
    Empty,
}

/// Result of calibrating one residual sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalQuantile {
    pub q: f64,
    pub n: usize,
    /// 1-based order-statistic index used.
    pub index: usize,
    pub diagnostic: Option<String>,
}

/// Smallest calibration size whose order index does not run past the sample.
pub fn min_calibration_size(alpha: f64) -> usize {
    ((1.0 - alpha) / alpha - 1e-9).ceil().max(1.0) as usize
}

/// The ⌈(n+1)(1−α)⌉-th smallest residual.
pub fn calibrate(residuals: &[f64], alpha: f64) -> Result<ConformalQuantile, ConformalError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::InvalidAlpha(alpha));
    }
    if let Some(&bad) = residuals.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(ConformalError::InvalidResidual(bad));
    }
    let n = residuals.len();
    let need = min_calibration_size(alpha);
    if n < need || n == 0 {
        return Err(ConformalError::TooFewResiduals { need, got: n });
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    // tolerance keeps e.g. 100 * 0.9 from rounding up to 91
    let index = (((n + 1) as f64) * (1.0 - alpha) - 1e-9).ceil().max(1.0) as usize;
    let diagnostic = (index >= n).then(|| {
        format!("order index {index} reaches the sample size {n}; using the maximum residual")
    });
    if let Some(d) = &diagnostic {
        log::warn!("conformal: {d}");
    }
    Ok(ConformalQuantile { q: sorted[index.min(n) - 1], n, index, diagnostic })
}

/// Fitted split-conformal half-widths, globally and per stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalModel {
    pub alpha: f64,
    pub global_q: f64,
    /// Only strata that met the sample floor.
    pub per_stratum_q: BTreeMap<String, f64>,
    pub min_stratum_count: usize,
    /// Calibration residual count for every stratum seen, including those below the floor.
    pub calibration_n: BTreeMap<String, usize>,
    pub global_n: usize,
    /// Unknown strata use `global_q` when true, otherwise they are an error.
    pub fallback_to_global: bool,
    pub diagnostics: Vec<String>,
}

impl ConformalModel {
    /// Model with a single global quantile.
    pub fn global(residuals: &[f64], alpha: f64) -> Result<ConformalModel, ConformalError> {
        let fit = calibrate(residuals, alpha)?;
        Ok(ConformalModel {
            alpha,
            global_q: fit.q,
            per_stratum_q: BTreeMap::new(),
            min_stratum_count: usize::MAX,
            calibration_n: BTreeMap::new(),
            global_n: fit.n,
            fallback_to_global: true,
            diagnostics: fit.diagnostic.into_iter().collect(),
        })
    }

    /// Half-width for a stratum; `None` selects the global quantile.
    pub fn q_for(&self, stratum: Option<&str>) -> Result<f64, ConformalError> {
        let Some(s) = stratum else { return Ok(self.global_q) };
        if let Some(q) = self.per_stratum_q.get(s) {
            return Ok(*q);
        }
        if self.calibration_n.contains_key(s) || self.fallback_to_global {
            Ok(self.global_q)
        } else {
            Err(ConformalError::UnknownStratum(s.to_string()))
        }
    }

    pub fn predict_interval(&self, yhat: f64, stratum: Option<&str>, floor_at_zero: bool) -> Result<Interval, ConformalError> {
        let q = self.q_for(stratum)?;
        Ok(Interval::symmetric(yhat, q, floor_at_zero))
    }
}

/// Global quantile plus one per stratum with at least `min_count` residuals.
pub fn calibrate_stratified<S: AsRef<str>>(
    residuals: &[f64],
    strata: &[S],
    alpha: f64,
    min_count: usize,
) -> Result<ConformalModel, ConformalError> {
    if residuals.len() != strata.len() {
        return Err(ConformalError::LengthMismatch(residuals.len(), strata.len()));
    }
    let mut model = ConformalModel::global(residuals, alpha)?;
    model.min_stratum_count = min_count;
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (r, s) in residuals.iter().zip(strata) {
        groups.entry(s.as_ref()).or_default().push(*r);
    }
    for (s, rs) in groups {
        model.calibration_n.insert(s.to_string(), rs.len());
        if rs.len() < min_count {
            model.diagnostics.push(format!("stratum {s}: {} residuals below floor {min_count}, using global quantile", rs.len()));
            continue;
        }
        match calibrate(&rs, alpha) {
            Ok(fit) => {
                if let Some(d) = fit.diagnostic {
                    model.diagnostics.push(format!("stratum {s}: {d}"));
                }
                model.per_stratum_q.insert(s.to_string(), fit.q);
            }
            Err(ConformalError::TooFewResiduals { .. }) => {
                model.diagnostics.push(format!("stratum {s}: too few residuals for alpha, using global quantile"));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// Lower bound was raised to zero.
    pub floored: bool,
}

impl Interval {
    pub fn symmetric(center: f64, half_width: f64, floor_at_zero: bool) -> Interval {
        let lower = center - half_width;
        let floored = floor_at_zero && lower < 0.0;
        Interval { lower: if floored { 0.0 } else { lower }, upper: center + half_width, floored }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

/// Coverage and sharpness of a set of intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub stratum: String,
    pub n: usize,
    pub picp: f64,
    pub mpiw: f64,
    /// `None` when the evaluation targets are constant.
    pub pinaw: Option<f64>,
    pub mpiw_rank: Option<f64>,
    pub pinaw_rank: Option<f64>,
    pub mean_rank: Option<f64>,
}

fn report(label: &str, y: &[f64], intervals: &[Interval]) -> IntervalReport {
    let n = y.len();
    let covered = y.iter().zip(intervals).filter(|(v, i)| i.contains(**v)).count();
    let mpiw = intervals.iter().map(Interval::width).sum::<f64>() / n as f64;
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    IntervalReport {
        stratum: label.to_string(),
        n,
        picp: covered as f64 / n as f64,
        mpiw,
        pinaw: (hi > lo).then(|| mpiw / (hi - lo)),
        mpiw_rank: None,
        pinaw_rank: None,
        mean_rank: None,
    }
}

/// PICP, MPIW and PINAW with the range taken from `y`.
pub fn evaluate_intervals(y: &[f64], intervals: &[Interval]) -> Result<IntervalReport, ConformalError> {
    if y.len() != intervals.len() {
        return Err(ConformalError::LengthMismatch(y.len(), intervals.len()));
    }
    if y.is_empty() {
        return Err(ConformalError::Empty);
    }
    let r = report("all", y, intervals);
    if r.pinaw.is_none() {
        return Err(ConformalError::ZeroRange);
    }
    Ok(r)
}

/// 1-based ascending ranks; ties share their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// One report per stratum (range taken within the stratum), ranked by MPIW and PINAW.
pub fn evaluate_intervals_stratified<S: AsRef<str>>(
    y: &[f64],
    intervals: &[Interval],
    strata: &[S],
) -> Result<Vec<IntervalReport>, ConformalError> {
    if y.len() != intervals.len() {
        return Err(ConformalError::LengthMismatch(y.len(), intervals.len()));
    }
    if y.len() != strata.len() {
        return Err(ConformalError::LengthMismatch(y.len(), strata.len()));
    }
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<Interval>)> = BTreeMap::new();
    for ((v, i), s) in y.iter().zip(intervals).zip(strata) {
        let g = groups.entry(s.as_ref()).or_default();
        g.0.push(*v);
        g.1.push(*i);
    }
    let mut rows: Vec<IntervalReport> = groups.iter().map(|(s, (gy, gi))| report(s, gy, gi)).collect();
    let mpiw_ranks = average_ranks(&rows.iter().map(|r| r.mpiw).collect::<Vec<_>>());
    let ranked: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].pinaw.is_some()).collect();
    let pinaw_ranks = average_ranks(&ranked.iter().map(|&i| rows[i].pinaw.unwrap()).collect::<Vec<_>>());
    for (i, row) in rows.iter_mut().enumerate() {
        row.mpiw_rank = Some(mpiw_ranks[i]);
    }
    for (k, &i) in ranked.iter().enumerate() {
        rows[i].pinaw_rank = Some(pinaw_ranks[k]);
        rows[i].mean_rank = Some((mpiw_ranks[i] + pinaw_ranks[k]) / 2.0);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn zero_residuals_give_zero_quantile() {
        assert_eq!(calibrate(&[0.0; 50], 0.1).unwrap().q, 0.0);
    }

    #[test]
    fn order_statistic_by_hand() {
        let r: Vec<f64> = (1..=99).map(f64::from).collect();
        let fit = calibrate(&r, 0.1).unwrap();
        assert_eq!((fit.index, fit.q), (90, 90.0));
        assert!(fit.diagnostic.is_none());
    }

    #[test]
    fn boundary_uses_max_with_diagnostic() {
        let r = [0.3, 0.1, 0.9, 0.5, 0.2, 0.8, 0.4, 0.7, 0.6];
        let fit = calibrate(&r, 0.1).unwrap();
        assert_eq!((fit.index, fit.q), (9, 0.9));
        assert!(fit.diagnostic.is_some());
        assert_eq!(calibrate(&r[..8], 0.1), Err(ConformalError::TooFewResiduals { need: 9, got: 8 }));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(calibrate(&[1.0; 20], 0.0), Err(ConformalError::InvalidAlpha(0.0)));
        assert_eq!(calibrate(&[1.0, -1.0], 0.5), Err(ConformalError::InvalidResidual(-1.0)));
    }

    #[test]
    fn single_stratum_matches_global() {
        let r: Vec<f64> = (0..150).map(|i| i as f64 * 0.1).collect();
        let m = calibrate_stratified(&r, &vec!["A"; 150], 0.1, 100).unwrap();
        assert_eq!(m.per_stratum_q, BTreeMap::from([("A".to_string(), m.global_q)]));
    }

    #[test]
    fn small_stratum_falls_back() {
        let mut r: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let mut s = vec!["big"; 200];
        r.extend([1000.0; 10]);
        s.extend(["small"; 10]);
        let m = calibrate_stratified(&r, &s, 0.1, 100).unwrap();
        assert!(!m.per_stratum_q.contains_key("small"));
        assert_eq!(m.q_for(Some("small")).unwrap(), m.global_q);
        assert_eq!(m.calibration_n["small"], 10);
    }

    #[test]
    fn unknown_stratum_needs_fallback() {
        let mut m = ConformalModel::global(&[1.0; 20], 0.1).unwrap();
        assert_eq!(m.q_for(Some("X")).unwrap(), 1.0);
        m.fallback_to_global = false;
        assert_eq!(m.q_for(Some("X")), Err(ConformalError::UnknownStratum("X".into())));
    }

    #[test]
    fn scale_ratio_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut r = Vec::new();
        let mut s = Vec::new();
        for (label, scale) in [("a", 1.0), ("b", 3.0)] {
            for _ in 0..1000 {
                r.push(scale * f64::abs(normal.sample(&mut rng)));
                s.push(label);
            }
        }
        let m = calibrate_stratified(&r, &s, 0.1, 100).unwrap();
        let ratio = m.per_stratum_q["b"] / m.per_stratum_q["a"];
        assert!((ratio - 3.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn interval_shapes() {
        let m = ConformalModel::global(&[0.0; 20], 0.1).unwrap();
        let i = m.predict_interval(4.0, None, true).unwrap();
        assert_eq!((i.lower, i.upper), (4.0, 4.0));
        let i = Interval::symmetric(10.0, 24.65, true);
        assert_eq!((i.lower, i.upper, i.floored), (0.0, 34.65, true));
        let i = Interval::symmetric(10.0, 2.5, true);
        assert_eq!(i.width(), 5.0);
        assert!(!i.floored);
    }

    #[test]
    fn coverage_arithmetic() {
        let iv = |l, u| Interval { lower: l, upper: u, floored: false };
        let r = evaluate_intervals(&[1.0, 2.0], &[iv(0.0, 1.5), iv(3.0, 4.0)]).unwrap();
        assert_eq!((r.picp, r.mpiw, r.pinaw), (0.5, 1.25, Some(1.25)));
        let wide = vec![iv(-1e12, 1e12); 3];
        assert_eq!(evaluate_intervals(&[1.0, 5.0, 3.0], &wide).unwrap().picp, 1.0);
        assert_eq!(evaluate_intervals(&[2.0, 2.0], &wide[..2]), Err(ConformalError::ZeroRange));
    }

    #[test]
    fn stratified_rows_are_ranked() {
        let iv = |w: f64| Interval { lower: 0.0, upper: w, floored: false };
        let y = [0.0, 1.0, 0.0, 1.0, 0.0, 4.0];
        let ints = [iv(1.0), iv(1.0), iv(3.0), iv(3.0), iv(2.0), iv(2.0)];
        let rows = evaluate_intervals_stratified(&y, &ints, &["a", "a", "b", "b", "c", "c"]).unwrap();
        let get = |s: &str| rows.iter().find(|r| r.stratum == s).unwrap();
        assert_eq!(get("a").mpiw_rank, Some(1.0));
        assert_eq!(get("b").mpiw_rank, Some(3.0));
        // PINAW: a = 1, b = 3, c = 0.5
        assert_eq!(get("c").pinaw_rank, Some(1.0));
        assert_eq!(get("c").mean_rank, Some(1.5));
    }

    #[test]
    fn ties_share_average_rank() {
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    proptest! {
        #[test]
        fn smaller_alpha_never_shrinks_q(r in prop::collection::vec(0.0..10.0f64, 50..200), a in 0.05..0.5f64, b in 0.05..0.5f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(calibrate(&r, lo).unwrap().q >= calibrate(&r, hi).unwrap().q);
        }

        #[test]
        fn shift_leaves_scores_unchanged(pairs in prop::collection::vec((0.0..10.0f64, 0.0..10.0f64), 20..80), c in -50.0..50.0f64) {
            let (y, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            prop_assume!(y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) > y.iter().cloned().fold(f64::INFINITY, f64::min));
            let q = 1.5;
            let ints: Vec<Interval> = p.iter().map(|&v| Interval::symmetric(v, q, false)).collect();
            let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
            let shifted: Vec<Interval> = p.iter().map(|&v| Interval::symmetric(v + c, q, false)).collect();
            let a = evaluate_intervals(&y, &ints).unwrap();
            let b = evaluate_intervals(&ys, &shifted).unwrap();
            prop_assert!((a.mpiw - b.mpiw).abs() < 1e-9);
            prop_assert!((a.pinaw.unwrap() - b.pinaw.unwrap()).abs() < 1e-9);
            // boundary cases may flip under rounding; allow one sample
            prop_assert!((a.picp - b.picp).abs() <= 1.0 / y.len() as f64 + 1e-12);
        }
    }
}
