//! Canonical sample model, delimited-text ingestion and summary statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantile::quantile_type7;

/// Sampling depth class of an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DepthClass {
    #[serde(rename = "0-30")]
    D0_30,
    #[serde(rename = "30-60")]
    D30_60,
    #[serde(rename = "60+")]
    D60Plus,
}

impl DepthClass {
    pub const ALL: [DepthClass; 3] = [DepthClass::D0_30, DepthClass::D30_60, DepthClass::D60Plus];

    pub fn token(self) -> &'static str {
        match self {
            DepthClass::D0_30 => "0-30",
            DepthClass::D30_60 => "30-60",
            DepthClass::D60Plus => "60+",
        }
    }
}

impl fmt::Display for DepthClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for DepthClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "0-30" => Ok(DepthClass::D0_30),
            "30-60" => Ok(DepthClass::D30_60),
            "60+" => Ok(DepthClass::D60Plus),
            other => Err(format!("unknown depth class token {other:?}")),
        }
    }
}

/// Physical constraint attached to a target by its name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetConstraint {
    /// Strictly inside (0, 14).
    Ph,
    NonNegative,
    Unconstrained,
}

impl TargetConstraint {
    /// Known soil targets: pH is bounded, SOC/N/P/K are non-negative.
    pub fn for_target(name: &str) -> Self {
        match name.to_ascii_lowercase().as_str() {
            "ph" => TargetConstraint::Ph,
            "soc" | "n" | "p" | "k" => TargetConstraint::NonNegative,
            _ => TargetConstraint::Unconstrained,
        }
    }

    pub fn admits(self, v: f64) -> bool {
        if !v.is_finite() {
            return false;
        }
        match self {
            TargetConstraint::Ph => v > 0.0 && v < 14.0,
            TargetConstraint::NonNegative => v >= 0.0,
            TargetConstraint::Unconstrained => true,
        }
    }
}

/// One georeferenced soil observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub year: i32,
    pub depth_class: DepthClass,
    pub stratum: String,
    pub targets: BTreeMap<String, Option<f64>>,
    pub covariates: Vec<f64>,
}

impl SampleRecord {
    pub fn target(&self, name: &str) -> Option<f64> {
        self.targets.get(name).copied().flatten()
    }

    pub fn coord(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("malformed delimited text: {0}")]
    Csv(String),
    #[error("missing required column {column:?}")]
    MissingColumn { column: String },
    #[error("duplicate sample ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("covariate width mismatch: record {id:?} has {got} values, expected {expected}")]
    WidthMismatch { id: String, expected: usize, got: usize },
    #[error("{} row(s) rejected, first: {}", .0.len(), .0[0])]
    RejectedRows(Vec<RowDiagnostic>),
    #[error("dataset is empty")]
    Empty,
    #[error("invalid record {id:?}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("unknown target {0:?}")]
    UnknownTarget(String),
}

/// Why a single input row was rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub column: String,
    pub message: String,
}

impl fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}, column {:?}: {}", self.row, self.column, self.message)
    }
}

/// Maps file columns onto the record model.
///
/// Required columns keep their canonical names unless renamed here. When
/// `covariates` is `None`, every column that is neither required nor a target
/// is treated as a covariate, in file order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub id: Option<String>,
    pub lat: Option<String>,
    pub lon: Option<String>,
    pub year: Option<String>,
    pub depth_class: Option<String>,
    pub stratum: Option<String>,
    pub targets: Vec<String>,
    pub covariates: Option<Vec<String>>,
}

impl ColumnSchema {
    pub fn with_targets<S: Into<String>>(targets: impl IntoIterator<Item = S>) -> Self {
        ColumnSchema { targets: targets.into_iter().map(Into::into).collect(), ..Default::default() }
    }

    fn required(&self) -> [(&'static str, String); 6] {
        let pick = |o: &Option<String>, d: &str| o.clone().unwrap_or_else(|| d.to_string());
        [
            ("id", pick(&self.id, "id")),
            ("lat", pick(&self.lat, "lat")),
            ("lon", pick(&self.lon, "lon")),
            ("year", pick(&self.year, "year")),
            ("depth_class", pick(&self.depth_class, "depth_class")),
            ("stratum", pick(&self.stratum, "stratum")),
        ]
    }
}

/// Ordered collection of records sharing one covariate layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, checking width, id uniqueness and record invariants.
    pub fn new(
        records: Vec<SampleRecord>,
        feature_names: Vec<String>,
        target_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let width = feature_names.len();
        let mut seen = HashSet::new();
        let mut dups = Vec::new();
        for r in &records {
            if r.covariates.len() != width {
                return Err(DataError::WidthMismatch {
                    id: r.id.clone(),
                    expected: width,
                    got: r.covariates.len(),
                });
            }
            if let Err(reason) = check_record(r) {
                return Err(DataError::InvalidRecord { id: r.id.clone(), reason });
            }
            if !seen.insert(r.id.as_str()) && !dups.contains(&r.id) {
                dups.push(r.id.clone());
            }
        }
        if !dups.is_empty() {
            return Err(DataError::DuplicateIds(dups));
        }
        Ok(Dataset { records, feature_names, target_names })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    /// Indices of records with a value for `target`.
    pub fn labeled_indices(&self, target: &str) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.target(target).is_some())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn has_target(&self, target: &str) -> bool {
        self.target_names.iter().any(|t| t == target)
    }

    /// Row-major covariate matrix restricted to `rows`.
    pub fn matrix(&self, rows: &[usize]) -> crate::Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.width());
        for &i in rows {
            data.extend_from_slice(&self.records[i].covariates);
        }
        crate::Matrix::from_row_major(rows.len(), self.width(), data)
    }

    /// Target values at `rows`; panics if any is missing.
    pub fn target_values(&self, target: &str, rows: &[usize]) -> Vec<f64> {
        rows.iter()
            .map(|&i| self.records[i].target(target).expect("row without target value"))
            .collect()
    }
}

fn check_record(r: &SampleRecord) -> Result<(), String> {
    if !(-90.0..=90.0).contains(&r.lat) {
        return Err(format!("latitude {} outside [-90, 90]", r.lat));
    }
    if !(-180.0..=180.0).contains(&r.lon) {
        return Err(format!("longitude {} outside [-180, 180]", r.lon));
    }
    if let Some(i) = r.covariates.iter().position(|v| !v.is_finite()) {
        return Err(format!("covariate {i} is not finite"));
    }
    for (name, v) in &r.targets {
        if let Some(v) = v {
            if !TargetConstraint::for_target(name).admits(*v) {
                return Err(format!("target {name} value {v} violates its physical range"));
            }
        }
    }
    Ok(())
}

/// Result of a tolerant load: accepted dataset plus rejected-row diagnostics.
#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub dataset: Dataset,
    pub rejected: Vec<RowDiagnostic>,
}

/// Loads a comma-delimited file with a header row.
pub fn load_dataset(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<LoadOutcome, DataError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| DataError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_dataset(file, schema)
}

/// Reader-based variant of [`load_dataset`].
pub fn read_dataset<R: Read>(reader: R, schema: &ColumnSchema) -> Result<LoadOutcome, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn { column: name.to_string() })
    };

    let required = schema.required();
    let mut req_idx = [0usize; 6];
    for (slot, (_, name)) in req_idx.iter_mut().zip(required.iter()) {
        *slot = col(name)?;
    }
    let target_idx: Vec<(String, usize)> = schema
        .targets
        .iter()
        .map(|t| col(t).map(|i| (t.clone(), i)))
        .collect::<Result<_, _>>()?;
    let cov_names: Vec<String> = match &schema.covariates {
        Some(c) => c.clone(),
        None => {
            let taken: HashSet<usize> =
                req_idx.iter().copied().chain(target_idx.iter().map(|(_, i)| *i)).collect();
            headers
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken.contains(i))
                .map(|(_, h)| h.clone())
                .collect()
        }
    };
    let cov_idx: Vec<usize> = cov_names.iter().map(|c| col(c)).collect::<Result<_, _>>()?;

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut first_row_of: HashMap<String, usize> = HashMap::new();
    let mut dups: Vec<String> = Vec::new();

    for (ri, row) in rdr.records().enumerate() {
        let row_no = ri + 1;
        let row = row.map_err(|e| DataError::Csv(format!("row {row_no}: {e}")))?;
        let cell = |i: usize| row.get(i).unwrap_or("").trim();
        let reject = |column: &str, message: String| RowDiagnostic {
            row: row_no,
            column: column.to_string(),
            message,
        };
        match parse_row(&cell, &required, &req_idx, &target_idx, &cov_names, &cov_idx, reject) {
            Ok(rec) => {
                if first_row_of.insert(rec.id.clone(), row_no).is_some() && !dups.contains(&rec.id) {
                    dups.push(rec.id.clone());
                }
                records.push(rec);
            }
            Err(diag) => {
                log::warn!("rejected {diag}");
                rejected.push(diag);
            }
        }
    }
    if !dups.is_empty() {
        return Err(DataError::DuplicateIds(dups));
    }
    let dataset = Dataset::new(records, cov_names, schema.targets.clone())?;
    Ok(LoadOutcome { dataset, rejected })
}

#[allow(clippy::too_many_arguments)]
fn parse_row<'a>(
    cell: &dyn Fn(usize) -> &'a str,
    required: &[(&'static str, String); 6],
    req_idx: &[usize; 6],
    target_idx: &[(String, usize)],
    cov_names: &[String],
    cov_idx: &[usize],
    reject: impl Fn(&str, String) -> RowDiagnostic,
) -> Result<SampleRecord, RowDiagnostic> {
    let id = cell(req_idx[0]).to_string();
    if id.is_empty() {
        return Err(reject(&required[0].1, "empty id".into()));
    }
    let num = |k: usize| -> Result<f64, RowDiagnostic> {
        let raw = cell(req_idx[k]);
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| reject(&required[k].1, format!("not a finite number: {raw:?}")))
    };
    let lat = num(1)?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(reject(&required[1].1, format!("latitude {lat} outside [-90, 90]")));
    }
    let lon = num(2)?;
    if !(-180.0..=180.0).contains(&lon) {
        return Err(reject(&required[2].1, format!("longitude {lon} outside [-180, 180]")));
    }
    let year_raw = cell(req_idx[3]);
    let year = year_raw
        .parse::<i32>()
        .map_err(|_| reject(&required[3].1, format!("not an integer year: {year_raw:?}")))?;
    let depth_class = cell(req_idx[4]).parse::<DepthClass>().map_err(|e| reject(&required[4].1, e))?;
    let stratum = cell(req_idx[5]).to_string();
    if stratum.is_empty() {
        return Err(reject(&required[5].1, "empty stratum".into()));
    }

    let mut targets = BTreeMap::new();
    for (name, i) in target_idx {
        let raw = cell(*i);
        let v = if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
            None
        } else {
            let v: f64 = raw
                .parse()
                .map_err(|_| reject(name, format!("non-numeric target value {raw:?}")))?;
            if !TargetConstraint::for_target(name).admits(v) {
                return Err(reject(name, format!("value {v} violates the physical range of {name}")));
            }
            Some(v)
        };
        targets.insert(name.clone(), v);
    }

    let mut covariates = Vec::with_capacity(cov_idx.len());
    for (name, &i) in cov_names.iter().zip(cov_idx) {
        let raw = cell(i);
        if raw.is_empty() {
            return Err(reject(name, "missing covariate value".into()));
        }
        let v: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| reject(name, format!("non-numeric covariate value {raw:?}")))?;
        covariates.push(v);
    }

    Ok(SampleRecord { id, lat, lon, year, depth_class, stratum, targets, covariates })
}

/// Writes the dataset in the canonical column layout accepted by [`read_dataset`].
pub fn write_dataset<W: Write>(ds: &Dataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = vec!["id", "lat", "lon", "year", "depth_class", "stratum"];
    header.extend(ds.target_names.iter().map(String::as_str));
    header.extend(ds.feature_names.iter().map(String::as_str));
    w.write_record(&header).map_err(|e| DataError::Csv(e.to_string()))?;
    for r in &ds.records {
        let mut row: Vec<String> = vec![
            r.id.clone(),
            fmt_f64(r.lat),
            fmt_f64(r.lon),
            r.year.to_string(),
            r.depth_class.token().to_string(),
            r.stratum.clone(),
        ];
        for t in &ds.target_names {
            row.push(r.target(t).map(fmt_f64).unwrap_or_default());
        }
        row.extend(r.covariates.iter().copied().map(fmt_f64));
        w.write_record(&row).map_err(|e| DataError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| DataError::Io(e.to_string()))
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path.as_ref())
        .map_err(|e| DataError::Io(format!("{}: {e}", path.as_ref().display())))?;
    write_dataset(ds, std::io::BufWriter::new(file))
}

/// Shortest representation that parses back to the same bits.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Schema matching the layout produced by [`write_dataset`].
pub fn canonical_schema(ds: &Dataset) -> ColumnSchema {
    ColumnSchema {
        targets: ds.target_names.clone(),
        covariates: Some(ds.feature_names.clone()),
        ..Default::default()
    }
}

/// Count, median and interquartile range of a set of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSummary {
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

impl ValueSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile_type7(&v, 0.25);
        let q3 = quantile_type7(&v, 0.75);
        Some(ValueSummary { count: v.len(), median: quantile_type7(&v, 0.5), q1, q3, iqr: q3 - q1 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: String,
    /// `None` when no record carries the target.
    pub overall: Option<ValueSummary>,
    pub missing: usize,
    pub by_stratum: BTreeMap<String, Option<ValueSummary>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_records: usize,
    pub stratum_counts: BTreeMap<String, usize>,
    pub targets: Vec<TargetSummary>,
}

/// Median and IQR per target, overall and per stratum.
pub fn summarize(ds: &Dataset) -> Result<DatasetSummary, DataError> {
    if ds.is_empty() {
        return Err(DataError::Empty);
    }
    let mut stratum_counts = BTreeMap::new();
    for r in &ds.records {
        *stratum_counts.entry(r.stratum.clone()).or_insert(0) += 1;
    }
    let targets = ds
        .target_names
        .iter()
        .map(|t| {
            let mut by: BTreeMap<String, Vec<f64>> =
                stratum_counts.keys().map(|s| (s.clone(), Vec::new())).collect();
            let mut all = Vec::new();
            for r in &ds.records {
                if let Some(v) = r.target(t) {
                    all.push(v);
                    by.get_mut(&r.stratum).expect("stratum key").push(v);
                }
            }
            TargetSummary {
                target: t.clone(),
                overall: ValueSummary::of(&all),
                missing: ds.len() - all.len(),
                by_stratum: by.into_iter().map(|(s, v)| (s, ValueSummary::of(&v))).collect(),
            }
        })
        .collect();
    Ok(DatasetSummary { n_records: ds.len(), stratum_counts, targets })
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_ROWS: &str = "\
id,lat,lon,year,depth_class,stratum,SOC,c1,c2
a,45.0,7.0,2018,0-30,Z1,12.5,0.1,1.0
b,46.0,8.0,2018,30-60,Z1,,0.2,2.0
c,47.0,9.0,2015,60+,Z2,3.0,0.3,3.0
";

    #[test]
    fn loads_three_rows() {
        let out = read_dataset(THREE_ROWS.as_bytes(), &ColumnSchema::with_targets(["SOC"])).unwrap();
        let ds = out.dataset;
        assert!(out.rejected.is_empty());
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.width(), 2);
        assert_eq!(ds.feature_names, vec!["c1", "c2"]);
        assert_eq!(ds.records[1].target("SOC"), None);
        assert_eq!(ds.records[2].depth_class, DepthClass::D60Plus);
        assert_eq!(ds.labeled_indices("SOC"), vec![0, 2]);
    }

    #[test]
    fn rejects_out_of_range_latitude() {
        let text = THREE_ROWS.replace("46.0,8.0", "95.0,8.0");
        let out = read_dataset(text.as_bytes(), &ColumnSchema::with_targets(["SOC"])).unwrap();
        assert_eq!(out.dataset.len(), 2);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].row, 2);
        assert_eq!(out.rejected[0].column, "lat");
    }

    #[test]
    fn duplicate_id_fails() {
        let text = THREE_ROWS.replace("\nc,", "\na,");
        let err = read_dataset(text.as_bytes(), &ColumnSchema::with_targets(["SOC"])).unwrap_err();
        assert_eq!(err, DataError::DuplicateIds(vec!["a".into()]));
    }

    #[test]
    fn missing_column_is_named() {
        let text = THREE_ROWS.replace("stratum", "zone");
        let err = read_dataset(text.as_bytes(), &ColumnSchema::with_targets(["SOC"])).unwrap_err();
        assert_eq!(err, DataError::MissingColumn { column: "stratum".into() });
    }

    #[test]
    fn non_numeric_covariate_rejects_row() {
        let text = THREE_ROWS.replace("0.3,3.0", "abc,3.0");
        let out = read_dataset(text.as_bytes(), &ColumnSchema::with_targets(["SOC"])).unwrap();
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].row, 3);
        assert_eq!(out.rejected[0].column, "c1");
    }

    #[test]
    fn missing_covariate_rejects_row() {
        let text = THREE_ROWS.replace("0.1,1.0", "0.1,");
        let out = read_dataset(text.as_bytes(), &ColumnSchema::with_targets(["SOC"])).unwrap();
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].column, "c2");
    }

    #[test]
    fn negative_soc_rejected() {
        let text = THREE_ROWS.replace(",12.5,", ",-1.0,");
        let out = read_dataset(text.as_bytes(), &ColumnSchema::with_targets(["SOC"])).unwrap();
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].column, "SOC");
    }

    #[test]
    fn renamed_columns_and_explicit_covariates() {
        let text = THREE_ROWS.replace("id,lat", "sample,lat");
        let schema = ColumnSchema {
            id: Some("sample".into()),
            targets: vec!["SOC".into()],
            covariates: Some(vec!["c2".into()]),
            ..Default::default()
        };
        let ds = read_dataset(text.as_bytes(), &schema).unwrap().dataset;
        assert_eq!(ds.width(), 1);
        assert_eq!(ds.records[0].covariates, vec![1.0]);
    }

    #[test]
    fn summary_median_and_iqr() {
        let s = ValueSummary::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.iqr, 1.5);
        let one = ValueSummary::of(&[7.0]).unwrap();
        assert_eq!((one.median, one.iqr), (7.0, 0.0));
    }

    #[test]
    fn summary_partitions_strata() {
        let text = format!("{THREE_ROWS}d,47.0,9.0,2015,60+,Z2,4.0,0.3,3.0\ne,47.0,9.0,2015,60+,Z2,5.0,0.3,3.0\n");
        let ds = read_dataset(text.as_bytes(), &ColumnSchema::with_targets(["SOC"])).unwrap().dataset;
        let s = summarize(&ds).unwrap();
        assert_eq!(s.stratum_counts.values().copied().collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(s.stratum_counts.values().sum::<usize>(), ds.len());
        let soc = &s.targets[0];
        assert_eq!(soc.missing, 1);
        assert_eq!(soc.by_stratum["Z2"].as_ref().unwrap().count, 3);
    }

    #[test]
    fn summarize_empty_fails() {
        let ds = Dataset::new(vec![], vec![], vec![]).unwrap();
        assert_eq!(summarize(&ds).unwrap_err(), DataError::Empty);
    }
}
