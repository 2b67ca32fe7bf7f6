//! Run configuration: a TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use geoeval_core::data::{ColumnSchema, TargetConstraint};
use geoeval_core::featsel::FeatselConfig;
use geoeval_core::model::{GbrtParams, Transform};
use geoeval_core::synth::SynthConfig;

use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "GEOEVAL_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "geoeval-out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    /// Column renames; targets come from the top-level `targets` list.
    #[serde(default)]
    pub columns: ColumnSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory; every random stream is derived from it.
    pub seed: Option<u64>,
    /// Not echoed into reports so that runs into different directories compare equal.
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    pub input: Option<InputConfig>,
    pub synth: Option<SynthConfig>,
    /// Defaults to the synthetic target; required with `input`.
    pub targets: Vec<String>,
    pub block_km: f64,
    pub k: usize,
    /// Share of blocks held out as the independent test set; 0 disables it.
    pub test_fraction: f64,
    pub alpha: f64,
    pub stratified_conformal: bool,
    pub conformal_min_count: usize,
    pub calibrate_by_stratum: bool,
    pub calibration_min_count: usize,
    pub floor_intervals: bool,
    pub select_features: bool,
    pub min_labeled: usize,
    pub unstable_floor: usize,
    pub featsel: FeatselConfig,
    pub gbrt: GbrtParams,
    /// Per-target transform; default log1p for non-negative targets, identity otherwise.
    pub transforms: BTreeMap<String, Transform>,
    /// Stratum to super-class map for aggregated rows.
    pub superclasses: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            output_dir: None,
            input: None,
            synth: None,
            targets: Vec::new(),
            block_km: 100.0,
            k: 5,
            test_fraction: 0.2,
            alpha: 0.10,
            stratified_conformal: true,
            conformal_min_count: 100,
            calibrate_by_stratum: true,
            calibration_min_count: 30,
            floor_intervals: true,
            select_features: true,
            min_labeled: 100,
            unstable_floor: 10,
            featsel: FeatselConfig::default(),
            gbrt: GbrtParams::default(),
            transforms: BTreeMap::new(),
            superclasses: BTreeMap::new(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub k: Option<usize>,
    pub block_km: Option<f64>,
    pub alpha: Option<f64>,
    pub test_fraction: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, CliError> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| text[s].trim().to_string()).filter(|s| !s.is_empty() && s.len() < 60);
            CliError::config(field.as_deref().unwrap_or("config"), e.message().to_string())
        })
    }

    /// Reads a config file; a relative input path is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        if let Some(input) = cfg.input.as_mut() {
            if input.path.is_relative() {
                if let Some(dir) = path.parent() {
                    input.path = dir.join(&input.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = Some(v);
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = Some(v.clone());
        }
        if let Some(v) = o.k {
            self.k = v;
        }
        if let Some(v) = o.block_km {
            self.block_km = v;
        }
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = o.test_fraction {
            self.test_fraction = v;
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::config("seed", "a seed is required"))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.seed()?;
        match (&self.input, &self.synth) {
            (None, None) => return Err(CliError::config("input", "either [input] or [synth] must be given")),
            (Some(_), Some(_)) => return Err(CliError::config("input", "[input] and [synth] are mutually exclusive")),
            (Some(_), None) if self.targets.is_empty() => {
                return Err(CliError::config("targets", "required when reading an input file"))
            }
            _ => {}
        }
        if self.k < 2 {
            return Err(CliError::config("k", format!("must be at least 2, got {}", self.k)));
        }
        if !(self.block_km > 0.0 && self.block_km.is_finite()) {
            return Err(CliError::config("block_km", "must be positive"));
        }
        if !(self.test_fraction == 0.0 || (self.test_fraction > 0.0 && self.test_fraction < 0.5)) {
            return Err(CliError::config("test_fraction", "must be 0 or lie in (0, 0.5)"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::config("alpha", "must lie in (0, 1)"));
        }
        if !(self.featsel.correlation_threshold > 0.0 && self.featsel.correlation_threshold <= 1.0) {
            return Err(CliError::config("featsel.correlation_threshold", "must lie in (0, 1]"));
        }
        let st = &self.featsel.stability;
        if st.iterations == 0 {
            return Err(CliError::config("featsel.stability.iterations", "must be positive"));
        }
        if !(st.subsample > 0.0 && st.subsample <= 1.0) {
            return Err(CliError::config("featsel.stability.subsample", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&st.threshold) {
            return Err(CliError::config("featsel.stability.threshold", "must lie in [0, 1]"));
        }
        self.gbrt.validate().map_err(|e| CliError::config("gbrt", e.to_string()))?;
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        Ok(())
    }

    pub fn target_names(&self) -> Vec<String> {
        if !self.targets.is_empty() {
            return self.targets.clone();
        }
        self.synth.as_ref().map(|s| vec![s.target_name.clone()]).unwrap_or_default()
    }

    pub fn transform_for(&self, target: &str) -> Transform {
        self.transforms.get(target).copied().unwrap_or(match TargetConstraint::for_target(target) {
            TargetConstraint::NonNegative => Transform::Log1p,
            _ => Transform::Identity,
        })
    }

    /// Flag, then config file, then environment, then the built-in default.
    pub fn resolve_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_keys() {
        let cfg = RunConfig::from_toml("seed = 3\n[synth]\nn_samples = 50\n").unwrap();
        assert_eq!((cfg.k, cfg.block_km, cfg.alpha), (5, 100.0, 0.10));
        assert_eq!(cfg.featsel.stability.iterations, 64);
        assert_eq!(cfg.synth.unwrap().n_samples, 50);
    }

    #[test]
    fn k_one_names_the_field() {
        let cfg = RunConfig::from_toml("seed = 3\nk = 1\n[synth]\n").unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("`k`"), "{err}");
    }

    #[test]
    fn seed_is_mandatory() {
        let err = RunConfig::from_toml("[synth]\n").unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("`seed`"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("seed = 1\nfolds = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::from_toml("seed = 1\nk = 4\n").unwrap();
        cfg.apply(&Overrides { k: Some(7), seed: Some(9), ..Overrides::default() });
        assert_eq!((cfg.k, cfg.seed), (7, Some(9)));
    }

    #[test]
    fn transform_defaults_follow_target_constraint() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.transform_for("SOC"), Transform::Log1p);
        assert_eq!(cfg.transform_for("pH"), Transform::Identity);
    }
}
