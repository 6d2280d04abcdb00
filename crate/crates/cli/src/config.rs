//! Shared pipeline configuration.

use std::path::{Path, PathBuf};

use cfaug_core::augment::{AugmentationConfig, PerturbConfig, TargetPolicy};
use cfaug_core::eval::{Expt1aConfig, SolvedBy, StatsMode};
use cfaug_core::{Error, MiningConfig, Result, SchemaConfig, StatsGrouping};
use serde::{Deserialize, Serialize};

/// Every stage reads from this. Relative paths resolve against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Scenario JSON to generate data from. Takes precedence over
    /// `train`/`test`.
    pub scenario: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub k: usize,
    pub k_max: usize,
    pub outlier_z: f64,
    pub stats_mode: StatsMode,
    pub grouping: StatsGrouping,
    pub delta: f64,
    pub max_diff: usize,
    pub target_policy: TargetPolicy,
    pub n: usize,
    pub selections: usize,
    pub seed: u64,
    pub solved_by: SolvedBy,
    pub good_factor: f64,
    pub filter_outliers: bool,
    pub perturb: PerturbConfig,
    pub schema: SchemaConfig,
    pub out: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mining = MiningConfig::default();
        let aug = AugmentationConfig::default();
        PipelineConfig {
            scenario: None,
            train: None,
            test: None,
            k: cfaug_core::knn::DEFAULT_K,
            k_max: 40,
            outlier_z: cfaug_core::boundary::DEFAULT_OUTLIER_Z,
            stats_mode: StatsMode::TrainOnly,
            grouping: StatsGrouping::AcrossYears,
            delta: mining.delta,
            max_diff: mining.max_diff,
            target_policy: aug.target_policy,
            n: aug.n,
            selections: aug.selections,
            seed: aug.seed,
            solved_by: SolvedBy::Majority,
            good_factor: 1.0,
            filter_outliers: false,
            perturb: aug.perturb,
            schema: SchemaConfig::default(),
            out: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.scenario, &mut cfg.train, &mut cfg.test, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be >= 1".into()));
        }
        if !(self.good_factor > 0.0 && self.good_factor.is_finite()) {
            return Err(Error::Config("good_factor must be > 0".into()));
        }
        if !(self.outlier_z.is_finite() && self.outlier_z >= 0.0) {
            return Err(Error::Config("outlier_z must be finite and >= 0".into()));
        }
        self.schema.validate()?;
        self.augmentation(self.target_policy).validate()?;
        Ok(())
    }

    /// Checks that the input paths needed by the run exist.
    pub fn check_inputs(&self, need_test: bool) -> Result<()> {
        let must_exist = |p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{} does not exist", p.display())))
            }
        };
        if let Some(s) = &self.scenario {
            return must_exist(s);
        }
        match &self.train {
            Some(t) => must_exist(t)?,
            None => return Err(Error::Config("either `scenario` or `train` is required".into())),
        }
        match (&self.test, need_test) {
            (Some(t), _) => must_exist(t),
            (None, true) => Err(Error::Config("`test` is required".into())),
            (None, false) => Ok(()),
        }
    }

    pub fn mining(&self) -> MiningConfig {
        MiningConfig {
            delta: self.delta,
            max_diff: self.max_diff,
            ..MiningConfig::default()
        }
    }

    pub fn augmentation(&self, target_policy: TargetPolicy) -> AugmentationConfig {
        AugmentationConfig {
            target_policy,
            mining: self.mining(),
            perturb: self.perturb.clone(),
            n: self.n,
            selections: self.selections,
            seed: self.seed,
            ..AugmentationConfig::default()
        }
    }

    pub fn expt1a(&self) -> Expt1aConfig {
        Expt1aConfig {
            k: self.k,
            solved_by: self.solved_by,
            good_factor: self.good_factor,
            filter_outliers: self.filter_outliers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn zero_k_is_rejected() {
        let cfg = PipelineConfig { k: 0, ..Default::default() };
        assert!(cfg.validate().unwrap_err().is_validation());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(&path, r#"{"scenario": "s.json", "k": 5}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.scenario.unwrap(), dir.path().join("s.json"));
        assert_eq!(cfg.k, 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(&path, r#"{"kk": 5}"#).unwrap();
        assert!(PipelineConfig::load(&path).is_err());
    }
}
