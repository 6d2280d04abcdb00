//! Synthetic counterfactual generation and the counterfactual datasets.
//!
//! Two generators are provided. [`cfa`] adapts a probe case with the
//! difference features of its nearest native counterfactual pair.
//! [`perturb`] draws Gaussian perturbations of the probe's weather, keeps
//! the ones that cross the outlier boundary and selects a close but diverse
//! subset. [`datasets`] assembles equal-size datasets from both generators
//! and from the native pairs themselves.

pub mod cfa;
pub mod datasets;
pub mod perturb;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mining::MiningConfig;
use crate::model::{Case, Feature, FeatureSet};

pub use cfa::{cfa_generate, CfaBatch, CfaOutcome, RejectReason};
pub use datasets::{build_experiment2_datasets, CfDataset, DatasetDiagnostics, Experiment2Datasets};
pub use perturb::{perturb_generate, select_diverse, selection_score, PerturbGenerator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Native,
    Perturb,
    Cfa,
}

impl Generator {
    pub const ALL: [Generator; 3] = [Generator::Native, Generator::Perturb, Generator::Cfa];

    pub fn name(self) -> &'static str {
        match self {
            Generator::Native => "native",
            Generator::Perturb => "perturb",
            Generator::Cfa => "cfa",
        }
    }

    /// Condition label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Generator::Native => "Native-CF",
            Generator::Perturb => "PERTURB",
            Generator::Cfa => "CFA",
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Generator::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// How the growth target of a synthetic case is derived.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPolicy {
    /// Growth of the counterfactual case x′.
    #[default]
    Copy,
    /// Probe growth shifted by the pair's growth change, `p + (x′ − x)`.
    Delta,
    /// Mean growth of the nearest real outlier cases.
    Impute,
}

impl TargetPolicy {
    pub fn name(self) -> &'static str {
        match self {
            TargetPolicy::Copy => "copy",
            TargetPolicy::Delta => "delta",
            TargetPolicy::Impute => "impute",
        }
    }
}

impl FromStr for TargetPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TargetPolicy::Copy),
            "delta" => Ok(TargetPolicy::Delta),
            "impute" => Ok(TargetPolicy::Impute),
            _ => Err(Error::Config(format!("unknown target policy `{s}`"))),
        }
    }
}

/// Where a case of a counterfactual dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: Generator,
    pub source_probe_id: Option<String>,
    pub source_normal_id: Option<String>,
    pub source_outlier_id: Option<String>,
    /// Difference features of the source pair (CFA only).
    pub diff_features: FeatureSet,
    /// Features whose values were taken from somewhere other than the probe.
    pub transferred: FeatureSet,
    pub target_policy: Option<TargetPolicy>,
}

impl Provenance {
    pub fn native() -> Self {
        Provenance {
            generator: Generator::Native,
            source_probe_id: None,
            source_normal_id: None,
            source_outlier_id: None,
            diff_features: FeatureSet::EMPTY,
            transferred: FeatureSet::EMPTY,
            target_policy: None,
        }
    }
}

/// A member of a counterfactual dataset with its provenance. Native members
/// are real cases; the others are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCase {
    pub case: Case,
    pub provenance: Provenance,
}

/// Namespaced id for generated cases: `syn:<generator>:<probe_id>:<n>`.
pub fn synthetic_id(generator: Generator, probe_id: &str, n: usize) -> String {
    format!("syn:{}:{}:{}", generator.name(), probe_id, n)
}

pub const PROVENANCE_HEADER: [&str; 8] = [
    "case_id",
    "generator",
    "source_probe_id",
    "source_normal_id",
    "source_outlier_id",
    "diff_features",
    "transferred_features",
    "target_policy",
];

pub fn write_provenance<'a, W: Write, I: IntoIterator<Item = &'a SyntheticCase>>(
    writer: W,
    cases: I,
) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(PROVENANCE_HEADER)?;
    for s in cases {
        let p = &s.provenance;
        wtr.write_record([
            s.case.case_id.as_str(),
            p.generator.name(),
            p.source_probe_id.as_deref().unwrap_or(""),
            p.source_normal_id.as_deref().unwrap_or(""),
            p.source_outlier_id.as_deref().unwrap_or(""),
            &p.diff_features.to_string(),
            &p.transferred.to_string(),
            p.target_policy.map_or("", TargetPolicy::name),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_provenance_csv<'a, I: IntoIterator<Item = &'a SyntheticCase>>(
    path: impl AsRef<Path>,
    cases: I,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_provenance(std::io::BufWriter::new(file), cases).map_err(|e| Error::csv(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    /// Perturbations drawn per probe.
    pub samples: usize,
    /// λ1, weight on mean distance to the probe.
    pub proximity_weight: f64,
    /// λ2, weight on mean pairwise distance inside the selected set.
    pub diversity_weight: f64,
    /// Perturbation sd as a multiple of the feature's training sd.
    pub scale: f64,
    pub scale_overrides: BTreeMap<Feature, f64>,
    /// Size m of the selected set per probe.
    pub select: usize,
    /// Real outlier cases averaged for the imputed growth target.
    pub impute_neighbors: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            samples: 40,
            proximity_weight: 1.0,
            diversity_weight: 0.5,
            scale: 1.0,
            scale_overrides: BTreeMap::new(),
            select: 4,
            impute_neighbors: 5,
        }
    }
}

impl PerturbConfig {
    pub fn scale_for(&self, feature: Feature) -> f64 {
        self.scale_overrides.get(&feature).copied().unwrap_or(self.scale)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("proximity_weight", self.proximity_weight)?;
        nonneg("diversity_weight", self.diversity_weight)?;
        nonneg("scale", self.scale)?;
        for v in self.scale_overrides.values() {
            nonneg("scale", *v)?;
        }
        for (name, v) in [
            ("samples", self.samples),
            ("select", self.select),
            ("impute_neighbors", self.impute_neighbors),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Growth policy for CFA (`copy` or `delta`). The perturbation baseline
    /// always imputes.
    pub target_policy: TargetPolicy,
    pub mining: MiningConfig,
    pub perturb: PerturbConfig,
    /// Dataset size N.
    pub n: usize,
    /// Random selections S.
    pub selections: usize,
    pub seed: u64,
    /// Skip the probe itself when it is an indexed normal case.
    pub exclude_probe_from_index: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            target_policy: TargetPolicy::Copy,
            mining: MiningConfig::default(),
            perturb: PerturbConfig::default(),
            n: 2500,
            selections: 5,
            seed: 42,
            exclude_probe_from_index: true,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        self.mining.validate()?;
        self.perturb.validate()?;
        if self.n == 0 {
            return Err(Error::Config("n must be > 0".into()));
        }
        if self.selections == 0 {
            return Err(Error::Config("selections must be >= 1".into()));
        }
        if self.target_policy == TargetPolicy::Impute {
            return Err(Error::Config("CFA target policy must be copy or delta".into()));
        }
        Ok(())
    }
}
