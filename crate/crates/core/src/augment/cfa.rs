//! Counterfactual augmentation (CFA).
//!
//! Given a non-outlier probe `p`, find the nearest normal case `x` taking
//! part in a good native pair `(x, x′)`. The synthetic case `p′` takes the
//! difference-feature values of `x′` and keeps `p`'s values everywhere
//! else. Candidates that do not land on the outlier side of the boundary
//! are rejected.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{synthetic_id, AugmentationConfig, Generator, Provenance, SyntheticCase, TargetPolicy};
use crate::boundary::Boundary;
use crate::error::{Error, Result};
use crate::mining::PairIndex;
use crate::model::Case;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// The adapted case stayed on the normal side of the boundary.
    NotOutlier,
    /// Every indexed case was excluded for this probe.
    NoIndexedNeighbour,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CfaOutcome {
    Accepted(SyntheticCase),
    Rejected { probe_id: String, reason: RejectReason },
}

impl CfaOutcome {
    pub fn accepted(self) -> Option<SyntheticCase> {
        match self {
            CfaOutcome::Accepted(s) => Some(s),
            CfaOutcome::Rejected { .. } => None,
        }
    }
}

/// Generates the CFA counterfactual for one probe.
pub fn cfa_generate(
    p: &Case,
    index: &PairIndex,
    boundary: &Boundary,
    cfg: &AugmentationConfig,
) -> Result<CfaOutcome> {
    if index.is_empty() {
        return Err(Error::Empty("pair index"));
    }
    if boundary.is_outlier(p)? {
        return Err(Error::ProbeIsOutlier(p.case_id.clone()));
    }
    let exclude = cfg.exclude_probe_from_index.then_some(p.case_id.as_str());
    let Some((entry, _)) = index.nearest(p, exclude) else {
        return Ok(CfaOutcome::Rejected {
            probe_id: p.case_id.clone(),
            reason: RejectReason::NoIndexedNeighbour,
        });
    };
    let (x, x_cf) = (&entry.normal, &entry.outlier);

    let mut adapted = p.clone();
    adapted.case_id = synthetic_id(Generator::Cfa, &p.case_id, 0);
    for f in entry.diff.iter() {
        adapted.set_value(f, x_cf.value(f));
    }
    adapted.growth = match cfg.target_policy {
        TargetPolicy::Copy => x_cf.growth,
        TargetPolicy::Delta => p.growth + (x_cf.growth - x.growth),
        TargetPolicy::Impute => {
            return Err(Error::Config("CFA target policy must be copy or delta".into()))
        }
    };

    if !boundary.is_outlier(&adapted)? {
        return Ok(CfaOutcome::Rejected {
            probe_id: p.case_id.clone(),
            reason: RejectReason::NotOutlier,
        });
    }
    Ok(CfaOutcome::Accepted(SyntheticCase {
        case: adapted,
        provenance: Provenance {
            generator: Generator::Cfa,
            source_probe_id: Some(p.case_id.clone()),
            source_normal_id: Some(x.case_id.clone()),
            source_outlier_id: Some(x_cf.case_id.clone()),
            diff_features: entry.diff,
            transferred: entry.diff,
            target_policy: Some(cfg.target_policy),
        },
    }))
}

/// CFA outputs over a list of probes, in probe order.
#[derive(Debug, Clone, Default)]
pub struct CfaBatch {
    pub accepted: Vec<SyntheticCase>,
    pub rejected: BTreeMap<RejectReason, usize>,
    pub probes: usize,
}

impl CfaBatch {
    pub fn run(probes: &[Case], index: &PairIndex, boundary: &Boundary, cfg: &AugmentationConfig) -> Result<Self> {
        let outcomes: Vec<CfaOutcome> = probes
            .par_iter()
            .map(|p| cfa_generate(p, index, boundary, cfg))
            .collect::<Result<_>>()?;
        let mut batch = CfaBatch {
            probes: probes.len(),
            ..Default::default()
        };
        for outcome in outcomes {
            match outcome {
                CfaOutcome::Accepted(s) => batch.accepted.push(s),
                CfaOutcome::Rejected { reason, .. } => *batch.rejected.entry(reason).or_default() += 1,
            }
        }
        Ok(batch)
    }

    pub fn rejection_rate(&self) -> f64 {
        if self.probes == 0 {
            return 0.0;
        }
        self.rejected.values().sum::<usize>() as f64 / self.probes as f64
    }
}
