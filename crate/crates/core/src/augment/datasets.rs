//! Equal-size counterfactual datasets for the dataset comparison.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::cfa::{CfaBatch, RejectReason};
use super::perturb::PerturbGenerator;
use super::{AugmentationConfig, Generator, Provenance, SyntheticCase};
use crate::boundary::Boundary;
use crate::error::{Error, Result};
use crate::mining::{mine_summary, MiningReport, PairIndex};
use crate::model::{Case, CaseBase};
use crate::rng;

/// One random selection of N cases from a generator's pool.
#[derive(Debug, Clone, PartialEq)]
pub struct CfDataset {
    pub generator: Generator,
    /// 1-based selection number.
    pub selection: usize,
    pub cases: Vec<SyntheticCase>,
}

impl CfDataset {
    pub fn plain_cases(&self) -> Vec<Case> {
        self.cases.iter().map(|s| s.case.clone()).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolDiagnostics {
    pub pool: usize,
    pub requested: usize,
    pub dataset_size: usize,
    pub shortfall: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetDiagnostics {
    pub probes: usize,
    pub mining: Option<MiningReport>,
    pub pools: BTreeMap<Generator, PoolDiagnostics>,
    pub cfa_rejected: BTreeMap<RejectReason, usize>,
    pub cfa_rejection_rate: f64,
    pub perturb_empty_probes: usize,
}

#[derive(Debug, Clone)]
pub struct Experiment2Datasets {
    pub native: Vec<CfDataset>,
    pub perturb: Vec<CfDataset>,
    pub cfa: Vec<CfDataset>,
    /// Every CFA case generated, before selection.
    pub cfa_pool: Vec<SyntheticCase>,
    pub diagnostics: DatasetDiagnostics,
}

impl Experiment2Datasets {
    pub fn by_generator(&self, generator: Generator) -> &[CfDataset] {
        match generator {
            Generator::Native => &self.native,
            Generator::Perturb => &self.perturb,
            Generator::Cfa => &self.cfa,
        }
    }
}

fn select(pool: &[SyntheticCase], generator: Generator, cfg: &AugmentationConfig) -> Vec<CfDataset> {
    (1..=cfg.selections)
        .map(|selection| {
            let cases = if pool.len() <= cfg.n {
                pool.to_vec()
            } else {
                let mut rng = rng::stream(cfg.seed, &format!("selection-{selection}/{generator}"));
                let mut picked = sample(&mut rng, pool.len(), cfg.n).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| pool[i].clone()).collect()
            };
            CfDataset {
                generator,
                selection,
                cases,
            }
        })
        .collect()
}

/// Builds the native, perturbation and CFA datasets from a frozen training
/// case base. Probes are the training non-outlier cases.
pub fn build_experiment2_datasets(
    train: &CaseBase,
    boundary: &Boundary,
    cfg: &AugmentationConfig,
) -> Result<Experiment2Datasets> {
    cfg.validate()?;
    let summary = mine_summary(train, boundary, &cfg.mining)?;
    let flags = boundary.outlier_flags(train.cases())?;
    let probes: Vec<Case> = train
        .cases()
        .iter()
        .zip(&flags)
        .filter(|(_, &o)| !o)
        .map(|(c, _)| c.clone())
        .collect();

    let native_pool: Vec<SyntheticCase> = summary
        .outlier_members
        .iter()
        .map(|&i| SyntheticCase {
            case: train.get(i).clone(),
            provenance: Provenance::native(),
        })
        .collect();
    if native_pool.is_empty() {
        return Err(Error::Empty("native counterfactual pool"));
    }

    let index = PairIndex::from_summary(&summary, train)?;
    let cfa = CfaBatch::run(&probes, &index, boundary, cfg)?;
    log::info!(
        "cfa: {} accepted, {} rejected of {} probes",
        cfa.accepted.len(),
        cfa.rejected.values().sum::<usize>(),
        cfa.probes
    );
    if cfa.accepted.is_empty() {
        return Err(Error::Empty("CFA pool"));
    }

    let perturb = PerturbGenerator::new(train, boundary, &cfg.perturb, cfg.seed)?;
    let (perturb_pool, perturb_empty) = perturb.generate_all(&probes)?;
    if perturb_pool.is_empty() {
        return Err(Error::Empty("perturbation pool"));
    }

    let mut diagnostics = DatasetDiagnostics {
        probes: probes.len(),
        mining: Some(summary.report(&cfg.mining)),
        cfa_rejected: cfa.rejected.clone(),
        cfa_rejection_rate: cfa.rejection_rate(),
        perturb_empty_probes: perturb_empty,
        ..Default::default()
    };
    for (generator, pool) in [
        (Generator::Native, &native_pool),
        (Generator::Perturb, &perturb_pool),
        (Generator::Cfa, &cfa.accepted),
    ] {
        let size = pool.len().min(cfg.n);
        if pool.len() < cfg.n {
            log::warn!("{generator}: pool of {} is short of N = {}", pool.len(), cfg.n);
        }
        diagnostics.pools.insert(
            generator,
            PoolDiagnostics {
                pool: pool.len(),
                requested: cfg.n,
                dataset_size: size,
                shortfall: cfg.n - size,
            },
        );
    }

    Ok(Experiment2Datasets {
        native: select(&native_pool, Generator::Native, cfg),
        perturb: select(&perturb_pool, Generator::Perturb, cfg),
        cfa: select(&cfa.accepted, Generator::Cfa, cfg),
        cfa_pool: cfa.accepted,
        diagnostics,
    })
}
