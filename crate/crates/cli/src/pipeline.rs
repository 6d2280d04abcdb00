//! Pipeline stages. Each stage writes its artifacts through [`Artifacts`]
//! so that `replicate-all` can hash everything it produced.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cfaug_core::augment::{
    build_experiment2_datasets, write_provenance, CfDataset, Experiment2Datasets, Generator, TargetPolicy,
};
use cfaug_core::boundary::{partition, PartitionSummary};
use cfaug_core::eval::{self, ComparisonResult};
use cfaug_core::knn::write_predictions;
use cfaug_core::mining::{mine_pairs, mine_summary, MiningSummary};
use cfaug_core::model::{ingest_csv, write_cases, IngestReport};
use cfaug_core::synth::{self, ScenarioConfig};
use cfaug_core::{Boundary, CaseBase, Error, KnnRegressor, OutlierLabel, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

/// Output directory plus the list of files written into it.
pub struct Artifacts {
    root: PathBuf,
    written: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Artifacts {
            root,
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn create(&mut self, rel: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        if !self.written.iter().any(|p| p == Path::new(rel)) {
            self.written.push(rel.into());
        }
        Ok((path, BufWriter::new(file)))
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let (path, mut w) = self.create(rel)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn csv<F>(&mut self, rel: &str, write: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> csv::Result<()>,
    {
        let (path, mut w) = self.create(rel)?;
        write(&mut w).map_err(|e| Error::csv(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Path, size and SHA-256 of every artifact, sorted by path.
    pub fn entries(&self) -> Result<Vec<ArtifactEntry>> {
        let mut out = Vec::with_capacity(self.written.len());
        for rel in &self.written {
            let path = self.root.join(rel);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            out.push(ArtifactEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
        out.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(out)
    }
}

/// Frozen training data and, when available, the test year under the
/// training normalization.
pub struct Data {
    pub train: CaseBase,
    pub test: Option<CaseBase>,
    pub ingest: Vec<(String, IngestReport)>,
}

impl Data {
    pub fn test(&self) -> Result<&CaseBase> {
        self.test.as_ref().ok_or_else(|| Error::Config("a test set is required".into()))
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Writes the scenario's cases as a case CSV.
pub fn gen_synth(scenario: &ScenarioConfig, art: &mut Artifacts, rel: &str) -> Result<PathBuf> {
    let cases = synth::generate(scenario)?;
    log::info!("generated {} cases", cases.len());
    art.csv(rel, |w| write_cases(w, &cases))
}

/// Loads the configured data. A scenario is generated into `synth.csv`
/// first and read back, so later stages see exactly what is on disk.
pub fn load_data(cfg: &PipelineConfig, art: &mut Artifacts) -> Result<Data> {
    let (train, test, ingest) = if let Some(scenario_path) = &cfg.scenario {
        let scenario = load_scenario(scenario_path)?;
        art.json("scenario.json", &scenario)?;
        let path = gen_synth(&scenario, art, "synth.csv")?;
        let (cb, report) = ingest_csv(&path, &cfg.schema)?;
        let (train, test) = synth::split_by_year(cb.into_cases(), scenario.test_year);
        (
            CaseBase::from_cases(train, cfg.schema.clone())?,
            Some(test),
            vec![("synth".to_string(), report)],
        )
    } else {
        let train_path = cfg.train.as_ref().ok_or_else(|| Error::Config("`train` is required".into()))?;
        let (train, train_report) = ingest_csv(train_path, &cfg.schema)?;
        let mut ingest = vec![("train".to_string(), train_report)];
        let test = match &cfg.test {
            Some(p) => {
                let (cb, report) = ingest_csv(p, &cfg.schema)?;
                ingest.push(("test".to_string(), report));
                Some(cb.into_cases())
            }
            None => None,
        };
        (train, test, ingest)
    };
    let mut train = train;
    let schema = train.fit_normalization()?;
    let test = match test {
        Some(cases) if cases.is_empty() => return Err(Error::Empty("test set")),
        Some(cases) => Some(CaseBase::frozen_with(cases, schema)?),
        None => None,
    };
    Ok(Data { train, test, ingest })
}

fn empty_like(train: &CaseBase) -> Result<CaseBase> {
    CaseBase::frozen_with(Vec::new(), train.schema()?.clone())
}

pub fn boundary(cfg: &PipelineConfig, data: &Data) -> Result<Boundary> {
    let empty;
    let test = match &data.test {
        Some(t) => t,
        None => {
            empty = empty_like(&data.train)?;
            &empty
        }
    };
    eval::fit_boundary(&data.train, test, cfg.stats_mode, cfg.grouping, cfg.outlier_z)
}

#[derive(Serialize)]
struct BoundarySummary<'a> {
    outlier_z: f64,
    train: &'a PartitionSummary,
    test: Option<&'a PartitionSummary>,
}

fn write_labels(art: &mut Artifacts, rel: &str, labels: &[OutlierLabel]) -> Result<PathBuf> {
    art.csv(rel, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["case_id", "rain_label", "temperature_label", "solar_label", "is_outlier"])?;
        for l in labels {
            let [r, t, s] = l.labels.map(|x| x.to_string());
            wtr.write_record([l.case_id.as_str(), &r, &t, &s, if l.is_outlier { "1" } else { "0" }])?;
        }
        wtr.flush()?;
        Ok(())
    })
}

/// Weekly statistics, per-case labels and partition summaries. Test-year
/// labels go to a separate file.
pub fn detect_outliers(cfg: &PipelineConfig, data: &Data, art: &mut Artifacts) -> Result<Boundary> {
    let b = boundary(cfg, data)?;
    art.json("boundary/weekly_stats.json", &b.stats)?;
    let train_part = partition(&data.train, &b)?;
    let test_part = data.test.as_ref().map(|t| partition(t, &b)).transpose()?;
    write_labels(art, "boundary/labels.csv", &train_part.labels)?;
    if let Some(p) = &test_part {
        write_labels(art, "boundary/labels_test.csv", &p.labels)?;
    }
    art.json(
        "boundary/summary.json",
        &BoundarySummary {
            outlier_z: b.outlier_z,
            train: &train_part.summary,
            test: test_part.as_ref().map(|p| &p.summary),
        },
    )?;
    log::info!(
        "train: {} of {} cases are outliers",
        train_part.summary.outliers,
        train_part.summary.total
    );
    Ok(b)
}

/// Mining report and the best pair of every normal case; with `all_pairs`
/// every good pair is written too.
pub fn mine(
    cfg: &PipelineConfig,
    data: &Data,
    b: &Boundary,
    art: &mut Artifacts,
    all_pairs: bool,
) -> Result<MiningSummary> {
    let mcfg = cfg.mining();
    mcfg.validate()?;
    if all_pairs {
        let pairs = mine_pairs(&data.train, b, &mcfg)?;
        art.csv("mining/pairs.csv", |w| pairs.write_csv(&data.train, w))?;
    }
    let summary = mine_summary(&data.train, b, &mcfg)?;
    art.json("mining/report.json", &summary.report(&mcfg))?;
    let best = cfaug_core::mining::PairSet {
        pairs: summary.best.clone(),
    };
    art.csv("mining/best_pairs.csv", |w| best.write_csv(&data.train, w))?;
    Ok(summary)
}

fn write_dataset(art: &mut Artifacts, dir: &str, d: &CfDataset) -> Result<()> {
    let stem = format!("{dir}/{}_{}", d.generator.name(), d.selection);
    art.csv(&format!("{stem}.csv"), |w| write_cases(w, d.cases.iter().map(|s| &s.case)))?;
    art.csv(&format!("{stem}_provenance.csv"), |w| write_provenance(w, &d.cases))?;
    Ok(())
}

/// Builds the three dataset families. With `only` set, just that family's
/// selections are written.
pub fn augment(
    cfg: &PipelineConfig,
    data: &Data,
    b: &Boundary,
    policy: TargetPolicy,
    art: &mut Artifacts,
    dir: &str,
    only: Option<Generator>,
) -> Result<Experiment2Datasets> {
    let acfg = cfg.augmentation(policy);
    let ds = build_experiment2_datasets(&data.train, b, &acfg)?;
    for g in Generator::ALL {
        if only.is_some_and(|o| o != g) {
            continue;
        }
        for d in ds.by_generator(g) {
            write_dataset(art, dir, d)?;
        }
    }
    if only.is_none() || only == Some(Generator::Cfa) {
        art.csv(&format!("{dir}/cfa_pool.csv"), |w| write_cases(w, ds.cfa_pool.iter().map(|s| &s.case)))?;
        art.csv(&format!("{dir}/cfa_pool_provenance.csv"), |w| write_provenance(w, &ds.cfa_pool))?;
    }
    art.json(&format!("{dir}/diagnostics.json"), &ds.diagnostics)?;
    Ok(ds)
}

pub fn predict(train: &CaseBase, test: &CaseBase, b: Option<&Boundary>, k: usize, art: &mut Artifacts, rel: &str) -> Result<()> {
    let mut reg = KnnRegressor::new(train)?;
    if let Some(b) = b {
        reg = reg.with_boundary(b)?;
    }
    let records = reg.predict_batch(test.cases(), k)?;
    art.csv(rel, |w| write_predictions(w, &records))?;
    Ok(())
}

pub fn expt1a(cfg: &PipelineConfig, data: &Data, b: &Boundary, art: &mut Artifacts) -> Result<eval::Expt1aResult> {
    let r = eval::run_expt1a(&data.train, data.test()?, b, &cfg.expt1a())?;
    art.json("expt1a/report.json", &r)?;
    art.csv("expt1a/table1.csv", |w| eval::write_table1(w, &r.contingency))?;
    art.csv("expt1a/case_errors.csv", |w| eval::write_case_errors(w, &[&r.report_o, &r.report_ex]))?;
    Ok(r)
}

pub fn expt1b(cfg: &PipelineConfig, data: &Data, b: &Boundary, art: &mut Artifacts) -> Result<eval::Expt1bResult> {
    let r = eval::run_expt1b(&data.train, data.test()?, b, cfg.k_max)?;
    art.json("expt1b/report.json", &r)?;
    art.csv("expt1b/fig3.csv", |w| eval::write_fig3(w, &r.rows))?;
    Ok(r)
}

pub fn expt2(
    cfg: &PipelineConfig,
    data: &Data,
    b: &Boundary,
    ds: &Experiment2Datasets,
    art: &mut Artifacts,
    dir: &str,
) -> Result<ComparisonResult> {
    let r = eval::run_expt2(ds, data.train.schema()?, data.test()?, b, cfg.k)?;
    art.json(&format!("{dir}/report.json"), &r)?;
    art.csv(&format!("{dir}/table2.csv"), |w| eval::write_month_table(w, &r.month_table()))?;
    let reports: Vec<_> = r.conditions.iter().flat_map(|c| &c.selections).collect();
    art.csv(&format!("{dir}/case_errors.csv"), |w| eval::write_case_errors(w, &reports))?;
    Ok(r)
}

pub fn augmented(
    cfg: &PipelineConfig,
    data: &Data,
    b: &Boundary,
    ds: &Experiment2Datasets,
    art: &mut Artifacts,
) -> Result<eval::AugmentedResult> {
    let synthetic: Vec<_> = ds.cfa_pool.iter().map(|s| s.case.clone()).collect();
    let r = eval::run_augmented(&data.train, &synthetic, data.test()?, b, cfg.k)?;
    art.json("augmented/report.json", &r)?;
    art.csv("augmented/table3.csv", |w| eval::write_month_table(w, &r.month_table()))?;
    art.csv("augmented/case_errors.csv", |w| {
        eval::write_case_errors(w, &[&r.report_o, &r.report_augmented])
    })?;
    Ok(r)
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub streams: Vec<String>,
    pub config: PipelineConfig,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Every stage in order, then `manifest.json`.
pub fn replicate_all(cfg: &PipelineConfig, art: &mut Artifacts) -> Result<Manifest> {
    let data = load_data(cfg, art)?;
    art.json("ingest.json", &data.ingest.iter().cloned().collect::<std::collections::BTreeMap<_, _>>())?;
    let b = detect_outliers(cfg, &data, art)?;
    mine(cfg, &data, &b, art, false)?;
    let copy = augment(cfg, &data, &b, TargetPolicy::Copy, art, "augment", None)?;
    expt1a(cfg, &data, &b, art)?;
    expt1b(cfg, &data, &b, art)?;
    expt2(cfg, &data, &b, &copy, art, "expt2")?;
    augmented(cfg, &data, &b, &copy, art)?;
    drop(copy);
    let delta = augment(cfg, &data, &b, TargetPolicy::Delta, art, "augment_delta", Some(Generator::Cfa))?;
    expt2(cfg, &data, &b, &delta, art, "expt2_delta")?;

    let mut streams = vec!["generator".to_string()];
    for s in 1..=cfg.selections {
        for g in Generator::ALL {
            streams.push(format!("selection-{s}/{g}"));
        }
    }
    streams.push("perturbation/<probe_id>".into());
    let manifest = Manifest {
        tool: "cfaug".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        streams,
        config: PipelineConfig {
            out: None,
            ..cfg.clone()
        },
        artifacts: art.entries()?,
    };
    art.json("manifest.json", &manifest)?;
    Ok(manifest)
}
