use std::path::PathBuf;
use std::process::ExitCode;

use cfaug_cli::pipeline::{self, Artifacts};
use cfaug_cli::PipelineConfig;
use cfaug_core::augment::{Generator, TargetPolicy};
use cfaug_core::synth::ScenarioConfig;
use cfaug_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cfaug", version, about = "Counterfactual data augmentation for k-NN grass-growth regression")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic case CSV from a scenario.
    GenSynth {
        /// Scenario JSON; the built-in reference scenario when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit weekly statistics and label climate outliers.
    DetectOutliers(DataArgs),
    /// Mine native counterfactual pairs from the training set.
    MineCfpairs(DataArgs),
    /// Build counterfactual datasets.
    Augment(AugmentArgs),
    /// k-NN predictions for a test set.
    Predict {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = cfaug_core::knn::DEFAULT_K)]
        k: usize,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment.
    #[command(subcommand)]
    Evaluate(Evaluate),
    /// Run every stage and write a manifest.
    ReplicateAll(DataArgs),
}

#[derive(Subcommand)]
enum Evaluate {
    /// Full training set against the training set without outliers.
    Expt1a(DataArgs),
    /// Outlier neighbours of well-predicted tests over k.
    Expt1b(DataArgs),
    /// Native, perturbation and CFA datasets compared by month.
    Expt2(AugmentArgs),
    /// Full training set against the training set plus the CFA pool.
    Augmented(AugmentArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Pipeline config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario JSON to generate data from.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Training case CSV.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Test case CSV.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    outlier_z: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Difference threshold for pair mining, in standard units.
    #[arg(long)]
    delta: Option<f64>,
    /// Most difference features a good pair may have.
    #[arg(long)]
    max_diff: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct AugmentArgs {
    #[command(flatten)]
    data: DataArgs,
    /// native, perturb or cfa; all three when omitted.
    #[arg(long)]
    method: Option<Generator>,
    /// Dataset size.
    #[arg(long)]
    n: Option<usize>,
    /// Random selections per generator.
    #[arg(long)]
    selections: Option<usize>,
    /// copy or delta.
    #[arg(long)]
    target_policy: Option<TargetPolicy>,
}

impl DataArgs {
    fn resolve(&self) -> Result<(PipelineConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if self.scenario.is_some() || self.train.is_some() {
            cfg.scenario = self.scenario.clone();
            cfg.train = self.train.clone();
            cfg.test = self.test.clone().or(cfg.test.take().filter(|_| self.train.is_none()));
        } else if self.test.is_some() {
            cfg.test = self.test.clone();
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(z) = self.outlier_z {
            cfg.outlier_z = z;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        if let Some(m) = self.max_diff {
            cfg.max_diff = m;
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .ok_or_else(|| Error::Config("--out is required".into()))?;
        Ok((cfg, out))
    }
}

impl AugmentArgs {
    fn resolve(&self) -> Result<(PipelineConfig, PathBuf)> {
        let (mut cfg, out) = self.data.resolve()?;
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(s) = self.selections {
            cfg.selections = s;
        }
        if let Some(p) = self.target_policy {
            cfg.target_policy = p;
        }
        Ok((cfg, out))
    }
}

fn prepare(cfg: &PipelineConfig, need_test: bool) -> Result<()> {
    cfg.validate()?;
    cfg.check_inputs(need_test)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenSynth { config, out } => {
            let scenario = match config {
                Some(p) => pipeline::load_scenario(&p)?,
                None => ScenarioConfig::default(),
            };
            scenario.validate()?;
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(".".as_ref());
            let name = out
                .file_name()
                .ok_or_else(|| Error::Config(format!("{} is not a file path", out.display())))?;
            let mut art = Artifacts::new(dir)?;
            pipeline::gen_synth(&scenario, &mut art, &name.to_string_lossy())?;
        }
        Command::DetectOutliers(args) => {
            let (cfg, out) = args.resolve()?;
            prepare(&cfg, false)?;
            let mut art = Artifacts::new(out)?;
            let data = pipeline::load_data(&cfg, &mut art)?;
            pipeline::detect_outliers(&cfg, &data, &mut art)?;
        }
        Command::MineCfpairs(args) => {
            let (cfg, out) = args.resolve()?;
            prepare(&cfg, false)?;
            let mut art = Artifacts::new(out)?;
            let data = pipeline::load_data(&cfg, &mut art)?;
            let b = pipeline::boundary(&cfg, &data)?;
            pipeline::mine(&cfg, &data, &b, &mut art, true)?;
        }
        Command::Augment(args) => {
            let (cfg, out) = args.resolve()?;
            prepare(&cfg, false)?;
            let mut art = Artifacts::new(out)?;
            let data = pipeline::load_data(&cfg, &mut art)?;
            let b = pipeline::boundary(&cfg, &data)?;
            pipeline::augment(&cfg, &data, &b, cfg.target_policy, &mut art, "augment", args.method)?;
        }
        Command::Predict { train, test, k, out } => {
            let cfg = PipelineConfig {
                train: Some(train),
                test: Some(test),
                k,
                ..PipelineConfig::default()
            };
            prepare(&cfg, true)?;
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(".".as_ref());
            let name = out
                .file_name()
                .ok_or_else(|| Error::Config(format!("{} is not a file path", out.display())))?;
            let mut art = Artifacts::new(dir)?;
            let data = pipeline::load_data(&cfg, &mut art)?;
            let b = pipeline::boundary(&cfg, &data)?;
            pipeline::predict(&data.train, data.test()?, Some(&b), k, &mut art, &name.to_string_lossy())?;
        }
        Command::Evaluate(e) => run_evaluate(e)?,
        Command::ReplicateAll(args) => {
            let (cfg, out) = args.resolve()?;
            prepare(&cfg, true)?;
            let mut art = Artifacts::new(out)?;
            let manifest = pipeline::replicate_all(&cfg, &mut art)?;
            log::info!("wrote {} artifacts to {}", manifest.artifacts.len(), art.root().display());
        }
    }
    Ok(())
}

fn run_evaluate(e: Evaluate) -> Result<()> {
    match e {
        Evaluate::Expt1a(args) => {
            let (cfg, out) = args.resolve()?;
            prepare(&cfg, true)?;
            let mut art = Artifacts::new(out)?;
            let data = pipeline::load_data(&cfg, &mut art)?;
            let b = pipeline::boundary(&cfg, &data)?;
            pipeline::expt1a(&cfg, &data, &b, &mut art)?;
        }
        Evaluate::Expt1b(args) => {
            let (cfg, out) = args.resolve()?;
            prepare(&cfg, true)?;
            let mut art = Artifacts::new(out)?;
            let data = pipeline::load_data(&cfg, &mut art)?;
            let b = pipeline::boundary(&cfg, &data)?;
            pipeline::expt1b(&cfg, &data, &b, &mut art)?;
        }
        Evaluate::Expt2(args) => {
            let (cfg, out) = args.resolve()?;
            prepare(&cfg, true)?;
            let mut art = Artifacts::new(out)?;
            let data = pipeline::load_data(&cfg, &mut art)?;
            let b = pipeline::boundary(&cfg, &data)?;
            let ds = pipeline::augment(&cfg, &data, &b, cfg.target_policy, &mut art, "augment", None)?;
            pipeline::expt2(&cfg, &data, &b, &ds, &mut art, "expt2")?;
        }
        Evaluate::Augmented(args) => {
            let (cfg, out) = args.resolve()?;
            prepare(&cfg, true)?;
            let mut art = Artifacts::new(out)?;
            let data = pipeline::load_data(&cfg, &mut art)?;
            let b = pipeline::boundary(&cfg, &data)?;
            let ds = pipeline::augment(&cfg, &data, &b, cfg.target_policy, &mut art, "augment", Some(Generator::Cfa))?;
            pipeline::augmented(&cfg, &data, &b, &ds, &mut art)?;
        }
    }
    Ok(())
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprint!("{e}");
                return ExitCode::from(2);
            }
            return fail("usage", e.to_string().trim(), 2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return fail("validation", "--threads must be >= 1", 2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            return fail("runtime", &e.to_string(), 1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_validation() => fail("validation", &e.to_string(), 2),
        Err(e) => fail("runtime", &e.to_string(), 1),
    }
}
