//! Command-line front end. Every command is deterministic given its seeds and
//! profile; tables go to CSV, reports to JSON.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use crate::bound_lab::{max_d_svd, noise_sweep, verify_bound, BoundCertificate, MaxDsvd, NoiseSweep, SweepPoint};
use crate::constructions::{
    build_circle_pair, rho_sweep, CircleSpec, FamilyBase, RhoFamily, RhoRecord, TheoremSpec, DEFAULT_RHOS,
};
use crate::io::{self as fmt, CheckpointFile, Report};
use crate::metrics_distributional::{d_kl, d_llv, select_pivots, LlvReport, PivotSearch, DEFAULT_LAMBDA};
use crate::metrics_representational::{similarity, SampleMatrix, SimilarityReport};
use crate::model_core::{ModelPair, ModelTable};
use crate::synth_train::{
    gen_angular_data, train, AngularDataset, NormConstraint, TrainConfig, WidthSweepConfig, WidthSweepResult,
};
use crate::{moments, Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "reprdist",
    version,
    about = "Distributional distances and representational similarity of softmax models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// ρ sweep over a constructed family: KL, d_LLV, m_CCA and max d_SVD per ρ.
    Table1(Table1Args),
    /// Certify the d_SVD bound on noise-perturbed copies of a reference model.
    BoundSweep(BoundSweepArgs),
    /// Train classifiers at several widths and compare retained pairs.
    WidthSweep(WidthSweepArgs),
    /// Compare two models given as JSON tables.
    Compare(CompareArgs),
    /// Generate the angular-slice dataset.
    GenData(GenDataArgs),
    /// Train one classifier.
    Train(TrainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Ci,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Circle,
    Theorem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormArg {
    None,
    Emb20,
    Unemb20,
    Both20,
}

impl From<NormArg> for NormConstraint {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::None => Self::None,
            NormArg::Emb20 => Self::Emb20,
            NormArg::Unemb20 => Self::Unemb20,
            NormArg::Both20 => Self::Both20,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Table1Args {
    /// Comma-separated unembedding norms.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RHOS.to_vec())]
    pub rho: Vec<f64>,
    /// Sampling seed of the circle construction.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Family::Circle)]
    pub family: Family,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report with the resolved configuration and chosen pivots.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundSweepArgs {
    /// Explicit comma-separated noise levels; overrides the linear grid.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.2)]
    pub sigma_max: f64,
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    /// Noise seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Labels of the reference circle model.
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    #[arg(long, default_value_t = 50)]
    pub points_per_label: usize,
    #[arg(long, default_value_t = 3.0)]
    pub rho: f64,
    /// Seed of the reference circle model.
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WidthSweepArgs {
    #[arg(long, default_value_t = 4)]
    pub c: usize,
    /// Comma-separated widths; the profile decides when absent.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    /// Number of seeds, `0..n`; the profile decides when absent.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub min_retained: usize,
    #[arg(long, value_enum, default_value_t = Profile::Ci)]
    pub profile: Profile,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    pub model_a: PathBuf,
    pub model_b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// JSON report; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 4)]
    pub c: usize,
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,
    #[arg(long, default_value_t = 3.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset JSON from `gen-data`; a default dataset is generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub c: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub leaky_slope: f64,
    #[arg(long, value_enum, default_value_t = NormArg::None)]
    pub norm: NormArg,
    #[arg(long, value_enum, default_value_t = Profile::Ci)]
    pub profile: Profile,
    /// Checkpoint JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Model-table JSON on the first held-out points, for `compare`.
    #[arg(long)]
    pub table_out: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub eval_points: usize,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1Result {
    pub rows: Vec<RhoRecord>,
    pub pivots: crate::model_core::PivotConfig,
}

pub fn cmd_table1(args: &Table1Args) -> Result<Table1Result> {
    if args.rho.is_empty() {
        return Err(Error::InvalidArgument("empty rho list".into()));
    }
    let base = match args.family {
        Family::Circle => FamilyBase::Circle(CircleSpec { seed: args.seed, ..CircleSpec::table1() }),
        Family::Theorem => FamilyBase::Theorem(TheoremSpec::default()),
    };
    let family = RhoFamily { rho_values: args.rho.clone(), base };
    let (rows, pivots) = rho_sweep(&family, args.lambda, &PivotSearch::default())?;
    let mut out = sink(args.out.as_deref())?;
    fmt::write_table1_csv(&mut out, &rows)?;
    out.flush()?;
    let result = Table1Result { rows, pivots };
    if let Some(p) = &args.json {
        fmt::write_json(p, &Report::new("table1", args, &result))?;
    }
    Ok(result)
}

pub fn cmd_bound_sweep(args: &BoundSweepArgs) -> Result<Vec<SweepPoint>> {
    let sigmas = match &args.sigmas {
        Some(s) => s.clone(),
        None if args.points >= 2 => {
            (0..args.points).map(|i| args.sigma_max * i as f64 / (args.points - 1) as f64).collect()
        }
        None => return Err(Error::InvalidArgument("need at least two grid points".into())),
    };
    let reference = build_circle_pair(&CircleSpec::new(args.k, args.points_per_label, args.model_seed)?, args.rho)?;
    let sweep = NoiseSweep { sigmas, seed: args.seed, lambda: args.lambda, search: PivotSearch::default() };
    let points = noise_sweep(&reference.first, &reference.weights, &sweep)?;
    let mut out = sink(args.out.as_deref())?;
    fmt::write_bound_sweep_csv(&mut out, &points)?;
    out.flush()?;
    if let Some(p) = &args.json {
        fmt::write_json(p, &Report::new("bound-sweep", args, &points))?;
    }
    Ok(points)
}

pub fn width_sweep_config(args: &WidthSweepArgs) -> WidthSweepConfig {
    let mut cfg = match args.profile {
        Profile::Ci => WidthSweepConfig::ci(args.c),
        Profile::Full => WidthSweepConfig::full(args.c),
    };
    if let Some(w) = &args.widths {
        cfg.widths = w.clone();
    }
    if let Some(n) = args.seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(s) = args.steps {
        cfg.train.steps = s;
    }
    cfg.min_retained = args.min_retained;
    cfg.lambda = args.lambda;
    cfg.data_seed = args.data_seed;
    cfg
}

pub fn cmd_width_sweep(args: &WidthSweepArgs) -> Result<WidthSweepResult> {
    let cfg = width_sweep_config(args);
    let result = crate::synth_train::width_sweep(&cfg)?;
    for d in &result.diagnostics {
        eprintln!("warning: {d}");
    }
    let mut out = sink(args.out.as_deref())?;
    fmt::write_width_sweep_csv(&mut out, &result.rows)?;
    out.flush()?;
    if let Some(p) = &args.json {
        fmt::write_json(p, &Report::new("width-sweep", &cfg, &result))?;
    }
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub d_kl_ab: f64,
    pub d_kl_ba: f64,
    pub llv: LlvReport,
    pub similarity: SimilarityReport,
    pub max_d_svd: MaxDsvd,
    pub certificate: BoundCertificate,
}

pub fn compare_models(a: ModelTable, b: ModelTable, weights: &DVector<f64>, lambda: f64) -> Result<CompareReport> {
    let pair = ModelPair::new(a, b, weights)?;
    let pivots = select_pivots(&pair.p, &pair.q, pair.dim(), Some((&pair.a, &pair.b)), &PivotSearch::default())?;
    let za = SampleMatrix::new(pair.a.embeddings().clone(), weights.clone())?;
    let zb = SampleMatrix::new(pair.b.embeddings().clone(), weights.clone())?;
    Ok(CompareReport {
        d_kl_ab: d_kl(&pair.p, &pair.q)?,
        d_kl_ba: d_kl(&pair.q, &pair.p)?,
        llv: d_llv(&pair.p, &pair.q, &pivots, lambda)?,
        similarity: similarity(&za, &zb)?,
        max_d_svd: max_d_svd(&pair, &pivots)?,
        certificate: verify_bound(&pair, &pivots, lambda)?,
    })
}

pub fn cmd_compare(args: &CompareArgs) -> Result<CompareReport> {
    let (a, wa) = fmt::read_model(&args.model_a)?;
    let (b, wb) = fmt::read_model(&args.model_b)?;
    let mut errs = Vec::new();
    if a.input_ids() != b.input_ids() {
        errs.push("input_ids: the two models use different input grids".to_string());
    }
    if a.label_ids() != b.label_ids() {
        errs.push("label_ids: the two models use different label sets".to_string());
    }
    if a.dim() != b.dim() {
        errs.push(format!("M: {} vs {}", a.dim(), b.dim()));
    }
    if matches!((&wa, &wb), (Some(x), Some(y)) if x != y) {
        errs.push("weights: the two models carry different input weights".to_string());
    }
    if !errs.is_empty() {
        return Err(Error::Schema(errs));
    }
    let weights = wa.or(wb).unwrap_or_else(|| moments::uniform(a.n_inputs()));
    let report = compare_models(a, b, &weights, args.lambda)?;
    let full = Report::new("compare", args, &report);
    match &args.out {
        Some(p) => fmt::write_json(p, &full)?,
        None => println!("{}", serde_json::to_string_pretty(&full)?),
    }
    Ok(report)
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<AngularDataset> {
    let d = gen_angular_data(args.c, args.n, args.sigma, args.seed)?;
    fmt::write_json(&args.out, &d)?;
    Ok(d)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub accuracy: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let data: AngularDataset = match &args.data {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => gen_angular_data(args.c, 20_000, 3.0, 0)?,
    };
    let base = match args.profile {
        Profile::Ci => TrainConfig::ci(args.width, args.seed),
        Profile::Full => TrainConfig::new(args.width, args.seed),
    };
    let cfg = TrainConfig {
        steps: args.steps.unwrap_or(base.steps),
        lr: args.lr,
        leaky_slope: args.leaky_slope,
        norm_constraint: args.norm.into(),
        ..base
    };
    let model = train(&cfg, &data)?;
    fmt::write_json(&args.out, &CheckpointFile::from_model(&model))?;
    if let Some(p) = &args.table_out {
        let (_, test) = data.split(cfg.train_fraction);
        let grid = test.head(args.eval_points);
        fmt::write_model(p, &model.to_model_table(&grid.points)?, None)?;
    }
    let s = TrainSummary {
        accuracy: model.accuracy,
        initial_loss: model.initial_loss,
        final_loss: model.final_loss,
        steps: cfg.steps,
    };
    eprintln!("accuracy {:.4}, loss {:.4} -> {:.4}", s.accuracy, s.initial_loss, s.final_loss);
    Ok(s)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Table1(a) => cmd_table1(&a).map(drop),
        Command::BoundSweep(a) => cmd_bound_sweep(&a).map(drop),
        Command::WidthSweep(a) => cmd_width_sweep(&a).map(drop),
        Command::Compare(a) => cmd_compare(&a).map(drop),
        Command::GenData(a) => cmd_gen_data(&a).map(drop),
        Command::Train(a) => cmd_train(&a).map(drop),
    }
}
