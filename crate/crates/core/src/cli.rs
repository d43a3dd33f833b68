//! Command-line front end: `extract-meta`, `synth`, `fit` and `replay`.
//!
//! Settings come from an optional TOML run config; command-line flags win.
//! Exit codes: 0 success, 1 runtime or model error, 2 input or validation error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionConfig;
use crate::basis_net::NetworkConfig;
use crate::blr::BlrHyperparams;
use crate::meta_features::{extract, TabularDataset, FEATURE_NAMES, META_FEATURES_VERSION};
use crate::meta_store::{
    load_meta_dataset, write_meta_features, MetaDataset, MetaFeatureTable, SplitSpec, META_FEATURES_FILE,
    PERFORMANCE_FILE, SPLIT_FILE,
};
use crate::scalar::Scalar;
use crate::search::{
    evaluate_policies, fit_ablr, generate_synthetic, write_aggregate_csv, write_trace_csv, AblrModel, PolicyKind,
    SearchError, SearchPolicy, SyntheticConfig,
};

pub const TRACE_FILE: &str = "traces.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const MODEL_FILE: &str = "model.ablr";
pub const FIT_REPORT_FILE: &str = "fit_report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Prior and noise precision used to start the marginal-likelihood search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlrInit {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BlrInit {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0 }
    }
}

/// Contents of a `--config` file. Relative paths resolve against the working
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding `performance.csv`, `metafeatures.csv` and `split.txt`.
    pub data_dir: Option<PathBuf>,
    pub performance: Option<PathBuf>,
    pub meta_features: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Overrides `network.seed` and `synth.seed` when set, and seeds replay.
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub precision: Precision,
    pub network: NetworkConfig,
    pub blr_init: BlrInit,
    pub acquisition: AcquisitionConfig,
    pub iterations: usize,
    pub n_seeds: usize,
    pub policies: Vec<PolicyKind>,
    pub synth: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            performance: None,
            meta_features: None,
            split: None,
            model: None,
            output_dir: PathBuf::from("."),
            seed: None,
            jobs: None,
            precision: Precision::F64,
            network: NetworkConfig::default(),
            blr_init: BlrInit::default(),
            acquisition: AcquisitionConfig::default(),
            iterations: 50,
            n_seeds: 1,
            policies: vec![PolicyKind::Random1x, PolicyKind::Random2x, PolicyKind::AblrStatic],
            synth: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "ablr", version, about = "Pipeline recommendation from historical meta-data")]
pub struct Cli {
    /// TOML run config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Maximum number of worker threads.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute meta-features for one CSV or a directory of CSVs.
    ExtractMeta(ExtractArgs),
    /// Write a synthetic meta-dataset.
    Synth(SynthArgs),
    /// Fit the surrogate on the training datasets.
    Fit(FitArgs),
    /// Replay search policies on the test datasets.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// A dataset CSV, or a directory whose `*.csv` files are all datasets.
    #[arg(long)]
    pub input: PathBuf,
    /// Name of the class column.
    #[arg(long)]
    pub target: String,
    /// Defaults to `<output-dir>/metafeatures.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write rows for the valid files even if some fail.
    #[arg(long)]
    pub keep_going: bool,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub performance: Option<PathBuf>,
    #[arg(long)]
    pub meta_features: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_pipelines: Option<usize>,
    #[arg(long)]
    pub n_datasets: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Defaults to `<output-dir>/model.ablr`.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Fitted model; required by the ABLR policies.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Comma-separated: ablr_static, ablr_online, random1x, random2x.
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub n_seeds: Option<usize>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        Self::runtime(e.to_string())
    }
}

/// Parses `args` (including the program name) and runs the command; returns
/// the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = Some(j as usize);
    }
    if let Some(o) = cli.output_dir {
        cfg.output_dir = o;
    }
    if cfg.jobs == Some(0) {
        return Err(CliError::input("jobs must be at least 1"));
    }
    if let Some(s) = cfg.seed {
        cfg.network.seed = s;
        cfg.synth.seed = s;
    }
    match cli.command {
        Command::ExtractMeta(a) => cmd_extract_meta(&cfg, a),
        Command::Synth(a) => cmd_synth(cfg, a),
        Command::Fit(a) => cmd_fit(cfg, a),
        Command::Replay(a) => cmd_replay(cfg, a),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn dataset_files(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let entries = fs::read_dir(input).map_err(|e| CliError::input(format!("{}: {e}", input.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_extract_meta(cfg: &RunConfig, args: ExtractArgs) -> Result<(), CliError> {
    let files = dataset_files(&args.input)?;
    if files.is_empty() {
        return Err(CliError::input("no input datasets"));
    }
    let mut names = Vec::new();
    let mut rows = Vec::new();
    let mut failed = 0;
    for f in &files {
        match TabularDataset::from_csv(f, &args.target).and_then(|ds| extract(&ds)) {
            Ok(row) => {
                let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned());
                names.push(stem.unwrap_or_else(|| f.display().to_string()));
                rows.push(row);
            }
            Err(e) => {
                eprintln!("{}: {e}", f.display());
                failed += 1;
            }
        }
    }
    if failed > 0 && !args.keep_going {
        return Err(CliError::input(format!("{failed} of {} datasets failed", files.len())));
    }
    let output = match args.output {
        Some(p) => p,
        None => {
            ensure_dir(&cfg.output_dir)?;
            cfg.output_dir.join(META_FEATURES_FILE)
        }
    };
    let table = MetaFeatureTable {
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        rows,
    };
    write_meta_features(&output, &names, &table, Some(META_FEATURES_VERSION))
        .map_err(|e| CliError::runtime(e.to_string()))?;
    if failed > 0 {
        return Err(CliError::input(format!(
            "{failed} of {} datasets failed; wrote {} rows",
            files.len(),
            names.len()
        )));
    }
    Ok(())
}

pub fn cmd_synth(mut cfg: RunConfig, args: SynthArgs) -> Result<(), CliError> {
    let s = &mut cfg.synth;
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = args.$f { s.$f = v; })* };
    }
    set!(n_pipelines, n_datasets, latent_dim, noise_std, missing_rate, train_fraction);
    let md = generate_synthetic(&cfg.synth).map_err(|e| CliError::input(e.to_string()))?;
    ensure_dir(&cfg.output_dir)?;
    md.save(&cfg.output_dir).map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(())
}

fn resolve_data(cfg: &RunConfig, args: &DataArgs) -> Result<MetaDataset, CliError> {
    let dir = args.data_dir.as_ref().or(cfg.data_dir.as_ref());
    let pick = |flag: &Option<PathBuf>, conf: &Option<PathBuf>, file: &str| -> Result<PathBuf, CliError> {
        flag.clone()
            .or_else(|| conf.clone())
            .or_else(|| dir.map(|d| d.join(file)))
            .ok_or_else(|| CliError::input(format!("no path for {file}: pass --data-dir or the file flag")))
    };
    let perf = pick(&args.performance, &cfg.performance, PERFORMANCE_FILE)?;
    let meta = pick(&args.meta_features, &cfg.meta_features, META_FEATURES_FILE)?;
    let split = pick(&args.split, &cfg.split, SPLIT_FILE)?;
    for p in [&perf, &meta, &split] {
        if !p.exists() {
            return Err(CliError::input(format!("{}: file not found", p.display())));
        }
    }
    let spec = SplitSpec::from_file(&split).map_err(|e| CliError::runtime(e.to_string()))?;
    load_meta_dataset(&perf, &meta, &spec).map_err(|e| CliError::runtime(e.to_string()))
}

#[derive(Serialize)]
struct FitReport<'a> {
    model: &'a Path,
    precision: Precision,
    n_train_datasets: usize,
    #[serde(flatten)]
    summary: &'a crate::search::FitSummary,
}

pub fn cmd_fit(mut cfg: RunConfig, args: FitArgs) -> Result<(), CliError> {
    if let Some(p) = args.precision {
        cfg.precision = p;
    }
    if let Some(e) = args.epochs {
        cfg.network.epochs = e;
    }
    cfg.network.validate().map_err(|e| CliError::input(e.to_string()))?;
    let md = resolve_data(&cfg, &args.data)?;
    ensure_dir(&cfg.output_dir)?;
    let model_path = args.model_out.unwrap_or_else(|| cfg.output_dir.join(MODEL_FILE));
    let summary = match cfg.precision {
        Precision::F64 => fit_and_save::<f64>(&md, &cfg, &model_path)?,
        Precision::F32 => fit_and_save::<f32>(&md, &cfg, &model_path)?,
    };
    // Relative to the output directory so reports from different runs compare equal.
    let report = FitReport {
        model: model_path.strip_prefix(&cfg.output_dir).unwrap_or(&model_path),
        precision: cfg.precision,
        n_train_datasets: md.train_datasets().len(),
        summary: &summary,
    };
    let report_path = cfg.output_dir.join(FIT_REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::runtime(e.to_string()))?;
    fs::write(&report_path, json + "\n").map_err(|e| CliError::runtime(format!("{}: {e}", report_path.display())))?;
    println!(
        "final_loss={} alpha={} beta={} log_marginal_likelihood={}",
        summary.final_loss, summary.alpha, summary.beta, summary.log_marginal_likelihood
    );
    Ok(())
}

fn fit_and_save<T: Scalar>(
    md: &MetaDataset,
    cfg: &RunConfig,
    path: &Path,
) -> Result<crate::search::FitSummary, CliError> {
    let init = BlrHyperparams::new(T::lit(cfg.blr_init.alpha), T::lit(cfg.blr_init.beta))
        .map_err(|e| CliError::input(e.to_string()))?;
    let model = fit_ablr::<T>(md, &cfg.network, init)?;
    model.save(path)?;
    Ok(model.summary().clone())
}

pub fn cmd_replay(mut cfg: RunConfig, args: ReplayArgs) -> Result<(), CliError> {
    if let Some(p) = args.precision {
        cfg.precision = p;
    }
    if let Some(list) = &args.policies {
        cfg.policies = list
            .iter()
            .map(|s| s.trim().parse::<PolicyKind>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    if let Some(i) = args.iterations {
        cfg.iterations = i;
    }
    if let Some(n) = args.n_seeds {
        cfg.n_seeds = n;
    }
    if let Some(xi) = args.xi {
        cfg.acquisition.xi = xi;
    }
    if args.model.is_some() {
        cfg.model = args.model.clone();
    }
    if cfg.policies.is_empty() {
        return Err(CliError::input("no policies given"));
    }
    if let Some(k) = cfg.policies.iter().find(|k| k.needs_model()) {
        if cfg.model.is_none() {
            return Err(CliError::runtime(format!("policy {k} needs --model <path>")));
        }
    }
    let md = resolve_data(&cfg, &args.data)?;
    ensure_dir(&cfg.output_dir)?;
    match cfg.precision {
        Precision::F64 => replay::<f64>(&md, &cfg),
        Precision::F32 => replay::<f32>(&md, &cfg),
    }
}

fn replay<T: Scalar>(md: &MetaDataset, cfg: &RunConfig) -> Result<(), CliError> {
    let model = match &cfg.model {
        Some(p) => Some(AblrModel::<T>::load(p)?),
        None => None,
    };
    let seed = cfg.seed.unwrap_or(0);
    let policies: Vec<SearchPolicy> = cfg
        .policies
        .iter()
        .map(|&kind| SearchPolicy {
            kind,
            acquisition: cfg.acquisition,
            seed,
        })
        .collect();
    let eval = evaluate_policies(md, model.as_ref(), &policies, cfg.iterations, cfg.n_seeds, cfg.jobs)?;
    write_trace_csv(&cfg.output_dir.join(TRACE_FILE), md, &eval.traces)?;
    write_aggregate_csv(&cfg.output_dir.join(AGGREGATE_FILE), &eval.report)?;
    Ok(())
}
