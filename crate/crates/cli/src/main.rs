//! Command-line front end: train rules, run detection with a trained bundle,
//! score label files, and calibrate the chunk size.

mod config;
mod report;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tsrule::data::{load_dataset, read_labels_csv, split_train_test, write_labels_csv, DatasetSpec, MetricSeries};
use tsrule::eval::evaluate;
use tsrule::fusion::{detect, load_bundle, BaseDetectorLabels};
use tsrule::llm::{ChatBackend, Gateway, HttpBackend, HttpConfig, MockBackend, MockScript, PromptLibrary};
use tsrule::rule::RuleRuntime;
use tsrule::train::{calibrate_chunk_size, run_training, RunLayout, RunSettings, Trainer, DEFAULT_PROPOSALS_PER_SIZE};
use tsrule::ErrorKind;

use config::{BackendChoice, ConfigError, Overrides, RunConfig};
use report::{plot_svg, report_table, run_table, EvaluationOutput, IncidentReport, SeriesEvaluation};

#[derive(Debug, Parser)]
#[command(name = "tsrule", version, about = "Train and apply LLM-written anomaly detection rules")]
struct Cli {
    /// Run configuration (TOML)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for sampling and retrieval; overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Rule registry directory; overrides the config
    #[arg(long, global = true, value_name = "DIR")]
    registry: Option<PathBuf>,

    /// Replay LLM responses from a JSON script instead of calling an endpoint
    #[arg(long, global = true, value_name = "FILE")]
    mock_script: Option<PathBuf>,

    /// Output directory; overrides the config
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train rule bundles for every unit of the configured dataset
    Train(TrainArgs),
    /// Label a series with a trained bundle
    Detect(DetectArgs),
    /// Score predicted labels against ground truth
    Evaluate(EvaluateArgs),
    /// Pick the chunk size that scores best on one metric
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Print a summary table
    #[arg(long)]
    table: bool,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Metric CSV file, or a directory of them
    #[arg(long, value_name = "PATH")]
    series: PathBuf,

    #[arg(long, value_name = "ID")]
    bundle: String,

    /// Base detector labels: a file for a single series, else a directory
    #[arg(long, value_name = "PATH")]
    base: Option<PathBuf>,

    /// Write an SVG plot per series
    #[arg(long)]
    plot: bool,

    /// Print a summary table
    #[arg(long)]
    table: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Ground-truth label file, or a directory of them
    #[arg(long, value_name = "PATH")]
    gt: PathBuf,

    /// Predicted label file, or a directory with matching file names
    #[arg(long, value_name = "PATH")]
    pred: PathBuf,

    /// Print a summary table instead of JSON
    #[arg(long)]
    table: bool,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long, value_name = "ID")]
    metric: String,

    /// Candidate chunk sizes
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    sizes: Vec<usize>,

    /// Detection proposals per size
    #[arg(long, default_value_t = DEFAULT_PROPOSALS_PER_SIZE)]
    proposals: usize,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Core(#[from] tsrule::Error),

    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Write { .. } => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Data => 2,
                ErrorKind::Gateway => 3,
                ErrorKind::Sandbox => 4,
                ErrorKind::Internal => 1,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        registry: cli.registry.clone(),
        mock_script: cli.mock_script.clone(),
        out: cli.out.clone(),
    };
    let load = |required: bool| -> Result<RunConfig> {
        let config = match &cli.config {
            Some(path) => RunConfig::load(path)?,
            None if required => return Err(CliError::Usage("--config is required for this command".into())),
            None => RunConfig::default(),
        };
        Ok(config.finalize(&overrides)?)
    };
    match &cli.command {
        Command::Train(args) => cmd_train(&load(true)?, args),
        Command::Detect(args) => cmd_detect(&load(false)?, args),
        Command::Evaluate(args) => cmd_evaluate(cli.out.as_deref(), args),
        Command::Calibrate(args) => cmd_calibrate(&load(true)?, args),
    }
}

/// Holds what a [`Trainer`] borrows.
struct Engine {
    gateway: Gateway,
    runtime: RuleRuntime,
    prompts: PromptLibrary,
}

impl Engine {
    fn new(config: &RunConfig) -> Result<Engine> {
        let gw = &config.gateway;
        let backend: Arc<dyn ChatBackend> = match gw.backend {
            BackendChoice::Mock => {
                let path = gw
                    .mock_script
                    .as_ref()
                    .ok_or(ConfigError::Required { field: "gateway.mock_script (or --mock-script)" })?;
                Arc::new(MockBackend::new(MockScript::load(path)?))
            }
            BackendChoice::Http => {
                let endpoint = gw.endpoint.clone().ok_or(ConfigError::Required { field: "gateway.endpoint" })?;
                let model = gw.model.clone().ok_or(ConfigError::Required { field: "gateway.model" })?;
                Arc::new(HttpBackend::new(HttpConfig {
                    endpoint,
                    model,
                    api_key: gw.api_key.clone(),
                    auth: gw.auth,
                    request_timeout: gw.request_timeout(),
                    retry: gw.retry(),
                }))
            }
        };
        let mut gateway = Gateway::new(backend);
        if let Some(settings) = gw.generation {
            gateway = gateway.with_settings(settings);
        }
        let prompts = match &config.prompts {
            Some(dir) => PromptLibrary::with_overrides(dir)?,
            None => PromptLibrary::embedded(),
        };
        Ok(Engine {
            gateway,
            runtime: runtime_for(config),
            prompts,
        })
    }

    fn trainer<'a>(&'a self, config: &'a RunConfig) -> Trainer<'a> {
        Trainer {
            config: &config.training,
            gateway: &self.gateway,
            runtime: &self.runtime,
            prompts: &self.prompts,
            render: &config.preprocess,
        }
    }
}

fn runtime_for(config: &RunConfig) -> RuleRuntime {
    let mut runtime = RuleRuntime::native();
    if let Some(section) = &config.sandbox {
        runtime = runtime.with_sandbox(section.sandbox());
        if let Some(ms) = section.timeout_ms {
            runtime = runtime.with_timeout(std::time::Duration::from_millis(ms));
        }
    }
    runtime
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(tsrule::Error::from)?;
    text.push('\n');
    write_file(path, &text)
}

fn print_stdout(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(text.as_bytes())
        .and_then(|()| stdout.flush())
        .map_err(|source| CliError::Write {
            path: PathBuf::from("<stdout>"),
            source,
        })
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(tsrule::Error::from)?;
    text.push('\n');
    print_stdout(&text)
}

fn cmd_train(config: &RunConfig, args: &TrainArgs) -> Result<()> {
    let spec = config.require_dataset()?;
    let series = load_dataset(&spec.source, spec)?;
    let bases = match &config.base_labels {
        Some(dir) => series
            .iter()
            .map(|s| {
                let base = BaseDetectorLabels::load_for(dir, s.metric_id())?;
                base.check_aligned(s)?;
                Ok((s.metric_id().to_string(), base))
            })
            .collect::<std::result::Result<BTreeMap<_, _>, tsrule::Error>>()?,
        None => BTreeMap::new(),
    };
    tracing::info!(metrics = series.len(), fusion = !bases.is_empty(), "training");
    let engine = Engine::new(config)?;
    let settings = RunSettings {
        split_ratio: spec.split_ratio,
        mode: spec.mode,
    };
    let layout = RunLayout::new(&config.output_dir, &config.registry);
    let summary = run_training(&series, &bases, &settings, &engine.trainer(config), &layout)?;
    engine.gateway.finish()?;
    if args.table {
        print_stdout(&run_table(&summary))?;
    } else {
        print_stdout(&format!("{}\n", layout.summary_path().display()))?;
    }
    Ok(())
}

fn load_series(path: &Path) -> Result<Vec<MetricSeries>> {
    Ok(load_dataset(path, &DatasetSpec::new(path))?)
}

fn cmd_detect(config: &RunConfig, args: &DetectArgs) -> Result<()> {
    let bundle = load_bundle(&config.registry, &args.bundle)?;
    let series = load_series(&args.series)?;
    let base_dir = args.base.clone().or_else(|| config.base_labels.clone());
    let runtime = runtime_for(config);
    create_dir(&config.output_dir)?;
    let mut reports = Vec::with_capacity(series.len());
    for s in &series {
        let base = match (&base_dir, bundle.rules_only()) {
            (_, true) | (None, false) => None,
            (Some(path), false) if path.is_file() => Some(BaseDetectorLabels::load(path, s.metric_id())?),
            (Some(dir), false) => Some(BaseDetectorLabels::load_for(dir, s.metric_id())?),
        };
        let detection = detect(s, &bundle, base.as_ref(), &runtime)?;
        let evaluation = s.labels().map(|gt| evaluate(gt, &detection.labels)).transpose()?;
        let out = |suffix: &str| config.output_dir.join(format!("{}.{suffix}", s.metric_id()));
        write_labels_csv(&out("labels.csv"), &s.timestamps(), &detection.labels)?;
        if args.plot {
            write_file(&out("svg"), &plot_svg(s, &detection.labels))?;
        }
        let report = IncidentReport::new(s, &bundle.bundle_id, &detection.labels, detection.fallbacks, evaluation);
        write_json(&out("incidents.json"), &report)?;
        tracing::info!(metric = s.metric_id(), incidents = report.incidents.len(), "detected");
        reports.push(report);
    }
    if args.table {
        let mut text = String::new();
        for r in &reports {
            text.push_str(&format!(
                "{}: {} incident(s), {} abnormal point(s), {} fallback chunk(s)\n",
                r.metric_id,
                r.incidents.len(),
                r.abnormal_points,
                r.fallbacks.len()
            ));
            if let Some(e) = &r.evaluation {
                text.push_str(&report_table(e));
            }
        }
        print_stdout(&text)
    } else {
        print_json(&reports)
    }
}

fn label_files(path: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let stem = |p: &Path| p.file_stem().and_then(|s| s.to_str()).map(str::to_string);
    if path.is_file() {
        let name = stem(path).ok_or_else(|| CliError::Usage(format!("{}: unusable file name", path.display())))?;
        return Ok(BTreeMap::from([(name, path.to_path_buf())]));
    }
    let entries = std::fs::read_dir(path).map_err(|e| tsrule::Error::io(path, e))?;
    let mut files = BTreeMap::new();
    for entry in entries {
        let p = entry.map_err(|e| tsrule::Error::io(path, e))?.path();
        let is_csv = p.extension().is_some_and(|e| e == "csv");
        let is_groups = p.file_name().is_some_and(|n| n == tsrule::data::GROUPS_FILE);
        if let (true, false, Some(name)) = (is_csv, is_groups, stem(&p)) {
            let name = name.strip_suffix(".labels").map(str::to_string).unwrap_or(name);
            files.insert(name, p);
        }
    }
    if files.is_empty() {
        return Err(tsrule::Error::Validation(format!("{}: no label CSV files found", path.display())).into());
    }
    Ok(files)
}

fn cmd_evaluate(out: Option<&Path>, args: &EvaluateArgs) -> Result<()> {
    let gt_files = label_files(&args.gt)?;
    let pairs: Vec<(String, PathBuf, PathBuf)> = if args.pred.is_file() {
        if gt_files.len() != 1 {
            return Err(CliError::Usage("--pred is a file but --gt holds several series".into()));
        }
        let (name, gt) = gt_files.into_iter().next().expect("one entry");
        vec![(name, gt, args.pred.clone())]
    } else {
        let pred_files = label_files(&args.pred)?;
        gt_files
            .into_iter()
            .map(|(name, gt)| {
                let pred = pred_files.get(&name).cloned().ok_or_else(|| {
                    tsrule::Error::Validation(format!("no prediction file for {name} in {}", args.pred.display()))
                })?;
                Ok((name, gt, pred))
            })
            .collect::<Result<_>>()?
    };
    let series = pairs
        .into_iter()
        .map(|(metric_id, gt, pred)| {
            let (_, gt) = read_labels_csv(&gt)?;
            let (_, pred) = read_labels_csv(&pred)?;
            Ok(SeriesEvaluation {
                metric_id,
                points: gt.len(),
                report: evaluate(&gt, &pred)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let output = EvaluationOutput::new(series);
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join("evaluation.json"), &output)?;
    }
    if args.table {
        print_stdout(&output.table())
    } else {
        print_json(&output)
    }
}

fn cmd_calibrate(config: &RunConfig, args: &CalibrateArgs) -> Result<()> {
    let spec = config.require_dataset()?;
    let series = load_dataset(&spec.source, spec)?;
    let target = series
        .iter()
        .find(|s| s.metric_id() == args.metric)
        .ok_or_else(|| tsrule::Error::Validation(format!("metric {} not in dataset", args.metric)))?;
    let (train, _) = split_train_test(target, spec.split_ratio)?;
    let engine = Engine::new(config)?;
    let result = calibrate_chunk_size(&train, &args.sizes, args.proposals, &engine.trainer(config))?;
    engine.gateway.finish()?;
    create_dir(&config.output_dir)?;
    write_json(&config.output_dir.join(format!("calibration-{}.json", args.metric)), &result)?;
    print_json(&result)
}
