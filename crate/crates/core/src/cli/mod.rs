//! Batch command-line front end.
//!
//! Every subcommand works on a run directory created by `pretrain`. The
//! directory's `manifest.json` records how to rebuild the dataset, so later
//! commands (`evaluate`, `compare`, `dump-neighbors`) need only the path.

mod compare;
mod plot;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataaug::{load_csv_dataset, make_blobs_with_holdout, BlobSpec, CsvOptions, Dataset};
use crate::error::{Error, Result};
use crate::eval::{
    embed_dataset, fewshot_eval, knn_classify, linear_probe, EvalReport, FewShotSpec, KnnSpec, LinearProbeSpec, Split,
};
use crate::numcore::Checkpoint;
use crate::simcache::{neighbor_records, write_neighbor_jsonl, CacheDump, NeighborFilter};
use crate::trainer::{run_to_dir, write_json_atomic, EncoderPair, LossKind, PairMode, RunFiles, RunOptions, TrainConfig};

pub use compare::{compare_runs, CompareRow};
pub use plot::{render_svg, PlotSeries, PLOT_METRICS};

/// Default run root when neither `--out` nor `ADASIM_RUNS` is given.
pub const DEFAULT_RUN_ROOT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "adasim", version, about = "Adaptive similarity bootstrapping lab", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and populate a run directory.
    Pretrain(PretrainArgs),
    /// Score a run's checkpoint with k-NN, linear probe and few-shot protocols.
    Evaluate(EvaluateArgs),
    /// Tabulate final accuracy and collapse indicators of several runs as CSV.
    Compare(CompareArgs),
    /// Export ranked windowed neighbors from a run's cache dump.
    DumpNeighbors(DumpArgs),
    /// Render one metric of several metrics.jsonl files as an SVG line chart.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// JSON file with TrainConfig fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<PairMode>,
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub ema: Option<f64>,
    #[arg(long = "oracle-p", allow_negative_numbers = true)]
    pub oracle_p: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub shards: Option<usize>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Run directory; defaults to `$ADASIM_RUNS/<run id>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint period in epochs (0 keeps only the final one).
    #[arg(long, default_value_t = 50)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// `blobs` or a CSV path.
    #[arg(long, default_value = "blobs")]
    pub data: String,
    /// Held-out CSV for evaluation when `--data` is a CSV.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Skip one header line in CSV inputs.
    #[arg(long)]
    pub header: bool,
    /// CSV inputs carry no label column.
    #[arg(long)]
    pub unlabeled: bool,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    /// Held-out blob points per class.
    #[arg(long, default_value_t = 128)]
    pub holdout: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Knn,
    Linear,
    Fewshot,
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub run: PathBuf,
    #[arg(long, value_enum, default_value_t = Protocol::All)]
    pub protocol: Protocol,
    /// Checkpoint to score; defaults to the latest in the run.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Temperature-weighted k-NN votes.
    #[arg(long)]
    pub weighted: bool,
    #[arg(long, default_value_t = 600)]
    pub episodes: usize,
    #[arg(long, default_value_t = 5)]
    pub way: usize,
    #[arg(long, default_value_t = 5)]
    pub shot: usize,
    #[arg(long, default_value_t = 15)]
    pub query: usize,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(required = true, num_args = 2..)]
    pub runs: Vec<PathBuf>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    pub run: PathBuf,
    /// Comma-separated query indices; all items when absent.
    #[arg(long, value_delimiter = ',')]
    pub queries: Option<Vec<usize>>,
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Sampling temperature; defaults to the run's tau.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub first_not_self: bool,
    #[arg(long)]
    pub first_not_class: bool,
    /// Destination; defaults to `<run>/neighbors.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long)]
    pub metric: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> std::result::Result<PairMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Where a run's items come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Blobs {
        spec: BlobSpec,
        holdout_per_class: usize,
    },
    Csv {
        train: PathBuf,
        test: Option<PathBuf>,
        options: CsvOptions,
    },
}

impl DataSource {
    /// Training set and, when available, a held-out set.
    pub fn load(&self) -> Result<(Dataset, Option<Dataset>)> {
        match self {
            DataSource::Blobs { spec, holdout_per_class } => {
                let (train, test) = make_blobs_with_holdout(spec, *holdout_per_class)?;
                Ok((train, Some(test)))
            }
            DataSource::Csv { train, test, options } => {
                let tr = load_csv_dataset(train, *options)?;
                let te = test.as_ref().map(|p| load_csv_dataset(p, *options)).transpose()?;
                Ok((tr, te))
            }
        }
    }
}

impl DataArgs {
    fn source(&self, seed: u64) -> Result<DataSource> {
        if self.data == "blobs" {
            let d = BlobSpec::default();
            return Ok(DataSource::Blobs {
                spec: BlobSpec {
                    classes: self.classes.unwrap_or(d.classes),
                    per_class: self.per_class.unwrap_or(d.per_class),
                    dim: self.dim.unwrap_or(d.dim),
                    spread: self.spread.unwrap_or(d.spread),
                    separation: self.separation.unwrap_or(d.separation),
                    seed,
                },
                holdout_per_class: self.holdout,
            });
        }
        Ok(DataSource::Csv {
            train: absolute(Path::new(&self.data))?,
            test: self.test_data.as_deref().map(absolute).transpose()?,
            options: CsvOptions {
                has_header: self.header,
                labeled: !self.unlabeled,
            },
        })
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p)?)
}

/// Written before training starts and rewritten when it ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: TrainConfig,
    pub data: DataSource,
    pub version: String,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub status: RunStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Collapsed,
}

impl RunManifest {
    pub fn load(run: &Path) -> Result<Self> {
        let path = run.join(RunFiles::MANIFEST);
        let bytes = std::fs::read(&path).map_err(|e| Error::Schema {
            path: path.clone(),
            message: format!("not a run directory ({e})"),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn version_string() -> String {
    let pkg = env!("CARGO_PKG_VERSION");
    let git = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    match git {
        Some(g) => format!("{pkg} ({g})"),
        None => pkg.to_string(),
    }
}

/// Deterministic run name derived from the resolved config.
pub fn run_id(config: &TrainConfig) -> String {
    format!(
        "{}-{}-tau{}-w{}-k{}-seed{}",
        config.pair_mode.flag(),
        config.loss,
        config.tau,
        config.window,
        config.topk,
        config.seed
    )
}

impl PretrainArgs {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve_config(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let bytes = std::fs::read(p)?;
                serde_json::from_slice::<TrainConfig>(&bytes).map_err(|e| Error::Schema {
                    path: p.clone(),
                    message: e.to_string(),
                })?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.mode {
            c.pair_mode = v;
        }
        if let Some(v) = self.loss {
            c.loss = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        if let Some(v) = self.window {
            c.window = v;
        }
        if let Some(v) = self.topk {
            c.topk = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.ema {
            c.ema = v;
        }
        if let Some(v) = self.oracle_p {
            c.oracle_p_final = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.shards {
            c.shards = v;
        }
        c.validate()?;
        Ok(c)
    }
}

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    /// Training stopped on a non-finite loss or degenerate embeddings.
    Collapsed,
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<Status> {
    match cli.command {
        Command::Pretrain(a) => cmd_pretrain(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out).map(|_| Status::Done),
        Command::Compare(a) => cmd_compare(&a, out).map(|_| Status::Done),
        Command::DumpNeighbors(a) => cmd_dump_neighbors(&a, out).map(|_| Status::Done),
        Command::Plot(a) => cmd_plot(&a, out).map(|_| Status::Done),
    }
}

/// Binary entry point: parses `std::env::args`, runs, maps errors to exit codes.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    match execute(cli, &mut stdout) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Collapsed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

pub fn cmd_pretrain(args: &PretrainArgs, out: &mut dyn Write) -> Result<Status> {
    let config = args.resolve_config()?;
    let source = args.data.source(config.seed)?;
    let id = run_id(&config);
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => PathBuf::from(std::env::var("ADASIM_RUNS").unwrap_or_else(|_| DEFAULT_RUN_ROOT.into())).join(&id),
    };
    if dir.join(RunFiles::MANIFEST).exists() {
        return Err(Error::config("out", format!("{} already holds a run", dir.display())));
    }
    let (train, _) = source.load()?;
    std::fs::create_dir_all(&dir)?;
    let mut manifest = RunManifest {
        run_id: id,
        config: config.clone(),
        data: source,
        version: version_string(),
        started_at: unix_now(),
        finished_at: None,
        status: RunStatus::Running,
    };
    write_json_atomic(&dir.join(RunFiles::MANIFEST), &manifest)?;
    let outcome = run_to_dir(
        &config,
        &train,
        &dir,
        RunOptions {
            checkpoint_every: args.checkpoint_every,
        },
    )?;
    manifest.finished_at = Some(unix_now());
    manifest.status = if outcome.collapse.is_some() {
        RunStatus::Collapsed
    } else {
        RunStatus::Completed
    };
    write_json_atomic(&dir.join(RunFiles::MANIFEST), &manifest)?;
    writeln!(out, "{}", dir.display())?;
    if let Some(c) = &outcome.collapse {
        writeln!(out, "collapsed at epoch {}: {}", c.epoch, c.reason)?;
        return Ok(Status::Collapsed);
    }
    Ok(Status::Done)
}

/// Loads a run's checkpoint (latest unless given) and rebuilds its datasets.
pub(crate) fn load_run(run: &Path, checkpoint: Option<&Path>) -> Result<(RunManifest, EncoderPair, PathBuf, Dataset, Option<Dataset>)> {
    let manifest = RunManifest::load(run)?;
    let ckpt_path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => RunFiles::latest_checkpoint(run)?.ok_or_else(|| Error::Schema {
            path: run.to_path_buf(),
            message: "run holds no checkpoint".into(),
        })?,
    };
    let model = EncoderPair::from_checkpoint(&Checkpoint::load(&ckpt_path)?)?;
    let (train, test) = manifest.data.load()?;
    Ok((manifest, model, ckpt_path, train, test))
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<Vec<EvalReport>> {
    let (_, model, ckpt, train, test) = load_run(&args.run, args.checkpoint.as_deref())?;
    let test = test.ok_or_else(|| Error::config("test_data", "evaluation needs a held-out split"))?;
    let tr = embed_dataset(&model.backbone, &train, Split::Train)?;
    let te = embed_dataset(&model.backbone, &test, Split::Test)?;
    let ckpt = ckpt.display().to_string();
    let wants = |p: Protocol| args.protocol == p || args.protocol == Protocol::All;
    let mut reports = Vec::new();
    if wants(Protocol::Knn) {
        let spec = KnnSpec {
            k: args.k,
            weighted: args.weighted,
            ..KnnSpec::default()
        };
        reports.push(EvalReport::knn(&spec, knn_classify(&tr, &te, spec)?).with_checkpoint(&ckpt));
    }
    if wants(Protocol::Linear) {
        let spec = LinearProbeSpec::default();
        reports.push(EvalReport::linear(&spec, linear_probe(&tr, &te, spec)?).with_checkpoint(&ckpt));
    }
    if wants(Protocol::Fewshot) {
        let spec = FewShotSpec {
            episodes: args.episodes,
            way: args.way,
            shot: args.shot,
            query: args.query,
            seed: args.eval_seed,
        };
        reports.push(EvalReport::fewshot(&spec, &fewshot_eval(&te, &spec)?).with_checkpoint(&ckpt));
    }
    write_json_atomic(&args.run.join(RunFiles::EVAL), &reports)?;
    for r in &reports {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    Ok(reports)
}

pub fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<String> {
    let rows = compare_runs(&args.runs)?;
    let csv = compare::to_csv(&rows);
    match &args.out {
        Some(p) => crate::trainer::write_atomic(p, csv.as_bytes())?,
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(csv)
}

pub fn cmd_dump_neighbors(args: &DumpArgs, out: &mut dyn Write) -> Result<usize> {
    let manifest = RunManifest::load(&args.run)?;
    let dump = CacheDump::read_from(&args.run.join(RunFiles::CACHE))?;
    let labels = if args.first_not_class {
        manifest.data.load()?.0.labels
    } else {
        None
    };
    let queries: Vec<usize> = match &args.queries {
        Some(q) => q.clone(),
        None => (0..dump.cache.len()).collect(),
    };
    let filter = NeighborFilter {
        first_not_self: args.first_not_self,
        first_not_class: args.first_not_class,
    };
    let tau = args.tau.unwrap_or(manifest.config.tau);
    let records = neighbor_records(&dump, &queries, tau, args.top_n, filter, labels.as_deref())?;
    let dest = args.out.clone().unwrap_or_else(|| args.run.join(RunFiles::NEIGHBORS));
    write_neighbor_jsonl(&records, &dest)?;
    writeln!(out, "{} queries -> {}", records.len(), dest.display())?;
    Ok(records.len())
}

pub fn cmd_plot(args: &PlotArgs, out: &mut dyn Write) -> Result<()> {
    let series = args
        .files
        .iter()
        .map(|f| PlotSeries::load(f, &args.metric))
        .collect::<Result<Vec<_>>>()?;
    let svg = render_svg(&series, &args.metric)?;
    crate::trainer::write_atomic(&args.out, svg.as_bytes())?;
    writeln!(out, "{}", args.out.display())?;
    Ok(())
}
