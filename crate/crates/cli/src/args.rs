use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scan {
    Auto,
    Brute,
    Tree,
}

impl From<Scan> for rigorbench::hamming::ScanStrategy {
    fn from(s: Scan) -> Self {
        match s {
            Scan::Auto => Self::Auto,
            Scan::Brute => Self::BruteForce,
            Scan::Tree => Self::BkTree,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rigorbench", version, about = "Dataset hygiene and evaluation-rigor checks for image-classification studies")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for every stochastic step [default: 42]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with defaults for seed, out_dir, format, strict and lint severities
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for written artifacts [env: RIGORBENCH_OUT] [default: .]
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Output format [default: text]
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Treat warnings as failures
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hash a corpus, group duplicates and write a cleaned manifest
    Audit(AuditArgs),
    /// Stratified train/val/test split of a cleaned manifest
    Split(SplitArgs),
    /// Stratified k-fold plan over the train+val pool of a split
    Kfold(KfoldArgs),
    /// Scan for duplicates straddling train and evaluation partitions
    LeakScan(LeakScanArgs),
    /// Augment the training partition of a split
    Augment(AugmentArgs),
    /// Confusion matrix and macro metrics from predictions
    Metrics(MetricsArgs),
    /// Correlation between per-class metrics and support
    Stats(StatsArgs),
    /// Render attention triptychs for sampled predictions
    Attnviz(AttnvizArgs),
    /// Check a training run log against the protocol
    RunlogCheck(RunlogCheckArgs),
    /// Lint methodology manifests
    Lint(LintArgs),
    /// Measure accuracy inflation from augmenting before splitting
    Simulate(SimulateArgs),
    /// Experiment record store
    Runs(RunsArgs),
    /// Assemble a study card from metric reports, run logs and manifests
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// `subdir` or `file:<csv with id,label>`
    #[arg(long, default_value = "subdir")]
    pub labels: String,
    #[arg(long, default_value_t = rigorbench::corpus::DEFAULT_NEAR_THRESHOLD)]
    pub near_threshold: u32,
    /// Exclusion ledger to apply; generated from the duplicate groups and
    /// written here when the file does not exist
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Cleaned manifest path [default: <out-dir>/manifest.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    pub scan: Scan,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
    /// [default: <out-dir>/split.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KfoldArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// [default: <out-dir>/kfold.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LeakScanArgs {
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Also match flipped and right-angle-rotated copies (decodes images)
    #[arg(long)]
    pub transforms: bool,
    #[arg(long, default_value_t = rigorbench::corpus::DEFAULT_NEAR_THRESHOLD)]
    pub near_threshold: u32,
    #[arg(long, value_enum, default_value = "auto")]
    pub scan: Scan,
    /// Findings as JSON lines [default: <out-dir>/leak_findings.jsonl]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Plan file; defaults to flips plus right-angle rotations
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Copies per image for the default plan
    #[arg(long, default_value_t = 1)]
    pub copies: usize,
    /// Write only the provenance manifest, not the images
    #[arg(long)]
    pub no_images: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Predictions CSV; repeat once per fold to aggregate
    #[arg(long, required = true)]
    pub predictions: Vec<PathBuf>,
    /// Comma-separated label order [default: from the predictions file]
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    /// Restrict to one partition (train, val or test)
    #[arg(long)]
    pub partition: Option<String>,
    /// Bootstrap replicates for a macro-F1 interval (0 disables)
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Metric report JSON
    #[arg(long, conflicts_with_all = ["x", "y"])]
    pub metrics: Option<PathBuf>,
    /// Per-class quantity correlated with support
    #[arg(long, default_value = "f1")]
    pub metric: String,
    /// Only `support` is available
    #[arg(long, default_value = "support")]
    pub against: String,
    #[arg(long, value_delimiter = ',', default_value = "pearson,spearman")]
    pub method: Vec<String>,
    /// Raw x values instead of a report
    #[arg(long, value_delimiter = ',', requires = "y")]
    pub x: Vec<f64>,
    #[arg(long, value_delimiter = ',', requires = "x")]
    pub y: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct AttnvizArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub attn_dir: PathBuf,
    #[arg(long)]
    pub images: PathBuf,
    #[arg(long, default_value_t = rigorbench::attention::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// `<correct>,<incorrect>`
    #[arg(long, default_value = "10,10")]
    pub sample: String,
}

#[derive(Debug, Args)]
pub struct RunlogCheckArgs {
    pub log: PathBuf,
}

#[derive(Debug, Args)]
pub struct LintArgs {
    #[arg(required = true)]
    pub manifests: Vec<PathBuf>,
    /// Also render the comparison table (text, and CSV under out-dir)
    #[arg(long)]
    pub compare: bool,
    /// `RULE=severity`, e.g. `R4=warning`
    #[arg(long = "severity")]
    pub severities: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    #[arg(long, default_value_t = 3)]
    pub copies: usize,
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, default_value_t = 32)]
    pub image_size: u32,
    #[arg(long, default_value_t = 0.8)]
    pub train: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
}

#[derive(Debug, Args)]
pub struct RunsArgs {
    /// [default: <out-dir>/runs.jsonl]
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    #[command(subcommand)]
    pub action: RunsAction,
}

#[derive(Debug, Subcommand)]
pub enum RunsAction {
    /// All runs, oldest first
    List {
        #[arg(long)]
        dataset: Option<String>,
        /// RFC 3339 lower bound
        #[arg(long)]
        since: Option<String>,
        /// RFC 3339 upper bound
        #[arg(long)]
        until: Option<String>,
    },
    /// One run by id
    Show { id: String },
    /// Append a run
    Add {
        #[arg(long)]
        dataset: Option<String>,
        /// Config snapshot (JSON file)
        #[arg(long)]
        config_snapshot: Option<PathBuf>,
        /// `role=path`; hashed now
        #[arg(long = "artifact")]
        artifacts: Vec<String>,
        /// `name=value`
        #[arg(long = "metric")]
        metrics: Vec<String>,
        #[arg(long, default_value_t = 0.0)]
        seconds: f64,
    },
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Per-fold metric report JSON, in fold order
    #[arg(long = "fold")]
    pub folds: Vec<PathBuf>,
    /// Held-out test metric report JSON
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub runlog: Option<PathBuf>,
    /// Methodology manifests to lint into the card
    #[arg(long = "methodology")]
    pub methodology: Vec<PathBuf>,
    /// Correlate test per-class F1 with support
    #[arg(long)]
    pub correlate: bool,
}
