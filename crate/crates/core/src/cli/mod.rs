//! `trapdex` command line.
//!
//! Exit status: 0 on success, 1 for invalid invocations (bad flags, missing
//! inputs, inconsistent options), 2 when the engine fails at runtime.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "trapdex",
    version,
    about = "Retrieval-based camera-trap image classification"
)]
pub struct Cli {
    /// TOML run file whose keys mirror the flags; flags on the command line win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Print progress and summaries to stderr (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an embedding store from embedding JSON lines
    Ingest(IngestArgs),
    /// Plan square crops around each image's primary detection
    CropPlan(CropPlanArgs),
    /// Exact top-k search of query embeddings against a database store
    Search(SearchArgs),
    /// Route images by detection and classify them
    Classify(ClassifyArgs),
    /// Score predictions against COCO-CameraTraps ground truth
    Evaluate(EvaluateArgs),
    /// Assign images to train/val/test
    Split(SplitArgs),
    /// Render adjudication prompts and parse recorded answers
    Prompt(PromptArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    L2,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Knn,
    Centroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Full,
    Cropped,
    Segmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSON lines: {"image_id", "vector": [...], "label": int|null, "location": str}
    #[arg(long, value_name = "JSONL")]
    pub embeddings: PathBuf,
    /// Output store directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    pub variant: VariantArg,
    /// COCO-CameraTraps file supplying labels and locations (matched on image id or file name)
    #[arg(long, value_name = "COCO_JSON")]
    pub annotations: Option<PathBuf>,
    /// Split CSV (image_id,split) used together with --role to filter rows
    #[arg(long, value_name = "CSV", requires = "role")]
    pub split: Option<PathBuf>,
    /// Keep only rows assigned to this split role
    #[arg(long, value_parser = ["train", "database", "val", "test"], requires = "split")]
    pub role: Option<String>,
    /// Mark the store as a retrieval database: the reserved "empty" label is rejected
    #[arg(long)]
    pub database: bool,
    /// With --database, drop rows labelled "empty" instead of failing
    #[arg(long, requires = "database")]
    pub drop_empty: bool,
    /// Id of the empty label when no annotations are given
    #[arg(long, value_name = "ID")]
    pub empty_label: Option<u32>,
    /// Declared dimension (needed when the input has no rows)
    #[arg(long, value_name = "D")]
    pub dimension: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CropPlanArgs {
    /// MegaDetector batch output
    #[arg(long, value_name = "MD_JSON")]
    pub detections: PathBuf,
    /// CSV with header image_id,width,height (image_id = detection file entry)
    #[arg(long, value_name = "CSV", required_unless_present = "annotations")]
    pub dimensions: Option<PathBuf>,
    /// COCO-CameraTraps file supplying image sizes (and ids) instead of --dimensions
    #[arg(long, value_name = "COCO_JSON", conflicts_with = "dimensions")]
    pub annotations: Option<PathBuf>,
    #[arg(long, default_value_t = crate::geometry::DEFAULT_CONF_THRESHOLD)]
    pub conf_threshold: f64,
    /// Ignore person and vehicle detections
    #[arg(long)]
    pub animals_only: bool,
    /// Square larger than the frame: pad it, or shrink it to fit
    #[arg(long, value_parser = ["pad", "shrink"], default_value = "pad")]
    pub overflow: String,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, value_name = "STORE")]
    pub db: PathBuf,
    #[arg(long, value_name = "STORE")]
    pub queries: PathBuf,
    #[arg(long, value_enum, default_value = "l2")]
    pub metric: MetricArg,
    #[arg(short = 'k', default_value_t = 1)]
    pub k: usize,
    /// Worker threads for the query fan-out (default: all cores)
    #[arg(long)]
    pub threads: Option<usize>,
    /// Scalar type of the distance kernels
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: PrecisionArg,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Retrieval database store
    #[arg(long, value_name = "STORE")]
    pub db: Option<PathBuf>,
    /// Crop (or segmented) query embeddings
    #[arg(long, value_name = "STORE")]
    pub queries: Option<PathBuf>,
    /// Prediction file for crops, instead of --db/--queries
    #[arg(long, value_name = "JSONL", conflicts_with = "queries")]
    pub crop_preds: Option<PathBuf>,
    /// MegaDetector batch output deciding the route of every image
    #[arg(long, value_name = "MD_JSON")]
    pub detections: PathBuf,
    /// COCO-CameraTraps file mapping detection file names to image ids
    #[arg(long, value_name = "COCO_JSON")]
    pub annotations: Option<PathBuf>,
    /// No detection: declare the image empty, or ask the second classifier
    #[arg(long, value_parser = ["empty", "second"], default_value = "second")]
    pub strategy: String,
    /// One shared classifier for crops and full images, or two separate ones
    #[arg(long, value_parser = ["one", "two"], default_value = "two")]
    pub arrangement: String,
    /// Prediction file for full images
    #[arg(long, value_name = "JSONL")]
    pub full_preds: Option<PathBuf>,
    /// Full-image query embeddings
    #[arg(long, value_name = "STORE", conflicts_with = "full_preds")]
    pub full_queries: Option<PathBuf>,
    /// Full-image database (arrangement two with --full-queries)
    #[arg(long, value_name = "STORE", requires = "full_queries")]
    pub full_db: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "l2")]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value = "knn")]
    pub mode: ModeArg,
    #[arg(short = 'k', default_value_t = 1)]
    pub k: usize,
    /// Classes kept per ranking
    #[arg(long, default_value_t = 5)]
    pub ranking_len: usize,
    #[arg(long, default_value_t = crate::geometry::DEFAULT_CONF_THRESHOLD)]
    pub conf_threshold: f64,
    #[arg(long)]
    pub animals_only: bool,
    /// Variant the crop classifier answers for
    #[arg(long, value_enum, default_value = "cropped")]
    pub crop_variant: VariantArg,
    /// Label id emitted by --strategy empty (default: the "empty" class of --annotations)
    #[arg(long, value_name = "ID")]
    pub empty_label: Option<u32>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum, default_value = "f32")]
    pub precision: PrecisionArg,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "JSONL")]
    pub preds: PathBuf,
    #[arg(long, value_name = "COCO_JSON")]
    pub truth: PathBuf,
    #[arg(long, value_parser = ["split", "location"], default_value = "split")]
    pub group_by: String,
    /// Write the JSON report here and the table to stdout (default: JSON to stdout, table to stderr)
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Images to split
    #[arg(long, value_name = "COCO_JSON")]
    pub annotations: PathBuf,
    #[arg(long, value_parser = ["wct", "safari", "provided"])]
    pub scheme: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of leading locations forming the database (safari)
    #[arg(long)]
    pub x: Option<usize>,
    /// Share of locations held out for testing (wct), e.g. 1/3
    #[arg(long, default_value = "1/3")]
    pub test_fraction: String,
    /// Share of development images used for training (wct), e.g. 0.8
    #[arg(long, default_value = "4/5")]
    pub train_fraction: String,
    /// Split development images per class
    #[arg(long)]
    pub stratified: bool,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// Label space source; the "empty" class is left out
    #[arg(long, value_name = "COCO_JSON", conflicts_with = "categories")]
    pub annotations: Option<PathBuf>,
    /// Comma-separated category names
    #[arg(long, value_delimiter = ',')]
    pub categories: Vec<String>,
    /// JSON lines: {"image_id", "caption"}
    #[arg(long, value_name = "JSONL", required_unless_present = "catalog")]
    pub captions: Option<PathBuf>,
    /// Recorded responses ({"prompt_hash", "response"}) to parse into answers
    #[arg(long, value_name = "JSONL")]
    pub replay: Option<PathBuf>,
    /// Print the conditional caption prompt catalog and exit
    #[arg(long)]
    pub catalog: bool,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Failure of a CLI invocation, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit status. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::merge_config(argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let rendered = e.to_string();
            let line = rendered.lines().next().unwrap_or("error: invalid arguments");
            eprintln!("{line}");
            return EXIT_USAGE;
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
