//! `gvgraph` command-line front end.
//!
//! Exit codes: 0 success, 2 validation error (bad flags, malformed or
//! inconsistent inputs), 3 computation error (degenerate geometry, failed
//! numerical check).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gvgraph", version, about = "Gesture motion graph construction, search and transition geometry")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Pipeline TOML; its sections supply defaults for the matching verbs.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory. Structured results go to stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment sources into 4-frame clips and connect them.
    BuildGraph(BuildGraphArgs),
    /// Connect every component of a graph to the largest one.
    PruneGraph(PruneGraphArgs),
    /// Node, edge and component counts plus dead-end rates.
    GraphStats(GraphStatsArgs),
    /// Retrieve the best playback path for an audio track.
    Search(SearchArgs),
    /// Low- and high-level retrieval accuracy of paired feature tracks.
    EvalRetrieval(EvalArgs),
    /// Contrastive losses and their finite-difference gradient check.
    LossCheck(LossCheckArgs),
    /// Map per-frame character tokens onto word tokens.
    Align(AlignArgs),
    /// Robust homography from point matches and its background flow.
    Homography(HomographyArgs),
    /// Linear blend between two 2D poses.
    BlendPoses(BlendPosesArgs),
    /// Distance of a blend from ground-truth poses.
    BlendError(BlendErrorArgs),
    /// Mean pairwise distance between clip embeddings.
    Diversity(DiversityArgs),
    /// Write synthetic inputs with known answers.
    GenFixtures(GenFixturesArgs),
    /// Full pipeline from a TOML config.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    /// Motion container; repeat once per video.
    #[arg(long)]
    pub motion: Vec<PathBuf>,
    /// Mask track; one per `--motion`.
    #[arg(long)]
    pub masks: Vec<PathBuf>,
    /// Hand box track; one per `--motion`.
    #[arg(long)]
    pub boxes: Vec<PathBuf>,
    /// Video ids; default `v0`, `v1`, ...
    #[arg(long)]
    pub video_id: Vec<String>,
    #[arg(long)]
    pub edge_rule: Option<String>,
    #[arg(long)]
    pub w_body: Option<f64>,
    #[arg(long)]
    pub w_hand: Option<f64>,
    #[arg(long)]
    pub audio_sample_rate: Option<u32>,
}

#[derive(Debug, Args)]
pub struct PruneGraphArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct GraphStatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Walk lengths for the dead-end table.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64")]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub audio_feat: PathBuf,
    /// `VIDEO=PATH`, or a bare path when the graph holds a single video.
    #[arg(long)]
    pub motion_feat: Vec<String>,
    #[arg(long)]
    pub w_low: Option<f64>,
    #[arg(long)]
    pub w_high: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// 0 selects the exact search.
    #[arg(long)]
    pub beam: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub audio: PathBuf,
    #[arg(long)]
    pub motion: PathBuf,
    #[arg(long)]
    pub low_trials: Option<usize>,
    #[arg(long)]
    pub high_trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    /// Audio features; a random batch is drawn when both inputs are omitted.
    #[arg(long, requires = "motion")]
    pub audio: Option<PathBuf>,
    #[arg(long, requires = "audio")]
    pub motion: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub t: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 0.07)]
    pub tau: f64,
    /// Sequences per batch.
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    /// Embedding width of a random batch.
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest accepted relative gradient error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub words: PathBuf,
    /// Leave unassigned frames at -1.
    #[arg(long)]
    pub no_fill: bool,
}

#[derive(Debug, Args)]
pub struct HomographyArgs {
    #[arg(long)]
    pub matches: PathBuf,
    /// Foreground mask (RLE JSON); its size sets the flow size.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, requires = "height")]
    pub width: Option<u32>,
    #[arg(long, requires = "width")]
    pub height: Option<u32>,
    #[arg(long)]
    pub inlier_px: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BlendPosesArgs {
    /// Pose file; its last pose starts the blend.
    #[arg(long)]
    pub start: PathBuf,
    /// Pose file; its first pose ends the blend.
    #[arg(long)]
    pub end: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct BlendErrorArgs {
    #[arg(long)]
    pub blended: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0.005)]
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Level {
    Low,
    High,
}

#[derive(Debug, Args)]
pub struct DiversityArgs {
    #[arg(long)]
    pub clips: PathBuf,
    /// Which embedding rows count as clips.
    #[arg(long, value_enum, default_value = "high")]
    pub level: Level,
}

#[derive(Debug, Args)]
pub struct GenFixturesArgs {
    /// homography, random-features, graph or pipeline.
    pub kind: String,
    /// `KEY=VALUE`; values parse as JSON, else as strings.
    #[arg(long = "param")]
    pub params: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Print the resolved config as TOML and stop.
    #[arg(long)]
    pub dump_config: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
