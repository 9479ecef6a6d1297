use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cocodesk_core::train::{AlphaSetting, LossKind};
use cocodesk_core::CentroidMode;

#[derive(Debug, Parser)]
#[command(
    name = "cocodesk",
    version,
    about = "COCO metric learning experiments at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an MLP feature extractor and dump metrics, checkpoint and features.
    Train(TrainArgs),
    /// Compare analytic loss gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Positive/negative cosine statistics and histogram of a feature dump.
    Pairs(PairsArgs),
    /// Threshold verification and ROC on sampled pairs of a feature dump.
    Verify(VerifyArgs),
    /// Top-1 identification against a gallery padded with distractors.
    Identify(IdentifyArgs),
    /// Calibrate, weight and merge region score tables, then assign identities.
    Fuse(FuseArgs),
    /// Print the feature scale needed for a target loss.
    Alpha(AlphaArgs),
    /// Fit an affine map between two keypoint files.
    Align(AlignArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` file; explicit flags override its entries.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed for every random choice of the run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output directory.
    #[arg(
        long,
        env = "COCODESK_OUT",
        default_value = "cocodesk-out",
        value_name = "DIR"
    )]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Synth,
    Idx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CentroidArg {
    Parametric,
    Batch,
}

impl From<CentroidArg> for CentroidMode {
    fn from(c: CentroidArg) -> Self {
        match c {
            CentroidArg::Parametric => CentroidMode::Parametric,
            CentroidArg::Batch => CentroidMode::Batch,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,

    /// coco, softmax, center-softmax, triplet or triplet-softmax.
    #[arg(long, default_value = "coco")]
    pub loss: LossKind,

    #[arg(long, value_enum, default_value_t = DatasetKind::Synth)]
    pub dataset: DatasetKind,

    /// Synthetic class count.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,

    /// Synthetic input dimension.
    #[arg(long, default_value_t = 16)]
    pub input_dim: usize,

    #[arg(long, default_value_t = 200)]
    pub per_class: usize,

    #[arg(long, default_value_t = 0.1)]
    pub spread: f64,

    /// Seed of the synthetic dataset; defaults to --seed.
    #[arg(long)]
    pub data_seed: Option<u64>,

    #[arg(long, value_name = "PATH", required_if_eq("dataset", "idx"))]
    pub idx_images: Option<PathBuf>,

    #[arg(long, value_name = "PATH", required_if_eq("dataset", "idx"))]
    pub idx_labels: Option<PathBuf>,

    /// Keep only the first N samples of the dataset.
    #[arg(long)]
    pub limit: Option<usize>,

    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub hidden: Vec<usize>,

    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,

    #[arg(long, default_value_t = 30)]
    pub epochs: usize,

    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,

    /// `auto` or a positive number.
    #[arg(long, default_value = "auto")]
    pub alpha: AlphaSetting,

    #[arg(long, value_enum, default_value_t = CentroidArg::Parametric)]
    pub centroid_mode: CentroidArg,

    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,

    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,

    #[arg(long, default_value_t = 0.005)]
    pub weight_decay: f64,

    #[arg(long, default_value_t = 0.05)]
    pub init_std: f64,

    #[arg(long, default_value_t = 1.0)]
    pub center_weight: f64,

    #[arg(long, default_value_t = 0.5)]
    pub center_rate: f64,

    #[arg(long, default_value_t = 0.2)]
    pub triplet_margin: f64,

    #[arg(long, default_value_t = 1.0)]
    pub triplet_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradLoss {
    Coco,
    Softmax,
    Center,
    Triplet,
    All,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,

    #[arg(long, value_enum, default_value_t = GradLoss::All)]
    pub loss: GradLoss,

    /// Seeds per (D, K) shape of the standard grid.
    #[arg(long, default_value_t = 12)]
    pub seeds: usize,

    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[command(flatten)]
    pub common: Common,

    /// Feature dump written by `train`.
    #[arg(long, value_name = "PATH")]
    pub features: PathBuf,

    /// Cap on positive and on negative pairs; larger sets are sampled.
    #[arg(long, default_value_t = 100_000)]
    pub max_pairs: usize,

    #[arg(long, default_value_t = 50)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,

    #[arg(long, value_name = "PATH")]
    pub features: PathBuf,

    #[arg(long, default_value_t = 3000)]
    pub max_pairs: usize,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[command(flatten)]
    pub common: Common,

    #[arg(long, value_name = "PATH")]
    pub probes: PathBuf,

    #[arg(long, value_name = "PATH")]
    pub gallery: PathBuf,

    /// Feature dump whose rows form the distractor pool. Without it the pool
    /// is Gaussian random features drawn from --seed.
    #[arg(long, value_name = "PATH")]
    pub distractors: Option<PathBuf>,

    /// Size of the random pool when --distractors is absent.
    #[arg(long, default_value_t = 1000)]
    pub pool: usize,

    #[arg(long, value_delimiter = ',', default_value = "10,100,1000")]
    pub counts: Vec<usize>,

    #[arg(long, default_value_t = 20)]
    pub trials: usize,

    #[arg(long, default_value_t = 10)]
    pub ranks: usize,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub common: Common,

    /// Score table with probe labels, used to fit calibrations and weights.
    #[arg(long, value_name = "PATH", required_unless_present = "calibration")]
    pub validation: Option<PathBuf>,

    /// Previously fitted calibration document to reuse instead of fitting.
    #[arg(long, value_name = "PATH", conflicts_with = "validation")]
    pub calibration: Option<PathBuf>,

    /// Score table whose probes are assigned identities.
    #[arg(long, value_name = "PATH")]
    pub test: Option<PathBuf>,

    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,

    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct AlphaArgs {
    #[arg(long)]
    pub classes: usize,

    #[arg(long, default_value_t = 1e-4)]
    pub target_loss: f64,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[command(flatten)]
    pub common: Common,

    /// `point_id,x,y` keypoints to be mapped.
    #[arg(long, value_name = "PATH")]
    pub source: PathBuf,

    /// `point_id,x,y` keypoints of the base location.
    #[arg(long, value_name = "PATH")]
    pub target: PathBuf,
}
