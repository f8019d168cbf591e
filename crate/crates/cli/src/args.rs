use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use regioncal_core::calibration::Method;
use regioncal_core::svm::{MiningConfig, DEFAULT_REG};
use regioncal_core::weak::DEFAULT_ROUNDS;
use regioncal_core::{GridSpec, SigmoidParams, Supervision, SvmConfig, SyntheticConfig};

/// Region-based semantic segmentation with jointly calibrated SVMs.
#[derive(Debug, Parser)]
#[command(name = "regioncal", version)]
pub struct Cli {
    /// Worker threads for per-image and per-class work [default: all cores]
    #[arg(long, global = true, env = "REGIONCAL_JOBS", value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset
    Generate(GenerateArgs),
    /// Train one linear SVM per class
    Train(TrainArgs),
    /// Fit the per-class sigmoid calibration
    Calibrate(CalibrateArgs),
    /// Label a dataset and report accuracy
    Eval(EvalArgs),
    /// Compare no calibration, Platt scaling and joint calibration
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SupervisionArg {
    Full,
    Weak,
}

impl From<SupervisionArg> for Supervision {
    fn from(value: SupervisionArg) -> Self {
        match value {
            SupervisionArg::Full => Supervision::Full,
            SupervisionArg::Weak => Supervision::Weak,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Moderate imbalance, objects of similar size
    Default,
    /// Strong imbalance: rare classes as small objects on large backgrounds
    Suppression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    None,
    Platt,
    Jc,
}

impl From<MethodArg> for Method {
    fn from(value: MethodArg) -> Self {
        match value {
            MethodArg::None => Method::None,
            MethodArg::Platt => Method::Platt,
            MethodArg::Jc => Method::Jc,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output dataset file
    #[arg(short, long)]
    pub output: PathBuf,

    /// Base configuration that the other flags override
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,

    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub classes: Option<u64>,

    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub images: Option<u64>,

    /// Superpixels per image
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub superpixels: Option<u64>,

    /// Region hierarchies per image
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub hierarchies: Option<u64>,

    /// Exponent of the class-frequency power law
    #[arg(long)]
    pub imbalance: Option<f64>,

    /// How strongly object size shrinks with class rarity, in [0, 1]
    #[arg(long)]
    pub size_imbalance: Option<f64>,

    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub feature_dim: Option<u64>,

    /// Distance between class cluster centres
    #[arg(long)]
    pub separation: Option<f64>,

    /// Standard deviation of the feature noise
    #[arg(long)]
    pub noise: Option<f64>,

    /// Objects per image are drawn from 2..=N
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub max_objects: Option<u64>,

    /// Probability that an object boundary blurs a superpixel
    #[arg(long)]
    pub boundary_mixing: Option<f64>,

    #[arg(long, value_enum)]
    pub supervision: Option<SupervisionArg>,

    #[arg(long)]
    pub seed: Option<u64>,
}

impl GenerateArgs {
    pub fn config(&self) -> SyntheticConfig {
        let mut c = match self.preset {
            Preset::Default => SyntheticConfig::default(),
            Preset::Suppression => SyntheticConfig::suppression(),
        };
        let usize_of = |v: u64| v as usize;
        if let Some(v) = self.classes {
            c.class_count = usize_of(v);
        }
        if let Some(v) = self.images {
            c.images = usize_of(v);
        }
        if let Some(v) = self.superpixels {
            c.superpixels_per_image = usize_of(v);
        }
        if let Some(v) = self.hierarchies {
            c.hierarchy_count = usize_of(v);
        }
        if let Some(v) = self.imbalance {
            c.imbalance_exponent = v;
        }
        if let Some(v) = self.size_imbalance {
            c.size_imbalance = v;
        }
        if let Some(v) = self.feature_dim {
            c.feature_dim = usize_of(v);
        }
        if let Some(v) = self.separation {
            c.cluster_separation = v;
        }
        if let Some(v) = self.noise {
            c.noise_sigma = v;
        }
        if let Some(v) = self.max_objects {
            c.max_objects = usize_of(v);
        }
        if let Some(v) = self.boundary_mixing {
            c.boundary_mixing = v;
        }
        if let Some(v) = self.supervision {
            c.supervision = v.into();
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct SvmArgs {
    /// Regularization strength
    #[arg(long, default_value_t = DEFAULT_REG)]
    pub reg: f64,

    /// Newton stopping tolerance on the squared gradient norm
    #[arg(long, default_value_t = SvmConfig::default().tolerance)]
    pub tolerance: f64,

    #[arg(long, default_value_t = SvmConfig::default().max_iterations)]
    pub max_iterations: usize,

    /// Negatives per mining batch
    #[arg(long, default_value_t = MiningConfig::default().batch_size)]
    pub mining_batch: usize,

    /// A negative is hard when its score exceeds -1 + threshold
    #[arg(long, default_value_t = MiningConfig::default().threshold, allow_negative_numbers = true)]
    pub mining_threshold: f64,

    #[arg(long, default_value_t = MiningConfig::default().max_rounds)]
    pub max_mining_rounds: usize,
}

impl SvmArgs {
    pub fn config(&self) -> SvmConfig {
        SvmConfig {
            reg: self.reg,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            mining: MiningConfig {
                batch_size: self.mining_batch,
                threshold: self.mining_threshold,
                max_rounds: self.max_mining_rounds,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset
    #[arg(long)]
    pub data: PathBuf,

    /// Output model file
    #[arg(short, long)]
    pub output: PathBuf,

    #[command(flatten)]
    pub svm: SvmArgs,

    /// Alternation rounds for image-labeled data
    #[arg(long, default_value_t = DEFAULT_ROUNDS)]
    pub rounds: usize,

    /// Directory for the latent assignment of every round (image-labeled
    /// data only)
    #[arg(long)]
    pub snapshots: Option<PathBuf>,

    /// Record the weak loss of every round (image-labeled data only)
    #[arg(long)]
    pub track_loss: bool,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = GridSpec::default().a_range.0, allow_negative_numbers = true)]
    pub a_min: f64,
    #[arg(long, default_value_t = GridSpec::default().a_range.1, allow_negative_numbers = true)]
    pub a_max: f64,
    #[arg(long, default_value_t = GridSpec::default().b_range.0, allow_negative_numbers = true)]
    pub b_min: f64,
    #[arg(long, default_value_t = GridSpec::default().b_range.1, allow_negative_numbers = true)]
    pub b_max: f64,
    /// Grid values per parameter, endpoints included
    #[arg(long, default_value_t = GridSpec::default().points_per_line)]
    pub grid_points: usize,
    #[arg(long, default_value_t = GridSpec::default().init.a, allow_negative_numbers = true)]
    pub init_a: f64,
    #[arg(long, default_value_t = GridSpec::default().init.b, allow_negative_numbers = true)]
    pub init_b: f64,
}

impl GridArgs {
    pub fn spec(&self) -> GridSpec {
        GridSpec {
            a_range: (self.a_min, self.a_max),
            b_range: (self.b_min, self.b_max),
            points_per_line: self.grid_points,
            init: SigmoidParams {
                a: self.init_a,
                b: self.init_b,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Training dataset
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long)]
    pub models: PathBuf,

    #[arg(long, value_enum, default_value_t = MethodArg::Jc)]
    pub method: MethodArg,

    /// Output calibration file
    #[arg(short, long)]
    pub output: PathBuf,

    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset to label
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long)]
    pub models: PathBuf,

    /// Calibration file [default: the initial constants]
    #[arg(long)]
    pub calibration: Option<PathBuf>,

    /// Also label with the exhaustive reference labeler and require equality
    #[arg(long)]
    pub oracle_check: bool,

    /// Write the report as JSON to this file
    #[arg(long)]
    pub report: Option<PathBuf>,

    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Dataset the calibrations are fitted on
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long)]
    pub models: PathBuf,

    /// Dataset to evaluate on [default: the fitting dataset]
    #[arg(long)]
    pub eval_data: Option<PathBuf>,

    #[command(flatten)]
    pub grid: GridArgs,

    /// Write the comparison as JSON to this file
    #[arg(long)]
    pub report: Option<PathBuf>,

    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}
