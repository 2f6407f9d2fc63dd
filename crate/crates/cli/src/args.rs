use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ttpredict::estimator::Threshold;
use ttpredict::projection::{DEFAULT_SPARSITY, ProjectionScheme, ProjectionSpec};
use ttpredict::spectrum::DEFAULT_ALPHA;
use ttpredict::{BatchSize, CurveKind, LossKind, Result, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "ttpredict", version, about = "Predict training time from linearized dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the empirical kernel and its eigenvalue table.
    Kernel(KernelArgs),
    /// Simulate the loss curve and estimate the ε-training time.
    Predict(PredictArgs),
    /// Predict the loss curve on a larger dataset from a subset.
    Extrapolate(ExtrapolateArgs),
    /// Train a reference model on synthetic blobs and export its gradients.
    Oracle(OracleArgs),
    /// Compare training times read off two curve tables.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Mse,
    Ce,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CurveArg {
    Loss,
    Error,
}

impl From<CurveArg> for CurveKind {
    fn from(c: CurveArg) -> Self {
        match c {
            CurveArg::Loss => CurveKind::Loss,
            CurveArg::Error => CurveKind::Error,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Sign,
    Gaussian,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Linear,
    Mlp1,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Gd,
    Sgd,
}

fn parse_threshold(s: &str) -> std::result::Result<Threshold, String> {
    s.parse::<Threshold>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    /// Omit (or pass N) for full-batch descent.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 150)]
    pub steps: usize,
    /// Absolute threshold, or a percentage of the curve range such as `10%`.
    #[arg(long, default_value = "0.01", value_parser = parse_threshold)]
    pub epsilon: Threshold,
    #[arg(long, value_enum, default_value_t = LossArg::Mse)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl RunArgs {
    pub fn config(&self, n_samples: usize) -> RunConfig {
        let batch_size = match self.batch_size {
            Some(b) if b != n_samples => BatchSize::Finite(b),
            _ => BatchSize::Full,
        };
        let defaults = RunConfig::default();
        RunConfig {
            learning_rate: self.lr,
            momentum: self.momentum,
            batch_size,
            total_steps: self.steps,
            epsilon: match self.epsilon {
                Threshold::Absolute(e) => e,
                Threshold::RangeFraction(_) => defaults.epsilon,
            },
            loss_kind: match self.loss {
                LossArg::Mse => LossKind::Mse,
                LossArg::Ce => LossKind::CrossEntropy,
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ProjectionArgs {
    /// Project gradients to this many columns first.
    #[arg(long)]
    pub project_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub project_seed: u64,
    #[arg(long, default_value_t = DEFAULT_SPARSITY)]
    pub sparsity: f64,
    #[arg(long, value_enum, default_value_t = SchemeArg::Sign)]
    pub scheme: SchemeArg,
}

impl ProjectionArgs {
    pub fn spec(&self, input_dim: usize) -> Result<Option<ProjectionSpec>> {
        let Some(dim) = self.project_dim else {
            return Ok(None);
        };
        let mut spec = match self.scheme {
            SchemeArg::Sign => ProjectionSpec::sign_sparse(input_dim, dim, self.project_seed),
            SchemeArg::Gaussian => ProjectionSpec::gaussian(input_dim, dim, self.project_seed),
        };
        if spec.scheme == ProjectionScheme::SignSparse {
            spec.sparsity = self.sparsity;
        }
        spec.validate()?;
        Ok(Some(spec))
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Directory for report and curve files.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Add wall-clock timings to the report (makes it non-reproducible).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    pub gradients: PathBuf,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub gradients: PathBuf,
    pub labels: PathBuf,
    pub f0: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub projection: ProjectionArgs,
    /// SDE replicates, seeded `seed, seed+1, ...`.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub half_window: Option<usize>,
    #[arg(long, value_enum, default_value_t = CurveArg::Loss)]
    pub curve: CurveArg,
    /// Use the squared-error closed form instead of integrating.
    #[arg(long)]
    pub closed_form: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ExtrapolateArgs {
    pub gradients: PathBuf,
    pub labels: PathBuf,
    pub f0: PathBuf,
    #[arg(long)]
    pub target_n: usize,
    /// Squared norm of the initial residual on the larger dataset.
    #[arg(long)]
    pub target_norm_sq: f64,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Anchor index of the projection tail; defaults to min(100, N₀).
    #[arg(long)]
    pub k0: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::Linear)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 100)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 10)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 2.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    #[arg(long, default_value_t = ttpredict::oracle::DEFAULT_INIT_SCALE)]
    pub init_scale: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Gd)]
    pub mode: ModeArg,
    /// Train the first-order expansion around the initial weights.
    #[arg(long)]
    pub linearized: bool,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub predicted: PathBuf,
    pub actual: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1%,10%,40%", value_parser = parse_threshold)]
    pub epsilons: Vec<Threshold>,
    #[arg(long, value_enum, default_value_t = CurveArg::Loss)]
    pub curve: CurveArg,
    #[command(flatten)]
    pub output: OutputArgs,
}
