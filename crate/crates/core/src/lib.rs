//! Training-time prediction from the linearized dynamics of a model in
//! function space.

pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod ingest;
pub mod kernel;
pub mod loss;
pub mod oracle;
pub mod projection;
pub mod spectrum;
pub mod types;

pub use dynamics::{NoiseModel, Trajectory};
pub use error::{Error, Result};
pub use estimator::{predict_training_time, PredictOptions, TTReport, Threshold};
pub use ingest::{Dtype, GradientMatrix};
pub use kernel::{build_kernel, sym_eig, EigenSystem, KernelMatrix, ResidualProjections};
pub use oracle::{ModelKind, ModelSpec, TrainMode, TrainRun};
pub use projection::{project_gradients, ProjectionScheme, ProjectionSpec};
pub use spectrum::{ExtrapolationConfig, PowerLawFit};
pub use types::{BatchSize, CurveKind, LabelSet, LossCurve, LossKind, OutputVector, RunConfig};
