//! Distributional refinement networks: neural adjustment of a parametric
//! baseline density over a partition of the response range.

pub mod baselines;
pub mod datagen;
pub mod diffengine;
pub mod dist;
pub mod drn;
pub mod error;
pub mod explain;
pub mod glm;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod partition;
pub mod scalar;
pub mod special;
pub mod train;

pub use dist::ContinuousDist;
pub use error::{DrnError, Result};
pub use scalar::Scalar;

pub type Mlp = diffengine::MlpParams<f64>;
pub type Gamma = glm::GammaDist<f64>;
pub type Glm = glm::GammaGlmModel<f64>;
pub type Cutpoints = partition::Partition<f64>;
pub type Drn = drn::DrnModel<f64>;
pub type Refined = drn::RefinedDistribution<f64>;
