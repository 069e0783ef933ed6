//! Small-area estimation under the Fay-Herriot model.

pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod gml;
pub mod model;
mod optimize;
pub mod posterior;
pub mod prediction;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod stats;

pub use dataset::{load_dataset, write_dataset, Area, Dataset};
pub use error::{FhError, Result};
pub use gml::{maximize_gml, GmlConfig, LikelihoodBase, Method, VarianceEstimate};
pub use model::{
    conditional_theta_moments, gls_beta, log_profile_likelihood, log_residual_likelihood,
    shrinkage, GlsFit, Hyperparams,
};
