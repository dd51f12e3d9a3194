//! Riemann-Theta Boltzmann machines (RTBMs): exact visible-sector densities,
//! analytic marginals, conditional densities obtained by reparameterizing the
//! parent machine, exact mixture sampling and CMA-ES maximum-likelihood
//! fitting.

pub mod cmaes;
pub mod data;
pub mod density;
pub mod error;
pub mod fit;
pub mod fixtures;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod sampling;
pub mod theta;

pub use data::Dataset;
pub use density::{condition, condition_on, log_marginal, log_pdf, Rtbm};
pub use error::{Error, Result};
pub use model::{
    block_split, permute, validate, BlockDecomposition, Lattice, RtbmParams, ValidationReport,
};
pub use theta::{log_theta, log_theta_reference, ThetaQuery, ThetaSum};
