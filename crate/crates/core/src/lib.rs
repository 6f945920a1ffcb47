//! Desk-scale laboratory for uncertainty quantification in neural-network
//! interatomic potentials.
//!
//! The crate trains small differentiable potentials against analytic oracle
//! potentials, quantifies prediction uncertainty with four schemes
//! (ensemble variance, mean-variance estimation, deep evidential
//! regression, latent-space Gaussian mixtures), scores the schemes with
//! rank/ROC/calibration metrics, and closes an active-learning loop through
//! gradient-ascent adversarial sampling and molecular-dynamics stability
//! evaluation.

pub mod adversarial;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gmm;
pub mod md;
pub mod metrics;
pub mod oracle;
pub mod potential;
pub mod special;
pub mod train;
pub mod uncertainty;

pub use error::{Error, Result};
