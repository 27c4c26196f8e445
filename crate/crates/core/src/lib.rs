//! Tabular classification through class-conditioned latent images, with
//! VIF-informed initialisation and dual-path SHAP attribution.

pub mod attribution;
pub mod data;
mod error;
pub mod eval;
pub mod model;
pub mod vif;

pub use error::{Error, Result};
