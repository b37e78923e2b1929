//! Joint models for intensive longitudinal outcomes and recurrent events
//! driven by a multivariate Ornstein-Uhlenbeck latent state with
//! time-varying treatment effects.

pub mod archive;
pub mod bundle;
pub mod data;
pub mod error;
pub mod hazard;
pub mod ingest;
pub mod init;
pub mod latent;
pub mod linalg;
pub mod measurement;
pub mod model;
pub mod ou;
pub mod params;
pub mod posterior;
pub mod ppc;
pub mod prior;
pub mod sampler;
pub mod selection;
pub mod stats;
pub mod treatment;

pub mod simulate;

mod statespace;

pub use error::{Error, ErrorClass, Result};
