//! Protein sequence generation by Langevin sampling of a modern Hopfield
//! energy over a family's stored sequences.

pub mod baselines;
pub mod betafit;
pub mod container;
pub mod diagnostics;
pub mod embed;
pub mod energy;
pub mod error;
pub mod metrics;
pub mod msa;
pub mod pipeline;
pub mod sampler;
pub mod synthetic;

pub use error::{Error, Result};
