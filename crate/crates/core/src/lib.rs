//! Real-time Bayesian inference for partially observed discrete-time
//! S → I → N → R epidemics: data-augmented MCMC and MCMC-within-SMC.

pub mod diagnostics;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod mcmc;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod simulate;
pub mod smc;

pub use error::{Error, Result};
