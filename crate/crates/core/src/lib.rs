//! Probabilistic volatility forecasting with mixture density networks.
//!
//! The crate covers the whole pipeline: market-data ingestion and synthetic
//! markets ([`ingest`]), technical indicators and realized range volatility
//! ([`features`]), Gaussian mixtures ([`gmm`]), a small reverse-mode autodiff
//! engine ([`nn`]), the mixture density network ([`mdn`]), GARCH-family
//! baselines ([`garch`]), scoring and significance tests ([`eval`]), embedding
//! visualisation ([`viz`]) and the command layer used by the CLI
//! ([`pipeline`]).

pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod garch;
pub mod gmm;
pub mod ingest;
pub mod mdn;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod viz;

mod par;
pub use par::set_threads;

pub use error::{Error, Result};
pub use gmm::GaussianMixture;
