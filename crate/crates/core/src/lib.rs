//! Maximum likelihood clustering with mixtures of elliptically symmetric
//! distributions under an eigen-ratio constraint on the scatter matrices.
//!
//! The crate covers density generators ([`generators`]), single component
//! densities ([`esd`]), mixture evaluation and MAP classification
//! ([`mixture`]), the eigen-ratio constraint ([`erc`]), ECM fitting ([`em`])
//! and simulation experiments on shifted nonparametric mixtures ([`lab`]).

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod em;
pub mod erc;
pub mod error;
pub mod esd;
pub mod generators;
pub mod lab;
pub mod mixture;

pub use em::{fit, Diagnostics, FitConfig, FitResult, Model};
pub use erc::ErcConfig;
pub use error::{Error, Result};
pub use esd::Scatter;
pub use generators::DensityGenerator;
pub use mixture::{MixtureParams, PosteriorMatrix};
