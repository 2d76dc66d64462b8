//! Preference-based Bayesian optimization with ties.

pub mod acquisition;
pub mod bench;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod fractal;
pub mod kernel;
pub mod lhs;
pub mod likelihood;
pub mod optimizer;
pub mod oracles;
pub mod rng;
pub mod vinfer;

pub use dataset::{dedupe_points, PreferenceDataset};
pub use domain::{Domain, PreferenceOutcome, PreferenceRecord};
pub use error::{Error, Result};
pub use rng::RandomStream;
