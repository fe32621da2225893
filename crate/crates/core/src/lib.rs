//! Camera-trap labeling pipeline: dataset manifests, a synthetic generator,
//! a multi-task reference classifier, class-imbalance remedies, ensembles,
//! evaluation metrics and confidence thresholding.

pub mod domain;
pub mod ensemble;
pub mod error;
pub mod imbalance;
pub mod io;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod par;
pub mod prep;
pub mod synthgen;
pub mod threshold;

pub use error::{Error, Result};
pub use par::Execution;
