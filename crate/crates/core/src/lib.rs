//! DSC-MRI perfusion quantification and regional perfusion-map descriptors.
//!
//! The crate turns 4D dynamic-susceptibility-contrast series into CBF, CBV,
//! MTT and Tmax maps (truncated-SVD deconvolution against an automatically
//! selected arterial input function), summarises every atlas region of every
//! map with seven histogram statistics, and runs the group analyses on the
//! resulting feature table: rank-sum screening of regional and hemispheric
//! asymmetry features, and a class-balanced logistic regression evaluated by
//! leave-one-out cross-validation with bootstrap intervals and linear SHAP.
//!
//! A synthetic phantom with analytic ground truth ([`phantom`]) drives the
//! end-to-end checks.

pub mod atlas;
pub mod cli;
pub mod descriptors;
pub mod error;
pub mod model;
pub mod nifti;
pub mod perfusion;
pub mod phantom;
pub mod stats;
pub mod volume;

pub use error::{Error, Result};
