//! Quantile regression with covariates missing not at random.
//!
//! The covariate vector `X` may be missing, with a missingness probability
//! that depends on the fully observed `(Y, Z)` through a logistic model.
//! Complete cases are reweighted by empirical-likelihood weights built from
//! the incomplete rows, which keeps the estimator consistent while using the
//! information in the rows that lack `X`.

pub mod data;
pub mod elweights;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod missingness;
pub mod quantile;
pub mod simgen;

pub use data::{Dataset, Record};
pub use error::{Error, Result, Stage};
pub use quantile::{DesignRow, QuantileLevel};
pub use estimators::{Estimator, FitResult};
