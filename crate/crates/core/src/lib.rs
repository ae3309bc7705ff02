//! MixMatch semi-supervised learning at desk scale.
//!
//! The crate bundles everything needed to run the MixMatch batch transform
//! end to end: a small reverse-mode autodiff engine ([`tensor`]), MLP and
//! ConvNet classifiers ([`model`]), synthetic datasets and augmentation
//! ([`data`]), the label-guessing / MixUp transform and its losses ([`ssl`]),
//! comparison methods ([`baselines`]), the optimization loop ([`train`]) and
//! the experiment runner ([`config`], [`experiment`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod rng;
pub mod ssl;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelSpec, ParamSet};
pub use tensor::{Graph, Scalar, Tensor, Var};
