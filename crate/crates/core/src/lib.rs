#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Initialization regimes, weight-space ensembles and evaluation statistics
//! for a small image classifier studied under periodic data arrival and
//! distribution shift.

pub mod agelfs;
pub mod config;
pub mod data;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod gp;
pub mod init;
pub mod io;
pub mod nn;
pub mod protocol;
pub mod reference;
pub mod stats;
pub mod tensor;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use tensor::{LayerWeights, TensorF, WeightSet};
