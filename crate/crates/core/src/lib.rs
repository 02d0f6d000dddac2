//! Multi-scale intrinsic-network features for medication-response
//! prediction: reference-constrained ICA, static FNC, principal-angle
//! subspace kernels, SMO kernel SVMs, beam-search forward selection and a
//! repeated stratified cross-validation harness, plus a synthetic cohort
//! generator with planted ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod datamodel;
pub mod error;
pub mod fnc;
pub mod kernels;
pub mod eval;
pub mod matrix;
pub mod pipeline;
pub mod scica;
pub mod seeds;
pub mod selection;
pub mod svm;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::{read_matrix, write_matrix, MatrixF64};
