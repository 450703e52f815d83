//! Patch matching with over-complete sparse codes.
//!
//! A dictionary is learned once from a sample of patches: a heat-kernel
//! p-NN graph ([`graph`]) is embedded by the generalized eigenproblem of
//! its Laplacian ([`spectral`]) and the basis is ridge-fit against that
//! embedding ([`dictionary`]). Every patch is then coded by LARS-lasso
//! ([`sparse_coder`]), pairs of codes are concatenated and classified by a
//! small fully-connected network ([`matcher_net`]), and the scores are
//! summarized by ROC and error@95 ([`evaluation`]).

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod dictionary;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod matcher_net;
pub mod patchdata;
pub mod sparse_coder;
pub mod spectral;

pub use error::{Error, ErrorKind, Result};
