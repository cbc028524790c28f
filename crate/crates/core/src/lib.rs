//! Collaborative filtering over user × item × rating tensors.
//!
//! The crate provides the LaTTe recommender, a Tucker-decomposed rating
//! tensor whose rating mode is smoothed by a similarity matrix between rating
//! values, together with the CoFFee tensor model, matrix baselines (random,
//! most popular, normalized PureSVD, EASE) and a top-n evaluation protocol
//! that scores positive and negative feedback separately.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod linalg;
pub mod models;
pub mod similarity;
pub mod tuning;

pub use error::{Error, Result};
