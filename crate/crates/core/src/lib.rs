//! Deterministic simulator for federated semi-supervised learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small fully-connected classifier over flat parameter vectors,
//!   with exact backpropagation, the supervised and consistency losses,
//!   sharpening and the EMA teacher update.
//! - [`data`]: synthetic Gaussian blobs, Dirichlet non-IID partitioning,
//!   client role assignment and noise augmentation.
//! - [`local`]: client-side trainers (supervised, mean-teacher, mixed) and the
//!   supervised warm-up.
//! - [`aggregation`]: FedAvg, weight-adjusted averaging, distance-reweighted
//!   aggregation and the sub-consensus mean.
//! - [`orchestrator`]: round drivers for random sub-sampling consensus and the
//!   baselines, with communication accounting.
//! - [`metrics`], [`config`], [`sweep`], [`results`]: the experiment harness.
//!
//! Every stochastic step is driven by seeds derived from a single master seed
//! (see [`seed`]), so runs are bit-reproducible regardless of thread
//! scheduling.

pub mod aggregation;
pub mod config;
pub mod data;
pub mod error;
pub mod local;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod results;
pub mod seed;
pub mod sweep;

pub use error::{Error, Result};
