//! Collaborative open-source sampling between a cloud and a private client.
//!
//! The cloud compresses its feature dataset into a small set of k-means
//! centroids and sends them down. The client counts how many of its private
//! rows fall closest to each centroid, perturbs those counts with Gaussian
//! noise, scales them and sends them back. The cloud turns the scores into
//! per-cluster budgets and picks diverse samples inside each cluster with a
//! farthest-first traversal.
//!
//! Modules follow the life of one protocol run:
//!
//! * [`dataset`]: feature matrices, the `.ecf` file format and distances.
//! * [`clustering`]: seeded k-means producing the [`clustering::Codebook`].
//! * [`diversity`]: farthest-first (k-center) and uniform selection.
//! * [`scoring`]: the client side, from centroids to the uplink report.
//! * [`privacy`]: Rényi-DP curves, composition and (ε, δ) conversion.
//! * [`protocol`]: budgets, decompression, wire messages and full runs.
//! * [`eval`]: metrics, synthetic data and baseline comparisons.
//! * [`cli`]: the `ecos` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod clustering;
pub mod dataset;
pub mod diversity;
pub mod error;
pub mod eval;
pub mod privacy;
pub mod protocol;
pub mod scoring;
pub mod seed;

pub use error::{Error, Result};
