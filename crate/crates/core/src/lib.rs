//! Federated K-means with secure aggregation and exact unlearning.
//!
//! Clients cluster locally, quantize their centroids onto a grid and send
//! masked power sums of the resulting bin counts. The server recovers the
//! exact aggregate counts, reclusters them, and can serve removal requests
//! by resampling only the affected part of each client's seeding.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod clustering;
pub mod eval;
pub mod federation;
pub mod field;
pub mod grid;
mod poly;
pub mod scma;
pub mod seed;

pub use field::{FieldError, FieldModulus};
pub use grid::{GridError, GridSpec, ScaleTransform};
pub use scma::{ScmaError, ScmaParams, SparseMultiset, SyndromeVector};
