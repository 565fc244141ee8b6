//! Finite-time distributed k-means over directed graphs with integer-valued
//! messages and exact rational centroids.
//!
//! Nodes run a mass-accumulation average consensus per cluster, detect
//! agreement with windowed max/min-consensus, and stop transmitting once the
//! centroids stop moving. Everything is deterministic and uses exact
//! arithmetic; [`sim`] drives whole networks in lock-step and [`oracle`]
//! provides centralized references.

#![no_std]

extern crate alloc;

pub mod consensus;
pub mod coordination;
pub mod exactmath;
pub mod graph;
pub mod kmeans;
pub mod oracle;
pub mod scenario;
pub mod sim;

pub use exactmath::{Fraction, FractionVector};
pub use graph::{Digraph, NodeId};
pub use kmeans::CentroidSet;
pub use num_bigint::BigInt;
