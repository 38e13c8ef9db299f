//! Random-walk multi-agent search with gated consensus.
//!
//! Agents perform a lazy random walk on a `c x c` lattice (a time-homogeneous
//! Markov chain with self-loops). Whenever agents share a node they run one
//! step of a Laplacian consensus update; an agent standing on a feature node is
//! additionally pulled all the way to the reference value. The crate provides:
//!
//! - [`grid`]: the lattice graph and its transition matrix,
//! - [`mobility`]: seeded sampling of walks and evolution of occupancy pmfs,
//! - [`network`]: the per-step communication graph and its Laplacian,
//! - [`consensus`]: the gated update, its augmented matrix form and the stop test,
//! - [`chain_analysis`]: numerical checks of stationarity, irreducibility and the
//!   composite (product) chain,
//! - [`engine`]: a full episode from random initial conditions to consensus,
//! - [`ensemble`]: Monte Carlo sweeps, summary statistics and an exponential fit.

pub mod chain_analysis;
pub mod consensus;
pub mod engine;
pub mod ensemble;
mod error;
pub mod grid;
pub mod matrix;
pub mod mobility;
pub mod network;

pub use error::{Error, Result};
pub use grid::{Node, SpatialGrid, TransitionMatrix};
pub use matrix::SquareMatrix;
