//! Retrieval contexts for embodied navigation.
//!
//! * [`embedstore`]: append-only unit-vector store with exact top-k.
//! * [`remb`]: `REMB` binary files, metadata sidecars and the append log.
//! * [`retrieval`]: shortlists, MMR re-ranking, goal and category retrieval.
//! * [`simgraph`]: thresholded similarity graphs and waypoint paths.
//! * [`contextkit`]: static, dynamic, random and oracle contexts, plus
//!   Gumbel-softmax slot selection.
//! * [`navsim`]: gridworld scenes, scripted agents and SR/SPL metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod contextkit;
pub mod embedstore;
pub mod navsim;
pub mod remb;
pub mod retrieval;
pub mod scalar;
pub mod simgraph;

pub use scalar::Scalar;

/// Single-precision store, the on-disk precision of `REMB` files.
pub type Store = embedstore::Store<f32>;
pub type Store64 = embedstore::Store<f64>;
pub type SharedStore = embedstore::SharedStore<f32>;
pub type EmbeddingRecord = embedstore::EmbeddingRecord<f32>;
pub type EmbeddingRecord64 = embedstore::EmbeddingRecord<f64>;
pub type Shortlist = retrieval::Shortlist<f32>;
pub type Shortlist64 = retrieval::Shortlist<f64>;
pub type CategoryTable = retrieval::CategoryTable<f64>;
pub type Affinity = simgraph::Affinity<f32>;
pub type SelectorLogits = contextkit::SelectorLogits<f64>;
pub type World<'a> = navsim::World<'a, f32>;
