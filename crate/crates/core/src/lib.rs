//! Training-free backbone search by maximising multi-scale Gaussian entropy.
//!
//! The crate is `no_std` (with `alloc`) and holds every piece of the search
//! that is pure computation:
//!
//! - [`arch`]: the block-level architecture IR and its validity rules,
//! - [`cost`]: analytic FLOPs / parameter / depth counters,
//! - [`tensor`] and [`forward`]: a small CHW inference engine with
//!   Gaussian-initialised convolutions and per-unit rescaling,
//! - [`entropy`]: single-stage and multi-scale entropy scores,
//! - [`evolution`]: coarse-to-fine evolutionary search under budgets.
//!
//! File formats, configuration and the command line live in the
//! `entropynas` crate.

#![no_std]

extern crate alloc;

pub mod arch;
pub mod cost;
pub mod entropy;
pub mod evolution;
pub mod forward;
pub mod rng;
pub mod tensor;
pub mod zoo;

pub use arch::{ArchitectureSpec, BlockSpec, BlockType, Resolution, ValidationError, Violation};
pub use cost::CostReport;
pub use entropy::{EntropyReport, MsepScorer, MsepWeights, ScoreError, Scorer};
pub use evolution::{SearchConfig, SearchError, SearchResult};
pub use forward::{RescaleLedger, RescaleRule};
pub use rng::SeededRng;
pub use tensor::FeatureMap;
