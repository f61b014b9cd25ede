//! Shuffle-model differential privacy: protocol execution, exact privacy
//! accounting and audits, private sums and histograms, and distribution
//! testing, all deterministic given a single seed.

pub mod accounting;
pub mod audit;
pub mod catalog;
pub mod error;
pub mod histograms;
pub mod model;
pub mod sums;
pub mod testing;

pub use catalog::{Output, Protocol, Row};
pub use error::{Error, Result};
pub use model::{
    derive_rng, execute, execute_partial, execute_transcript, shuffle, subseed, MessageBundle,
    PublicRandomness, Symbol, Transcript,
};
