//! Staff contact networks between care facilities, reconstructed from
//! anonymized device location pings.
//!
//! The pipeline runs in stages, each with its own module:
//!
//! - [`ingest`]: ping streams, the facility registry, geocoding and footprints
//! - [`spatial`]: grid-indexed point-in-polygon join and visit qualification
//! - [`network`]: per-state weighted facility graphs and their exports
//! - [`metrics`]: degree, strength, weighted average neighbor degree and
//!   eigenvector centrality, plus distributional summaries
//! - [`econometrics`]: fixed-effects regression of case counts on connectivity
//! - [`synth`]: seeded synthetic scenarios with brute-force oracles

pub mod econometrics;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod metrics;
pub mod network;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
