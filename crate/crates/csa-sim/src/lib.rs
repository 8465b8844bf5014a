//! Desk-scale, end-to-end simulator of cognitive-semantic Earth-observation
//! communication over LEO satellite links: link geometry and budgets, fading
//! channels, 16-ary modems, a discrete task-oriented joint source-channel
//! codec on a synthetic multispectral classification task, semantic data
//! augmentation, and the two-satellite relay protocol with a sweep harness.

pub mod channel;
pub mod config;
pub mod data;
pub mod dtjscc;
pub mod error;
pub mod geometry;
pub mod linkbudget;
pub mod metrics;
pub mod modem;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod semaug;

pub use error::SimError;

/// Version stamped into the first column of every emitted CSV.
pub const CSV_SCHEMA_VERSION: u32 = 1;
