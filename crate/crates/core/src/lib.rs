//! Batch engine for simulating individual voting decisions with a pluggable
//! chat-model backend.
//!
//! The crate covers the whole chain: synthetic personas from block
//! aggregates ([`synthpop`]), per-state sampling ([`sampling`]), prompt
//! pipelines over a chat backend ([`pipeline`], [`backend`]), state-level
//! accuracy metrics ([`metrics`]) and the ideology/demographic analyses
//! ([`analysis`]).

pub mod analysis;
pub mod backend;
pub mod domain;
pub mod metrics;
pub mod pipeline;
pub mod sampling;
pub mod seed;
pub mod synthpop;

/// Engine version recorded in every output artifact.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub use domain::{
    ideology_to_scale, validate_persona, ElectionContext, IdeologyLabel, Income, Persona, StateCategory, StateInfo,
    Violation, VoteChoice,
};
pub use metrics::{MetricReport, StateResult};
pub use pipeline::{PipelineVersion, SimulationRecord};
pub use seed::SeedStreams;
