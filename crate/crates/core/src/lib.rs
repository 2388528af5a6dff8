//! Data programming toolkit.
//!
//! Weak supervision is written as labeling functions ([`lfkit`]), applied to a
//! corpus to produce a vote matrix ([`applier`]), inspected with per-LF
//! diagnostics ([`analysis`]) and aggregated into probabilistic labels either by
//! a generative label model ([`labelmodels`]) or by a semi-supervised joint
//! model over features and LF votes ([`jointlearn`]). [`subset`] picks which
//! instances are worth labeling by hand.

pub mod analysis;
pub mod applier;
pub mod config;
pub mod error;
pub mod jointlearn;
pub mod labelmodels;
pub mod lfkit;
mod math;
pub mod subset;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    DataSplit, Instance, LabelId, LabelSpace, Role, ScoreMatrix, ValidationReport, VoteMatrix,
    ABSTAIN,
};

/// Version written into every file this crate emits.
pub const FORMAT_VERSION: u32 = 1;
