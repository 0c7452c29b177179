//! Ideology regression and demographic gap analysis over simulated votes.

mod gaps;
mod logistic;

use thiserror::Error;

use crate::domain::{ideology_to_scale, VoteChoice};
use crate::pipeline::SimulationRecord;

pub use gaps::{demographic_gaps, two_party_gap, DemographicGapReport, Dimension, GroupGap, ReferenceRow, ReferenceTable};
pub use logistic::{fit_logistic, logistic_fixture, FitOptions, RegressionResult};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no points to fit")]
    EmptyInput,
    #[error("all outcomes are in one class")]
    OneClassOnly,
    #[error("point {0} has a non-finite predictor")]
    InvalidPoint(usize),
    #[error("record for unknown persona {0}")]
    UnknownPersona(String),
    #[error("reference table: {0}")]
    Reference(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// (ideology scale, voted Republican) for records with a substantive
/// inferred ideology and a two-party vote.
pub fn ideology_vote_points(records: &[SimulationRecord]) -> Vec<(f64, bool)> {
    records
        .iter()
        .filter_map(|r| {
            let scale = ideology_to_scale(r.inferred_ideology?)?;
            match r.vote? {
                VoteChoice::Republican => Some((scale as f64, true)),
                VoteChoice::Democratic => Some((scale as f64, false)),
                VoteChoice::NoPreference => None,
            }
        })
        .collect()
}
