//! State-level accuracy: predicted shares, electoral-vote weighted errors and
//! winner calls.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{StateCategory, StateInfo, VoteChoice};
use crate::pipeline::SimulationRecord;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no states to score")]
    EmptyInput,
    #[error("predicted share is undefined for entry {0}")]
    UndefinedShare(usize),
    #[error("invalid metric input: {0}")]
    Invalid(String),
    #[error("no actual result for {0}")]
    MissingActual(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Republican share of the two-party vote; `None` when both counts are zero.
pub fn predicted_share(dem: u64, rep: u64) -> Option<f64> {
    let total = dem + rep;
    (total > 0).then(|| rep as f64 / total as f64)
}

/// One state's predicted share `P`, actual share `R` and weight `E`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub predicted: Option<f64>,
    pub actual: f64,
    pub weight: f64,
}

impl Scored {
    pub fn new(predicted: f64, actual: f64, weight: f64) -> Self {
        Self { predicted: Some(predicted), actual, weight }
    }
}

fn weighted_mean(results: &[Scored], f: impl Fn(f64) -> f64) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, s) in results.iter().enumerate() {
        let p = s.predicted.ok_or(MetricsError::UndefinedShare(i))?;
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&s.actual) {
            return Err(MetricsError::Invalid(format!("entry {i}: shares must lie in [0, 1]")));
        }
        if !(s.weight.is_finite() && s.weight > 0.0) {
            return Err(MetricsError::Invalid(format!("entry {i}: weight must be positive")));
        }
        num += s.weight * f(p - s.actual);
        den += s.weight;
    }
    Ok(num / den)
}

/// Weighted absolute error.
pub fn wae(results: &[Scored]) -> Result<f64, MetricsError> {
    weighted_mean(results, f64::abs)
}

/// Weighted mean squared error.
pub fn wmse(results: &[Scored]) -> Result<f64, MetricsError> {
    weighted_mean(results, |d| d * d)
}

/// Weighted signed error; positive means the Republican share is
/// overestimated.
pub fn bias_metric(results: &[Scored]) -> Result<f64, MetricsError> {
    weighted_mean(results, |d| d)
}

/// Vote tallies for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateResult {
    pub state: StateInfo,
    pub dem_votes: u64,
    pub rep_votes: u64,
    pub no_pref: u64,
    pub unparseable: u64,
    /// Records that ended in a backend error.
    #[serde(default)]
    pub failed: u64,
}

impl StateResult {
    pub fn empty(state: StateInfo) -> Self {
        Self { state, dem_votes: 0, rep_votes: 0, no_pref: 0, unparseable: 0, failed: 0 }
    }

    pub fn add(&mut self, rec: &SimulationRecord) {
        match (rec.vote, &rec.error) {
            (_, Some(_)) => self.failed += 1,
            (Some(VoteChoice::Democratic), None) => self.dem_votes += 1,
            (Some(VoteChoice::Republican), None) => self.rep_votes += 1,
            (Some(VoteChoice::NoPreference), None) => self.no_pref += 1,
            (None, None) => self.unparseable += 1,
        }
    }

    pub fn tally<'a>(state: StateInfo, records: impl IntoIterator<Item = &'a SimulationRecord>) -> Self {
        let mut r = Self::empty(state);
        records.into_iter().for_each(|rec| r.add(rec));
        r
    }

    pub fn predicted_share(&self) -> Option<f64> {
        predicted_share(self.dem_votes, self.rep_votes)
    }

    pub fn total(&self) -> u64 {
        self.dem_votes + self.rep_votes + self.no_pref + self.unparseable + self.failed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    Democratic,
    Republican,
    NoCall,
}

impl Winner {
    fn index(self) -> usize {
        match self {
            Winner::Democratic => 0,
            Winner::Republican => 1,
            Winner::NoCall => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Winner::Democratic => "D",
            Winner::Republican => "R",
            Winner::NoCall => "NC",
        }
    }
}

/// How a share of exactly one half is called.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    NoCall,
    Democratic,
    Republican,
}

pub fn call_winner(share: Option<f64>, tie: TieRule) -> Winner {
    match share {
        None => Winner::NoCall,
        Some(s) if s > 0.5 => Winner::Republican,
        Some(s) if s < 0.5 => Winner::Democratic,
        Some(_) => match tie {
            TieRule::NoCall => Winner::NoCall,
            TieRule::Democratic => Winner::Democratic,
            TieRule::Republican => Winner::Republican,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateCall {
    pub state: String,
    pub category: StateCategory,
    pub predicted: Winner,
    pub actual: Winner,
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallAccuracy {
    pub correct: u32,
    pub incorrect: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallSummary {
    pub calls: Vec<StateCall>,
    /// Rows are the predicted winner, columns the actual one, both in the
    /// order Democratic, Republican, no call.
    pub confusion: [[u32; 3]; 3],
    pub by_category: BTreeMap<StateCategory, CallAccuracy>,
}

/// Calls every state and compares with the actual winner.
pub fn call_states(results: &[StateResult], tie: TieRule) -> Result<CallSummary, MetricsError> {
    let mut summary = CallSummary { calls: Vec::new(), confusion: [[0; 3]; 3], by_category: BTreeMap::new() };
    for r in results {
        let actual_share =
            r.state.actual_republican_share.ok_or_else(|| MetricsError::MissingActual(r.state.code.clone()))?;
        let predicted = call_winner(r.predicted_share(), tie);
        let actual = call_winner(Some(actual_share), tie);
        let correct = predicted == actual && predicted != Winner::NoCall;
        summary.confusion[predicted.index()][actual.index()] += 1;
        let acc = summary.by_category.entry(r.state.category).or_default();
        if correct {
            acc.correct += 1;
        } else {
            acc.incorrect += 1;
        }
        summary.calls.push(StateCall { state: r.state.code.clone(), category: r.state.category, predicted, actual, correct });
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub state: String,
    pub predicted: f64,
    pub actual: f64,
    pub electoral_votes: u32,
    pub abs_error: f64,
    pub call: Winner,
    pub actual_winner: Winner,
}

/// Accuracy summary. `wae`, `wmse` and `bm` are fractions scaled by 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub wae: f64,
    pub wmse: f64,
    pub bm: f64,
    pub per_state: Vec<StateRow>,
    pub confusion: [[u32; 3]; 3],
    pub call_accuracy: BTreeMap<StateCategory, CallAccuracy>,
    /// States left out, with the reason.
    pub excluded: Vec<(String, String)>,
}

impl MetricReport {
    /// Scores the states that have both an actual result and a defined
    /// predicted share; the rest are listed in `excluded`.
    pub fn build(results: &[StateResult], tie: TieRule) -> Result<Self, MetricsError> {
        let mut excluded = Vec::new();
        let mut usable = Vec::new();
        for r in results {
            if r.state.actual_republican_share.is_none() {
                warn!("{}: no actual result, excluded from metrics", r.state.code);
                excluded.push((r.state.code.clone(), "missing actual".to_string()));
            } else if r.predicted_share().is_none() {
                warn!("{}: no two-party votes, excluded from metrics", r.state.code);
                excluded.push((r.state.code.clone(), "undefined predicted share".to_string()));
            } else {
                usable.push(r.clone());
            }
        }
        let scored: Vec<Scored> = usable
            .iter()
            .map(|r| Scored {
                predicted: r.predicted_share(),
                actual: r.state.actual_republican_share.unwrap_or_default(),
                weight: r.state.electoral_votes as f64,
            })
            .collect();
        let calls = call_states(&usable, tie)?;
        let per_state = usable
            .iter()
            .zip(&scored)
            .zip(&calls.calls)
            .map(|((r, s), c)| {
                let p = s.predicted.unwrap_or_default();
                StateRow {
                    state: r.state.code.clone(),
                    predicted: p,
                    actual: s.actual,
                    electoral_votes: r.state.electoral_votes,
                    abs_error: (p - s.actual).abs(),
                    call: c.predicted,
                    actual_winner: c.actual,
                }
            })
            .collect();
        Ok(Self {
            wae: 100.0 * wae(&scored)?,
            wmse: 100.0 * wmse(&scored)?,
            bm: 100.0 * bias_metric(&scored)?,
            per_state,
            confusion: calls.confusion,
            call_accuracy: calls.by_category,
            excluded,
        })
    }

    /// Per-state table: state, P, R, E, abs_error, call.
    pub fn write_state_csv<W: Write>(&self, w: W) -> Result<(), MetricsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["state", "P", "R", "E", "abs_error", "call", "actual"])?;
        for row in &self.per_state {
            out.write_record([
                row.state.clone(),
                format!("{:.6}", row.predicted),
                format!("{:.6}", row.actual),
                row.electoral_votes.to_string(),
                format!("{:.6}", row.abs_error),
                row.call.as_str().to_string(),
                row.actual_winner.as_str().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Table-style summary with two decimals.
    pub fn summary_line(&self) -> String {
        format!("WAE {:.2}%  WMSE {:.2}%  BM {:+.2}%", self.wae, self.wmse, self.bm)
    }
}
