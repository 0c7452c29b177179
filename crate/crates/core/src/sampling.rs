//! Per-state random sampling with a minimum-sample-size floor.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Persona;
use crate::seed::rng;
use crate::synthpop::normal_quantile;

pub const DEFAULT_MIN_SAMPLE: usize = 4269;
pub const DEFAULT_RATIO: f64 = 1.0 / 1000.0;
pub const RECOMMENDED_RATIO_RANGE: (f64, f64) = (1.0 / 2000.0, 1.0 / 100.0);

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("{name} must lie strictly between 0 and 1, got {value}")]
    Domain { name: &'static str, value: f64 },
    #[error("cannot sample from an empty population")]
    EmptyPopulation,
    #[error("personas span several states ({0} and {1})")]
    MixedStates(String, String),
    #[error("invalid sampling plan: {0}")]
    InvalidPlan(String),
}

/// Worst-case (p = 0.5) sample size for estimating a proportion to within
/// `margin` at the given two-sided `confidence`: `ceil((z / (2·margin))²)`.
pub fn required_sample_size(confidence: f64, margin: f64) -> Result<u64, SamplingError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(SamplingError::Domain { name: "confidence", value: confidence });
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(SamplingError::Domain { name: "margin", value: margin });
    }
    let z = normal_quantile((1.0 + confidence) / 2.0);
    let n = (z / (2.0 * margin)).powi(2).ceil();
    Ok(n as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPlan {
    pub per_state_ratio: BTreeMap<String, f64>,
    pub default_ratio: f64,
    pub min_sample: usize,
    pub confidence: f64,
    pub margin_of_error: f64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            per_state_ratio: BTreeMap::new(),
            default_ratio: DEFAULT_RATIO,
            min_sample: DEFAULT_MIN_SAMPLE,
            confidence: 0.95,
            margin_of_error: 0.015,
        }
    }
}

impl SamplingPlan {
    /// Hard violations are errors; ratios outside the recommended
    /// `[1/2000, 1/100]` band come back as warnings.
    pub fn validate(&self) -> Result<Vec<String>, SamplingError> {
        if self.min_sample < 1 {
            return Err(SamplingError::InvalidPlan("min_sample must be at least 1".into()));
        }
        if !(self.margin_of_error > 0.0 && self.margin_of_error < 1.0) {
            return Err(SamplingError::InvalidPlan("margin_of_error must lie in (0, 1)".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(SamplingError::InvalidPlan("confidence must lie in (0, 1)".into()));
        }
        let mut warnings = Vec::new();
        let ratios = self.per_state_ratio.iter().map(|(k, v)| (k.as_str(), *v)).chain([("default", self.default_ratio)]);
        for (state, ratio) in ratios {
            if !(ratio > 0.0) {
                return Err(SamplingError::InvalidPlan(format!("ratio for {state} must be positive")));
            }
            let (lo, hi) = RECOMMENDED_RATIO_RANGE;
            if ratio < lo || ratio > hi {
                warnings.push(format!("sampling ratio {ratio} for {state} is outside [1/2000, 1/100]"));
            }
        }
        Ok(warnings)
    }

    pub fn ratio_for(&self, state: &str) -> f64 {
        self.per_state_ratio.get(state).copied().unwrap_or(self.default_ratio)
    }

    /// `max(ceil(ratio·N), min_sample)`, before capping at `N`.
    pub fn target_size(&self, state: &str, population: usize) -> usize {
        let by_ratio = (self.ratio_for(state) * population as f64).ceil() as usize;
        by_ratio.max(self.min_sample)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSample {
    pub state: String,
    pub personas: Vec<Persona>,
    pub requested: usize,
    /// The requested size exceeded the population, so everyone was taken.
    pub capped: bool,
}

/// Uniform sample without replacement (seeded Fisher–Yates prefix), returned
/// sorted by persona id.
pub fn sample_state(personas: &[Persona], plan: &SamplingPlan, seed: u64) -> Result<StateSample, SamplingError> {
    let first = personas.first().ok_or(SamplingError::EmptyPopulation)?;
    let state = first.residence_state.clone();
    if let Some(other) = personas.iter().find(|p| p.residence_state != state) {
        return Err(SamplingError::MixedStates(state, other.residence_state.clone()));
    }
    let n = personas.len();
    let requested = plan.target_size(&state, n);
    let capped = requested > n;
    if capped {
        warn!("{state}: requested sample of {requested} exceeds population {n}; taking all personas");
    }
    let size = requested.min(n);
    let idx = fisher_yates_prefix(n, size, seed);
    let mut chosen: Vec<Persona> = idx.into_iter().map(|i| personas[i].clone()).collect();
    chosen.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(StateSample { state, personas: chosen, requested, capped })
}

/// First `k` entries of a seeded Fisher–Yates shuffle of `0..n`.
pub fn fisher_yates_prefix(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = r.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k.min(n));
    idx
}
