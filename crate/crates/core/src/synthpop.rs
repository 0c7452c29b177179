//! Synthetic personas from block-level aggregates.
//!
//! Individuals are drawn by Gaussian copula downscaling: correlated normals
//! `Z ~ N(0, Σ)` are pushed through `Φ` to uniforms, then through each
//! feature's marginal inverse CDF. Categorical features use the inverse CDF
//! of their cumulative category probabilities so the copula's dependence
//! carries into them. A marginal scaling pass then reassigns the fewest rows
//! needed for every categorical proportion to match its block target.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::domain::{validate_persona, Income, Persona};
use crate::seed::{derive_seed, rng};

pub const DEFAULT_TOL: f64 = 0.01;
pub const DEFAULT_MAX_ITERS: usize = 50;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const PSD_REPAIR_LIMIT: f64 = 1e-6;
const PROB_SUM_TOL: f64 = 1e-9;
/// Rounding allowance when comparing a discrepancy with `tol`; |28/50 − 0.55|
/// evaluates just above 0.01.
const TOL_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("correlation matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("non-positive variance on diagonal entry {0}")]
    BadDiagonal(usize),
    #[error("no marginal available for feature {feature:?} in block {block:?}")]
    MissingMarginal { feature: String, block: String },
    #[error("inverse CDF for {0:?} is flat over the whole domain")]
    DegenerateCdf(String),
    #[error("invalid marginal for {feature:?}: {reason}")]
    InvalidMarginal { feature: String, reason: String },
    #[error("invalid block {block:?}: {reason}")]
    InvalidBlock { block: String, reason: String },
    #[error("sample size must be at least 1")]
    EmptyRequest,
    #[error("uniform value {0} outside (0, 1)")]
    UniformOutOfRange(f64),
    #[error("generated persona {id} is invalid: {reason}")]
    InvalidPersona { id: String, reason: String },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Gaussian copula parameters: a validated correlation matrix and its factor.
#[derive(Debug, Clone)]
pub struct CopulaSpec {
    correlation: DMatrix<f64>,
    factor: DMatrix<f64>,
    repaired: bool,
}

impl CopulaSpec {
    /// Builds a spec from a covariance or correlation matrix. Covariances are
    /// rescaled to unit diagonal. Matrices that miss PSD by less than `1e-6`
    /// are repaired by eigenvalue clipping; larger violations are rejected.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self, SynthError> {
        let d = rows.len();
        if d == 0 {
            return Err(SynthError::DimensionMismatch { expected: 1, got: 0 });
        }
        for r in rows {
            if r.len() != d {
                return Err(SynthError::DimensionMismatch { expected: d, got: r.len() });
            }
        }
        let mut m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        for i in 0..d {
            for j in (i + 1)..d {
                let scale = m[(i, j)].abs().max(m[(j, i)].abs()).max(1.0);
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(SynthError::NotSymmetric { row: i, col: j });
                }
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        for i in 0..d {
            if !(m[(i, i)] > 0.0) {
                return Err(SynthError::BadDiagonal(i));
            }
        }
        let mut corr = normalize_diagonal(&m);
        let eig = SymmetricEigen::new(corr.clone());
        let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let mut repaired = false;
        if min_eig < -PSD_REPAIR_LIMIT {
            return Err(SynthError::NotPsd { min_eigenvalue: min_eig });
        }
        if min_eig < -PSD_TOL {
            let clipped = eig.eigenvalues.map(|l| l.max(0.0));
            let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
            corr = normalize_diagonal(&rebuilt);
            repaired = true;
        }
        let factor = factorize(&corr);
        Ok(Self { correlation: corr, factor, repaired })
    }

    pub fn identity(d: usize) -> Self {
        let eye = DMatrix::identity(d, d);
        Self { correlation: eye.clone(), factor: eye, repaired: false }
    }

    pub fn dimension(&self) -> usize {
        self.correlation.nrows()
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    /// Whether the input needed eigenvalue clipping to become PSD.
    pub fn was_repaired(&self) -> bool {
        self.repaired
    }
}

fn normalize_diagonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let sd: Vec<f64> = (0..d).map(|i| m[(i, i)].max(f64::MIN_POSITIVE).sqrt()).collect();
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { m[(i, j)] / (sd[i] * sd[j]) })
}

/// Lower-triangular Cholesky factor, or `V·sqrt(Λ⁺)` when the matrix is
/// singular and Cholesky fails.
fn factorize(corr: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = corr.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(corr.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Draws from a copula: the correlated normals and their uniform transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaSample {
    pub normals: Vec<Vec<f64>>,
    pub uniforms: Vec<Vec<f64>>,
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// `Φ(z)` clamped into the open unit interval.
pub fn normal_cdf_open(z: f64) -> f64 {
    let u = std_normal().cdf(z);
    u.clamp(f64::EPSILON / 4.0, 1.0 - f64::EPSILON / 2.0)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

pub fn sample_copula(spec: &CopulaSpec, n: usize, seed: u64) -> Result<CopulaSample, SynthError> {
    if n == 0 {
        return Err(SynthError::EmptyRequest);
    }
    let d = spec.dimension();
    let mut r = rng(seed);
    let mut normals = Vec::with_capacity(n);
    let mut uniforms = Vec::with_capacity(n);
    let mut e = DVector::<f64>::zeros(d);
    for _ in 0..n {
        for k in 0..d {
            e[k] = r.sample(StandardNormal);
        }
        let z = &spec.factor * &e;
        uniforms.push(z.iter().map(|v| normal_cdf_open(*v)).collect());
        normals.push(z.iter().copied().collect());
    }
    Ok(CopulaSample { normals, uniforms })
}

/// Piecewise-linear inverse CDF given as `(u, value)` knots with `u` running
/// from 0 to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InverseCdf {
    pub knots: Vec<[f64; 2]>,
}

impl InverseCdf {
    pub fn new(knots: Vec<[f64; 2]>) -> Self {
        Self { knots }
    }

    pub fn validate(&self, feature: &str) -> Result<(), SynthError> {
        let bad = |reason: &str| SynthError::InvalidMarginal { feature: feature.to_string(), reason: reason.to_string() };
        if self.knots.len() < 2 {
            return Err(bad("an inverse CDF needs at least 2 knots"));
        }
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        if first[0] != 0.0 || last[0] != 1.0 {
            return Err(bad("knot probabilities must start at 0 and end at 1"));
        }
        for w in self.knots.windows(2) {
            if !(w[1][0] > w[0][0]) {
                return Err(bad("knot probabilities must be strictly increasing"));
            }
            if w[1][1] < w[0][1] {
                return Err(bad("inverse CDF must be nondecreasing"));
            }
        }
        if self.knots.iter().any(|k| !k[1].is_finite()) {
            return Err(bad("knot values must be finite"));
        }
        if first[1] == last[1] {
            return Err(SynthError::DegenerateCdf(feature.to_string()));
        }
        Ok(())
    }

    pub fn eval(&self, u: f64) -> f64 {
        let k = &self.knots;
        let idx = k.partition_point(|p| p[0] <= u).clamp(1, k.len() - 1);
        let (a, b) = (k[idx - 1], k[idx]);
        let t = ((u - a[0]) / (b[0] - a[0])).clamp(0.0, 1.0);
        a[1] + t * (b[1] - a[1])
    }

    /// Mean of the distribution (trapezoid rule over the knots, exact for
    /// piecewise-linear quantile functions).
    pub fn mean(&self) -> f64 {
        self.knots.windows(2).map(|w| (w[1][0] - w[0][0]) * 0.5 * (w[0][1] + w[1][1])).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginalKind {
    /// Categories with default probabilities. Block targets for this feature
    /// take precedence, then `per_block`, then `probabilities`.
    Categorical {
        categories: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        probabilities: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        per_block: BTreeMap<String, Vec<f64>>,
    },
    Continuous {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inverse_cdf: Option<InverseCdf>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        per_block: BTreeMap<String, InverseCdf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalModel {
    pub feature: String,
    #[serde(flatten)]
    pub kind: MarginalKind,
}

impl MarginalModel {
    pub fn categorical(feature: &str, categories: &[&str], probabilities: Vec<f64>) -> Self {
        Self {
            feature: feature.to_string(),
            kind: MarginalKind::Categorical {
                categories: categories.iter().map(|c| c.to_string()).collect(),
                probabilities: Some(probabilities),
                per_block: BTreeMap::new(),
            },
        }
    }

    pub fn continuous(feature: &str, knots: Vec<[f64; 2]>) -> Self {
        Self {
            feature: feature.to_string(),
            kind: MarginalKind::Continuous { inverse_cdf: Some(InverseCdf::new(knots)), per_block: BTreeMap::new() },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, MarginalKind::Categorical { .. })
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        match &self.kind {
            MarginalKind::Categorical { categories, probabilities, per_block } => {
                if categories.is_empty() {
                    return Err(SynthError::InvalidMarginal {
                        feature: self.feature.clone(),
                        reason: "no categories".into(),
                    });
                }
                for p in probabilities.iter().chain(per_block.values()) {
                    check_proportions(p, categories.len())
                        .map_err(|reason| SynthError::InvalidMarginal { feature: self.feature.clone(), reason })?;
                }
            }
            MarginalKind::Continuous { inverse_cdf, per_block } => {
                for f in inverse_cdf.iter().chain(per_block.values()) {
                    f.validate(&self.feature)?;
                }
            }
        }
        Ok(())
    }

    /// Category probabilities this feature uses in `block`.
    pub fn block_probabilities<'a>(&'a self, block: &'a BlockAggregate) -> Result<&'a [f64], SynthError> {
        let missing = || SynthError::MissingMarginal { feature: self.feature.clone(), block: block.block_id.clone() };
        match &self.kind {
            MarginalKind::Categorical { probabilities, per_block, categories } => {
                let p = match block.targets.get(&self.feature) {
                    Some(Target::Proportions(p)) => p.as_slice(),
                    Some(Target::Mean(_)) => {
                        return Err(SynthError::InvalidBlock {
                            block: block.block_id.clone(),
                            reason: format!("feature {:?} is categorical but its target is a mean", self.feature),
                        })
                    }
                    None => per_block
                        .get(&block.block_id)
                        .or(probabilities.as_ref())
                        .map(Vec::as_slice)
                        .ok_or_else(missing)?,
                };
                if p.len() != categories.len() {
                    return Err(SynthError::DimensionMismatch { expected: categories.len(), got: p.len() });
                }
                Ok(p)
            }
            MarginalKind::Continuous { .. } => Err(missing()),
        }
    }

    fn block_inverse_cdf<'a>(&'a self, block: &BlockAggregate) -> Result<&'a InverseCdf, SynthError> {
        match &self.kind {
            MarginalKind::Continuous { inverse_cdf, per_block } => per_block
                .get(&block.block_id)
                .or(inverse_cdf.as_ref())
                .ok_or_else(|| SynthError::MissingMarginal { feature: self.feature.clone(), block: block.block_id.clone() }),
            MarginalKind::Categorical { .. } => {
                Err(SynthError::MissingMarginal { feature: self.feature.clone(), block: block.block_id.clone() })
            }
        }
    }
}

fn check_proportions(p: &[f64], expected_len: usize) -> Result<(), String> {
    if p.len() != expected_len {
        return Err(format!("{} proportions for {} categories", p.len(), expected_len));
    }
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err("proportions must be nonnegative".into());
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(format!("proportions sum to {sum}, not 1"));
    }
    Ok(())
}

/// Block-level aggregate for one feature: a mean for continuous features or
/// a proportion vector for categorical ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Mean(f64),
    Proportions(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAggregate {
    pub block_id: String,
    /// State the block lies in; becomes every persona's `residence_state`.
    pub state: String,
    pub population: u32,
    #[serde(default)]
    pub targets: BTreeMap<String, Target>,
}

impl BlockAggregate {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |reason: String| SynthError::InvalidBlock { block: self.block_id.clone(), reason };
        if self.population < 1 {
            return Err(bad("population must be at least 1".into()));
        }
        for (feature, target) in &self.targets {
            if let Target::Proportions(p) = target {
                check_proportions(p, p.len()).map_err(|r| bad(format!("{feature}: {r}")))?;
            }
        }
        Ok(())
    }
}

/// One synthesized value before it is mapped onto a persona field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RawValue {
    Category(usize),
    Number(f64),
}

pub type RawRow = Vec<RawValue>;

pub fn apply_marginals(
    uniforms: &[Vec<f64>],
    marginals: &[MarginalModel],
    block: &BlockAggregate,
) -> Result<Vec<RawRow>, SynthError> {
    enum Resolved<'a> {
        Cat(Vec<f64>),
        Cont(&'a InverseCdf),
    }
    let resolved = marginals
        .iter()
        .map(|m| {
            m.validate()?;
            if m.is_categorical() {
                let p = m.block_probabilities(block)?;
                check_proportions(p, p.len())
                    .map_err(|reason| SynthError::InvalidMarginal { feature: m.feature.clone(), reason })?;
                let mut acc = 0.0;
                Ok(Resolved::Cat(
                    p.iter()
                        .map(|v| {
                            acc += v;
                            acc
                        })
                        .collect(),
                ))
            } else {
                let f = m.block_inverse_cdf(block)?;
                f.validate(&m.feature)?;
                Ok(Resolved::Cont(f))
            }
        })
        .collect::<Result<Vec<_>, SynthError>>()?;

    uniforms
        .iter()
        .map(|u| {
            if u.len() != marginals.len() {
                return Err(SynthError::DimensionMismatch { expected: marginals.len(), got: u.len() });
            }
            u.iter()
                .zip(&resolved)
                .map(|(&v, r)| {
                    if !(v > 0.0 && v < 1.0) {
                        return Err(SynthError::UniformOutOfRange(v));
                    }
                    Ok(match r {
                        Resolved::Cat(cum) => {
                            let k = cum.partition_point(|c| *c <= v).min(cum.len() - 1);
                            RawValue::Category(last_positive_at_or_before(cum, k))
                        }
                        Resolved::Cont(f) => RawValue::Number(f.eval(v)),
                    })
                })
                .collect()
        })
        .collect()
}

/// Guards against landing on a zero-probability category when rounding makes
/// the final cumulative sum fall short of 1.
fn last_positive_at_or_before(cum: &[f64], k: usize) -> usize {
    let prob = |i: usize| if i == 0 { cum[0] } else { cum[i] - cum[i - 1] };
    let mut i = k;
    while i > 0 && prob(i) <= 0.0 {
        i -= 1;
    }
    i
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConformance {
    pub feature: String,
    pub initial_discrepancy: f64,
    pub final_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub iterations: usize,
    pub changed_cells: usize,
    pub converged: bool,
    pub features: Vec<FeatureConformance>,
}

impl ScaleReport {
    pub fn max_discrepancy(&self) -> f64 {
        self.features.iter().map(|f| f.final_discrepancy).fold(0.0, f64::max)
    }
}

fn category_counts(rows: &[RawRow], col: usize, k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    for row in rows {
        if let RawValue::Category(c) = row[col] {
            counts[c] += 1;
        }
    }
    counts
}

fn discrepancy(counts: &[usize], target: &[f64], n: usize) -> f64 {
    counts
        .iter()
        .zip(target)
        .map(|(c, t)| (*c as f64 / n as f64 - t).abs())
        .fold(0.0, f64::max)
}

/// Integer counts closest to `target * n` that sum to `n` (largest remainder).
pub fn target_counts(target: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = target.iter().map(|t| t * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Moves the fewest rows needed for each categorical feature's proportions
/// to reach its block target. Rows leaving an over-represented category are
/// chosen uniformly at random; their new category is drawn in proportion to
/// the remaining deficits of under-represented categories.
pub fn marginal_scale(
    rows: &mut [RawRow],
    marginals: &[MarginalModel],
    block: &BlockAggregate,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Result<ScaleReport, SynthError> {
    let n = rows.len();
    let mut r = rng(seed);
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (col, m) in marginals.iter().enumerate() {
        if let MarginalKind::Categorical { categories, .. } = &m.kind {
            let p = m.block_probabilities(block)?.to_vec();
            let counts = if n == 0 { vec![0; categories.len()] } else { category_counts(rows, col, categories.len()) };
            let d = if n == 0 { 0.0 } else { discrepancy(&counts, &p, n) };
            features.push(FeatureConformance { feature: m.feature.clone(), initial_discrepancy: d, final_discrepancy: d });
            targets.push((col, p));
        }
    }
    let mut report = ScaleReport { iterations: 0, changed_cells: 0, converged: true, features };
    if n == 0 {
        return Ok(report);
    }

    for _ in 0..max_iters {
        let mut any_out = false;
        let mut changed_this_pass = 0;
        for (fi, (col, p)) in targets.iter().enumerate() {
            let counts = category_counts(rows, *col, p.len());
            if discrepancy(&counts, p, n) <= tol + TOL_SLACK {
                continue;
            }
            any_out = true;
            let goal = target_counts(p, n);
            let mut pool = Vec::new();
            for (k, (&have, &want)) in counts.iter().zip(&goal).enumerate() {
                if have > want {
                    let mut members: Vec<usize> =
                        (0..n).filter(|&i| rows[i][*col] == RawValue::Category(k)).collect();
                    let excess = have - want;
                    let (chosen, _) = members.partial_shuffle(&mut r, excess);
                    pool.extend_from_slice(chosen);
                }
            }
            pool.shuffle(&mut r);
            let mut deficits: Vec<usize> =
                counts.iter().zip(&goal).map(|(&have, &want)| want.saturating_sub(have)).collect();
            for &row in &pool {
                let remaining: usize = deficits.iter().sum();
                debug_assert!(remaining > 0);
                let mut pick = r.random_range(0..remaining);
                let k = deficits
                    .iter()
                    .position(|&d| {
                        if pick < d {
                            true
                        } else {
                            pick -= d;
                            false
                        }
                    })
                    .expect("pick falls inside the deficit total");
                deficits[k] -= 1;
                rows[row][*col] = RawValue::Category(k);
            }
            changed_this_pass += pool.len();
            report.features[fi].final_discrepancy = discrepancy(&category_counts(rows, *col, p.len()), p, n);
        }
        if !any_out {
            break;
        }
        report.iterations += 1;
        report.changed_cells += changed_this_pass;
        if changed_this_pass == 0 {
            // Targets are already met at integer resolution; `tol` is finer than 1/n.
            break;
        }
    }
    report.converged = report.features.iter().all(|f| f.final_discrepancy <= tol + TOL_SLACK);
    Ok(report)
}

/// Persona fields the synthesizer must produce, in persona order.
pub const PERSONA_FEATURES: [&str; 10] = [
    "age",
    "gender",
    "ethnicity",
    "marital_status",
    "household_size",
    "has_children",
    "education_level",
    "occupation",
    "individual_income",
    "family_income",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedBlock {
    pub block_id: String,
    pub seed: u64,
    pub personas: Vec<Persona>,
    pub scaling: ScaleReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ScaleOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iters: DEFAULT_MAX_ITERS }
    }
}

pub fn generate_block(
    block: &BlockAggregate,
    marginals: &[MarginalModel],
    spec: &CopulaSpec,
    options: ScaleOptions,
    seed: u64,
) -> Result<GeneratedBlock, SynthError> {
    block.validate()?;
    if spec.dimension() != marginals.len() {
        return Err(SynthError::DimensionMismatch { expected: marginals.len(), got: spec.dimension() });
    }
    for feature in PERSONA_FEATURES {
        if !marginals.iter().any(|m| m.feature == feature) {
            return Err(SynthError::MissingMarginal { feature: feature.to_string(), block: block.block_id.clone() });
        }
    }
    let n = block.population as usize;
    let draw = sample_copula(spec, n, derive_seed(seed, "copula"))?;
    let mut rows = apply_marginals(&draw.uniforms, marginals, block)?;
    let scaling = marginal_scale(&mut rows, marginals, block, options.tol, options.max_iters, derive_seed(seed, "scale"))?;
    let personas = rows
        .iter()
        .enumerate()
        .map(|(i, row)| row_to_persona(&format!("{}-{:06}", block.block_id, i), row, marginals, &block.state))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GeneratedBlock { block_id: block.block_id.clone(), seed, personas, scaling })
}

/// Generates many blocks in parallel; block `b` uses `derive_seed(master, b.block_id)`.
pub fn generate_blocks(
    blocks: &[BlockAggregate],
    marginals: &[MarginalModel],
    spec: &CopulaSpec,
    options: ScaleOptions,
    master_seed: u64,
) -> Result<Vec<GeneratedBlock>, SynthError> {
    blocks
        .par_iter()
        .map(|b| generate_block(b, marginals, spec, options, derive_seed(master_seed, &b.block_id)))
        .collect()
}

fn row_to_persona(id: &str, row: &RawRow, marginals: &[MarginalModel], state: &str) -> Result<Persona, SynthError> {
    let invalid = |reason: String| SynthError::InvalidPersona { id: id.to_string(), reason };
    let mut text: BTreeMap<&str, String> = BTreeMap::new();
    let mut numbers: BTreeMap<&str, f64> = BTreeMap::new();
    let mut extra = BTreeMap::new();
    for (m, v) in marginals.iter().zip(row) {
        let rendered = match (&m.kind, v) {
            (MarginalKind::Categorical { categories, .. }, RawValue::Category(k)) => categories[*k].clone(),
            (_, RawValue::Number(x)) => {
                numbers.insert(m.feature.as_str(), *x);
                format_number(*x)
            }
            (_, RawValue::Category(k)) => k.to_string(),
        };
        if PERSONA_FEATURES.contains(&m.feature.as_str()) {
            text.insert(m.feature.as_str(), rendered);
        } else {
            extra.insert(m.feature.clone(), serde_json::Value::String(rendered));
        }
    }
    let field = |name: &str| text.get(name).cloned().unwrap_or_default();
    let integer = |name: &str| -> Result<u32, SynthError> {
        if let Some(x) = numbers.get(name) {
            return Ok(x.round().max(0.0) as u32);
        }
        field(name).trim().parse::<u32>().map_err(|_| invalid(format!("{name} value {:?} is not an integer", field(name))))
    };
    let income = |name: &str| match numbers.get(name) {
        Some(x) => Income::Amount(x.round()),
        None => Income::parse(&field(name)),
    };
    let has_children = match numbers.get("has_children") {
        Some(x) => *x >= 0.5,
        None => match field("has_children").trim().to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "y" => true,
            "false" | "no" | "0" | "n" => false,
            other => return Err(invalid(format!("has_children value {other:?} is not a boolean"))),
        },
    };
    let persona = Persona {
        id: id.to_string(),
        age: integer("age")?,
        gender: field("gender"),
        ethnicity: field("ethnicity"),
        marital_status: field("marital_status"),
        household_size: integer("household_size")?,
        has_children,
        education_level: field("education_level"),
        occupation: field("occupation"),
        individual_income: income("individual_income"),
        family_income: income("family_income"),
        residence_state: state.to_string(),
        ideology: None,
        extra,
    };
    let violations = validate_persona(&persona);
    if !violations.is_empty() {
        let reason = violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        return Err(invalid(reason));
    }
    Ok(persona)
}

fn format_number(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Marginal file: feature marginals in copula order plus an optional
/// correlation (or covariance) matrix; identity when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFile {
    pub features: Vec<MarginalModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
}

impl MarginalFile {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let file: MarginalFile = load_json(path)?;
        for m in &file.features {
            m.validate()?;
        }
        Ok(file)
    }

    pub fn copula(&self) -> Result<CopulaSpec, SynthError> {
        match &self.correlation {
            Some(rows) => {
                let spec = CopulaSpec::new(rows)?;
                if spec.dimension() != self.features.len() {
                    return Err(SynthError::DimensionMismatch { expected: self.features.len(), got: spec.dimension() });
                }
                Ok(spec)
            }
            None => Ok(CopulaSpec::identity(self.features.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFile {
    pub blocks: Vec<BlockAggregate>,
}

impl BlockFile {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let file: BlockFile = load_json(path)?;
        for b in &file.blocks {
            b.validate()?;
        }
        Ok(file)
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, SynthError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| SynthError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}
