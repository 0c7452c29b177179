use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::backend::mock::logistic;
use crate::seed::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iters: u32,
    pub tol: f64,
    /// |β| above this with a still-rising likelihood counts as separation.
    pub divergence_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iters: 25, tol: 1e-8, divergence_threshold: 15.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub beta: f64,
    pub intercept: f64,
    /// McFadden: 1 − ℓ(model) / ℓ(null).
    pub pseudo_r2: f64,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub n_used: usize,
    pub converged: bool,
    pub separation_flag: bool,
    pub iterations: u32,
    /// Log-likelihood at the start and after every accepted ascent step.
    pub log_likelihood_trace: Vec<f64>,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn log_likelihood(xs: &[f64], ys: &[bool], a: f64, b: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let eta = a + b * x;
            if y { -softplus(-eta) } else { -softplus(eta) }
        })
        .sum()
}

/// True when some cut on x splits the outcomes with at most ties at the cut.
fn separable(xs: &[f64], ys: &[bool]) -> bool {
    let range = |want: bool| {
        xs.iter().zip(ys).filter(|(_, &y)| y == want).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&x, _)| {
            (lo.min(x), hi.max(x))
        })
    };
    let (lo0, hi0) = range(false);
    let (lo1, hi1) = range(true);
    hi0 <= lo1 || hi1 <= lo0
}

/// Maximum-likelihood fit of `y ~ intercept + β·x` by Newton/IRLS steps on
/// the centred predictor. A step that would lower the log-likelihood is
/// halved until it does not.
pub fn fit_logistic(points: &[(f64, bool)], opts: FitOptions) -> Result<RegressionResult, AnalysisError> {
    if points.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    if let Some(i) = points.iter().position(|(x, _)| !x.is_finite()) {
        return Err(AnalysisError::InvalidPoint(i));
    }
    let n = points.len();
    let ones = points.iter().filter(|(_, y)| *y).count();
    if ones == 0 || ones == n {
        return Err(AnalysisError::OneClassOnly);
    }
    let mean = points.iter().map(|(x, _)| x).sum::<f64>() / n as f64;
    let xs: Vec<f64> = points.iter().map(|(x, _)| x - mean).collect();
    let ys: Vec<bool> = points.iter().map(|(_, y)| *y).collect();

    let ybar = ones as f64 / n as f64;
    let (mut a, mut b) = ((ybar / (1.0 - ybar)).ln(), 0.0);
    let null_ll = log_likelihood(&xs, &ys, a, b);
    let mut ll = null_ll;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut settled = false;
    let mut iterations = 0;
    let x_varies = xs.iter().any(|x| x.abs() > 1e-12);

    while iterations < opts.max_iters {
        iterations += 1;
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            let p = logistic(a + b * x);
            let r = f64::from(u8::from(y)) - p;
            let w = p * (1.0 - p);
            g0 += r;
            g1 += r * x;
            h00 += w;
            h01 += w * x;
            h11 += w * x * x;
        }
        let det = h00 * h11 - h01 * h01;
        let (da, db) = if x_varies && det > 1e-300 && det.is_finite() {
            ((h11 * g0 - h01 * g1) / det, (h00 * g1 - h01 * g0) / det)
        } else if h00 > 1e-300 {
            (g0 / h00, 0.0)
        } else {
            break;
        };
        // Below rounding noise the likelihood cannot rank steps; the full
        // Newton step is then the most accurate move available.
        let gain = 0.5 * (g0 * da + g1 * db);
        if gain <= 1e-13 * (1.0 + ll.abs()) {
            a += da;
            b += db;
            converged = true;
            break;
        }
        let mut step = 1.0;
        let mut next = log_likelihood(&xs, &ys, a + da, b + db);
        while next < ll && step > 1e-10 {
            step *= 0.5;
            next = log_likelihood(&xs, &ys, a + step * da, b + step * db);
        }
        if next < ll {
            break;
        }
        a += step * da;
        b += step * db;
        let change = next - ll;
        ll = next;
        trace.push(ll);
        // One further Newton step after the first small change pins the
        // estimate well below the likelihood tolerance.
        if change < opts.tol {
            if settled {
                converged = true;
                break;
            }
            settled = true;
        } else {
            settled = false;
        }
    }

    let saturated = xs.iter().all(|&x| {
        let p = logistic(a + b * x);
        p < 1e-6 || p > 1.0 - 1e-6
    });
    let diverging = b.abs() > opts.divergence_threshold && !converged;
    let separation_flag = separable(&xs, &ys) || saturated || diverging;
    let ll = log_likelihood(&xs, &ys, a, b);
    let pseudo_r2 = (1.0 - ll / null_ll).clamp(0.0, 1.0);
    Ok(RegressionResult {
        beta: b,
        intercept: a - b * mean,
        pseudo_r2,
        log_likelihood: ll,
        null_log_likelihood: null_ll,
        n_used: n,
        converged: converged && !separation_flag,
        separation_flag,
        iterations,
        log_likelihood_trace: trace,
    })
}

/// Seeded sample with integer x uniform on 1..=7 and
/// P(y = 1) = logistic(β·x + intercept).
pub fn logistic_fixture(n: usize, beta: f64, intercept: f64, seed: u64) -> Vec<(f64, bool)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let x = r.random_range(1..=7u8) as f64;
            let y = r.random::<f64>() < logistic(beta * x + intercept);
            (x, y)
        })
        .collect()
}
