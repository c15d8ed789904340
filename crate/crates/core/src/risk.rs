//! Risk-measure machinery: the scalarized terminal payoffs consumed by the
//! dynamic-programming solvers, and empirical statistics (VaR, CVaR, tail
//! exceedance probability, percentiles) for Monte Carlo samples.
//!
//! Both risk measures are defined on terminal wealth, not losses: a larger
//! CVaR is better, a smaller exceedance probability is better.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Risk-measure selection with its scalarization parameters.
///
/// `gamma` carries wealth units in the shortfall-probability case and is
/// dimensionless in the CVaR case; both must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RiskSpec {
    /// Mean vs. buffered probability of terminal wealth falling to the
    /// disaster level `d` (dollars); minimized.
    Bpoe { d: f64, gamma: f64 },
    /// Mean vs. CVaR at confidence `alpha`; maximized.
    Cvar { alpha: f64, gamma: f64 },
}

/// Which way the scalarized objective is optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

impl RiskSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RiskSpec::Bpoe { d, gamma } => {
                if !(d > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "disaster level must be > 0, got {d}"
                    )));
                }
                if !(gamma > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "gamma must be > 0, got {gamma}"
                    )));
                }
            }
            RiskSpec::Cvar { alpha, gamma } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "alpha must lie in (0,1), got {alpha}"
                    )));
                }
                if !(gamma > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "gamma must be > 0, got {gamma}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Optimization direction of the scalarized objective.
    pub fn direction(&self) -> Direction {
        match self {
            RiskSpec::Bpoe { .. } => Direction::Min,
            RiskSpec::Cvar { .. } => Direction::Max,
        }
    }

    /// Lower bound of the admissible threshold domain.
    pub fn threshold_floor(&self) -> f64 {
        match *self {
            // The shortfall threshold lives on the open interval (d, inf).
            RiskSpec::Bpoe { d, .. } => d * (1.0 + 1e-6),
            RiskSpec::Cvar { .. } => 0.0,
        }
    }
}

/// Scalarized terminal payoff `f(w, W)` for threshold `threshold` and
/// terminal wealth `w`.
pub fn payoff(w: f64, threshold: f64, spec: &RiskSpec) -> Result<f64> {
    match *spec {
        RiskSpec::Bpoe { d, gamma } => {
            if threshold <= d {
                return Err(Error::InvalidParameter(format!(
                    "threshold {threshold} must exceed disaster level {d}"
                )));
            }
            Ok(gamma * (1.0 - (w - d) / (threshold - d)).max(0.0) - w)
        }
        RiskSpec::Cvar { alpha, gamma } => {
            if threshold < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "CVaR threshold must be >= 0, got {threshold}"
                )));
            }
            Ok(gamma * (threshold + (w - threshold).min(0.0) / alpha) + w)
        }
    }
}

/// `ceil(alpha n)`-th order statistic (lower-quantile convention).
pub fn empirical_var(samples: &[f64], alpha: f64) -> Result<f64> {
    let sorted = sorted_copy(samples, alpha)?;
    let k = ((alpha * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[k - 1])
}

/// Tail mean of the worst `alpha` fraction, with the fractional-tail
/// correction that makes the threshold (sup) formulation exact on the
/// empirical distribution.
pub fn empirical_cvar(samples: &[f64], alpha: f64) -> Result<f64> {
    let sorted = sorted_copy(samples, alpha)?;
    Ok(cvar_sorted(&sorted, alpha))
}

fn cvar_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len() as f64;
    let na = alpha * n;
    let k = (na.ceil() as usize).clamp(1, sorted.len());
    let mut acc = 0.0;
    for &w in &sorted[..k - 1] {
        acc += w;
    }
    acc += (na - (k - 1) as f64) * sorted[k - 1];
    acc / na
}

/// Smallest tail probability whose conditional mean equals the disaster
/// level `d`; 0 below the sample minimum, 1 at or above the sample mean.
///
/// Computed by bisecting the monotone map `alpha -> empirical_cvar(alpha)`,
/// which inverts exactly the quantity the V-shaped threshold formulation
/// attains at its minimizer.
pub fn empirical_bpoe(samples: &[f64], d: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("empirical_bpoe".to_string()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    if d < sorted[0] {
        return Ok(0.0);
    }
    if d >= mean {
        return Ok(1.0);
    }
    let tol = 1.0 / (10.0 * n as f64);
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if cvar_sorted(&sorted, mid) >= d {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Linear-interpolation percentile of unsorted samples, `p` in [0, 100].
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("percentile".to_string()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        return Ok(sorted[sorted.len() - 1]);
    }
    Ok(sorted[i] * (1.0 - frac) + sorted[i + 1] * frac)
}

/// Summary statistics of a terminal-wealth sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WealthStats {
    pub mean: f64,
    pub var_alpha: f64,
    pub cvar_alpha: f64,
    /// Buffered exceedance probability at the disaster level, in [0, 1].
    pub bpoe_d: f64,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
    pub n_paths: usize,
}

/// Aggregates the empirical statistics of one sample set.
pub fn summarize(samples: &[f64], alpha: f64, d: f64) -> Result<WealthStats> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("summarize".to_string()));
    }
    Ok(WealthStats {
        mean: samples.iter().sum::<f64>() / samples.len() as f64,
        var_alpha: empirical_var(samples, alpha)?,
        cvar_alpha: empirical_cvar(samples, alpha)?,
        bpoe_d: empirical_bpoe(samples, d)?,
        p5: percentile(samples, 5.0)?,
        p50: percentile(samples, 50.0)?,
        p95: percentile(samples, 95.0)?,
        n_paths: samples.len(),
    })
}

fn sorted_copy(samples: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("risk statistic".to_string()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    Ok(sorted)
}
