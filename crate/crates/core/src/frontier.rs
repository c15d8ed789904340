//! Efficient-frontier sweeps over the scalarization weight, the closed-form
//! parameter maps that carry a CVaR-optimal point to the equivalent
//! shortfall-probability formulation and back, and secant-based matching of
//! the weight to a target expected terminal wealth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::DpContext;
use crate::error::{Error, Result};
use crate::precommit;
use crate::risk::RiskSpec;
use crate::tc;

/// Which dynamic-programming formulation a sweep runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverFamily {
    Precommit,
    TimeConsistent,
}

/// One swept point of the mean-risk frontier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub gamma: f64,
    /// CVaR in dollars or shortfall probability in [0, 1].
    pub risk: f64,
    pub expectation: f64,
    pub threshold: f64,
    pub family: SolverFamily,
}

fn with_gamma(template: &RiskSpec, gamma: f64) -> RiskSpec {
    match *template {
        RiskSpec::Bpoe { d, .. } => RiskSpec::Bpoe { d, gamma },
        RiskSpec::Cvar { alpha, .. } => RiskSpec::Cvar { alpha, gamma },
    }
}

/// Solves once per scalarization weight; the returned points are sorted by
/// weight. The lattice and density cache are shared across the sweep (the
/// threshold domain does not depend on the weight).
pub fn sweep(
    template: &RiskSpec,
    gammas: &[f64],
    family: SolverFamily,
    ctx: &DpContext,
) -> Result<Vec<FrontierPoint>> {
    if gammas.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::InvalidParameter(
            "scalarization weights must be positive".to_string(),
        ));
    }
    let mut sorted = gammas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite gammas"));
    sorted
        .par_iter()
        .map(|&gamma| {
            let spec = with_gamma(template, gamma);
            let (risk, expectation, threshold) = match family {
                SolverFamily::Precommit => {
                    let sol = precommit::solve(&spec, ctx)?;
                    (
                        sol.risk_value,
                        sol.expected_terminal_wealth,
                        sol.optimal_threshold,
                    )
                }
                SolverFamily::TimeConsistent => {
                    let sol = tc::solve(&spec, ctx)?;
                    (
                        sol.risk_value,
                        sol.expected_terminal_wealth,
                        sol.inception_threshold,
                    )
                }
            };
            Ok(FrontierPoint {
                gamma,
                risk,
                expectation,
                threshold,
                family,
            })
        })
        .collect()
}

/// Maps a CVaR-optimal point `(W*, C*)` at `(alpha, gamma_a)` to the
/// disaster level and weight under which the shortfall formulation attains
/// the same optimum: `D = C*`, `gamma_o = gamma_a (W* - C*) / alpha`.
pub fn map_cvar_to_bpoe(
    alpha: f64,
    gamma_a: f64,
    w_a_star: f64,
    c_star: f64,
) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    if w_a_star < c_star {
        return Err(Error::InvalidParameter(format!(
            "optimal threshold {w_a_star} below the attained CVaR {c_star}"
        )));
    }
    Ok((c_star, gamma_a * (w_a_star - c_star) / alpha))
}

/// Inverse direction: `alpha = B*`, `gamma_a = gamma_o B* / (W* - D)`.
pub fn map_bpoe_to_cvar(
    d: f64,
    gamma_o: f64,
    w_o_star: f64,
    b_star: f64,
) -> Result<(f64, f64)> {
    if w_o_star <= d {
        return Err(Error::InvalidParameter(format!(
            "optimal threshold {w_o_star} does not exceed the disaster level {d}"
        )));
    }
    if !(b_star > 0.0 && b_star < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "attained probability must lie in (0,1), got {b_star}"
        )));
    }
    Ok((b_star, gamma_o * b_star / (w_o_star - d)))
}

#[derive(Debug, Clone, Copy)]
pub struct GammaMatch {
    pub gamma: f64,
    pub expectation: f64,
    pub iterations: usize,
}

/// Finds the scalarization weight whose solve attains `target_e`, to 0.1%
/// relative. Secant steps with a maintained sign-change bracket and
/// bisection fallback; each evaluation is a full solve, so the iteration
/// budget is deliberately small.
pub fn match_gamma<F>(
    target_e: f64,
    bracket: (f64, f64),
    max_iterations: usize,
    mut eval: F,
) -> Result<GammaMatch>
where
    F: FnMut(f64) -> Result<f64>,
{
    let rel_tol = 1e-3;
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "bracket must satisfy 0 < lo < hi, got ({lo}, {hi})"
        )));
    }
    let e_lo = eval(lo)?;
    if (e_lo - target_e).abs() <= rel_tol * target_e.abs() {
        return Ok(GammaMatch {
            gamma: lo,
            expectation: e_lo,
            iterations: 1,
        });
    }
    let e_hi = eval(hi)?;
    if (e_hi - target_e).abs() <= rel_tol * target_e.abs() {
        return Ok(GammaMatch {
            gamma: hi,
            expectation: e_hi,
            iterations: 2,
        });
    }
    let mut f_lo = e_lo - target_e;
    let mut f_hi = e_hi - target_e;
    if f_lo * f_hi > 0.0 {
        return Err(Error::Bracket(format!(
            "target {target_e} not bracketed: E({lo}) = {e_lo}, E({hi}) = {e_hi}"
        )));
    }
    let mut iterations = 2usize;
    let mut prev = (lo, f_lo);
    let mut cur = (hi, f_hi);
    while iterations < max_iterations {
        // secant proposal from the last two evaluations
        let denom = cur.1 - prev.1;
        let mut gamma = if denom.abs() > 0.0 {
            cur.0 - cur.1 * (cur.0 - prev.0) / denom
        } else {
            f64::NAN
        };
        let width = hi - lo;
        if !gamma.is_finite() || gamma <= lo || gamma >= hi {
            gamma = 0.5 * (lo + hi);
        }
        // keep a minimal step so the bracket actually shrinks
        let margin = 1e-3 * width;
        gamma = gamma.clamp(lo + margin, hi - margin);
        let e = eval(gamma)?;
        iterations += 1;
        let f = e - target_e;
        if f.abs() <= rel_tol * target_e.abs() {
            return Ok(GammaMatch {
                gamma,
                expectation: e,
                iterations,
            });
        }
        if f * f_lo <= 0.0 {
            hi = gamma;
            f_hi = f;
        } else {
            lo = gamma;
            f_lo = f;
        }
        let _ = f_hi;
        prev = cur;
        cur = (gamma, f);
    }
    Err(Error::Solver(format!(
        "gamma match did not converge in {max_iterations} iterations; bracket now ({lo}, {hi})"
    )))
}
