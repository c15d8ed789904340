//! Time-consistent solver: the state is lifted with the candidate threshold,
//! giving one value layer per threshold node. At every rebalance time each
//! wealth level re-optimizes both the control and the threshold (nested
//! search), and the resulting equilibrium control is plugged back into
//! *every* threshold layer before the next backward step.
//!
//! That re-seeding step is what keeps the recursion non-degenerate: writing
//! the post-optimization value as threshold-independent would collapse all
//! layers after one step and turn every later threshold search into a
//! no-op (see `literal_reading_degenerates_after_one_step`).

use rayon::prelude::*;

use crate::dp::{apply_control_curve, terminal_condition, DpContext, Stencil, ValueSlice};
use crate::error::Result;
use crate::policy::Policy;
use crate::precommit::{extract_risk, policy_from_curves, track_expectation};
use crate::risk::{Direction, RiskSpec};

/// Result of one time-consistent solve.
#[derive(Debug, Clone)]
pub struct TcSolution {
    pub value_at_inception: f64,
    /// Threshold re-optimized at inception for the starting wealth.
    pub inception_threshold: f64,
    pub inception_control: f64,
    /// The inception threshold search hit the domain cap.
    pub inception_unbounded: bool,
    pub expected_terminal_wealth: f64,
    pub risk_value: f64,
    /// Control, threshold, and cap-flag curves per rebalance time.
    pub policy: Policy,
}

/// Search tuning for the nested threshold/control optimization.
#[derive(Debug, Clone, Copy)]
pub struct TcOptions {
    /// Refine the discrete argmax by local quadratic fits: first in the
    /// threshold (the per-control objective is concave there, since every
    /// layer shares the same continuation control), then in the control.
    /// Removes the grid-snapping oscillation that otherwise compounds
    /// backward through the equilibrium re-seeding.
    pub continuous_refit: bool,
}

impl Default for TcOptions {
    fn default() -> Self {
        TcOptions {
            continuous_refit: true,
        }
    }
}

/// Nested threshold/control search outcome at one wealth level.
struct NodeChoice {
    u: f64,
    threshold: f64,
    value: f64,
    unbounded: bool,
}

/// Vertex of the quadratic through three points bracketing a discrete
/// optimum; falls back to the middle point when the fit degenerates,
/// leaves the bracket, or the bracket geometry makes extrapolation
/// untrustworthy. Handles uneven abscissae.
fn quadratic_refine(x: [f64; 3], y: [f64; 3], direction: Direction) -> (f64, f64) {
    let gap_l = x[1] - x[0];
    let gap_r = x[2] - x[1];
    // strongly graded brackets amplify noise through the fit
    if gap_l.max(gap_r) > 4.0 * gap_l.min(gap_r) {
        return (x[1], y[1]);
    }
    // Newton form p(t) = y0 + s01 (t - x0) + c (t - x0)(t - x1)
    let s01 = (y[1] - y[0]) / gap_l;
    let s12 = (y[2] - y[1]) / gap_r;
    let c = (s12 - s01) / (x[2] - x[0]);
    let sane = match direction {
        Direction::Max => c < 0.0,
        Direction::Min => c > 0.0,
    };
    if !sane || !c.is_finite() {
        return (x[1], y[1]);
    }
    let x_star = 0.5 * (x[0] + x[1]) - 0.5 * s01 / c;
    if !(x_star > x[0] && x_star < x[2]) {
        return (x[1], y[1]);
    }
    let y_star = y[0] + s01 * (x_star - x[0]) + c * (x_star - x[0]) * (x_star - x[1]);
    // never credit more than the local variation to the fit
    let cap = (y[1] - y[0]).abs().min((y[1] - y[2]).abs());
    if (y_star - y[1]).abs() > cap {
        return (x[1], y[1]);
    }
    (x_star, y_star)
}

/// Scratch buffers reused across nested searches on one worker.
#[derive(Default)]
struct SearchScratch {
    per_k: Vec<f64>,
    u_value: Vec<f64>,
    u_threshold: Vec<f64>,
    u_flag: Vec<bool>,
}

#[allow(clippy::too_many_arguments)]
fn nested_search(
    layers: &[ValueSlice],
    w_nodes: &[f64],
    offset: usize,
    candidates: &[Stencil],
    u_nodes: &[f64],
    direction: Direction,
    force_risky_at_cap: bool,
    refit: bool,
    scratch: &mut SearchScratch,
) -> NodeChoice {
    let n_k = layers.len();
    let better = |a: f64, b: f64| match direction {
        Direction::Min => a < b,
        Direction::Max => a > b,
    };
    scratch.u_value.clear();
    scratch.u_threshold.clear();
    scratch.u_flag.clear();
    for st in candidates {
        scratch.per_k.clear();
        for layer in layers {
            scratch.per_k.push(st.eval(layer));
        }
        let v = &scratch.per_k;
        let mut k_star = 0usize;
        for k in 1..n_k {
            if better(v[k], v[k_star]) {
                k_star = k;
            }
        }
        let (w_fit, v_fit) = if refit && k_star > 0 && k_star + 1 < n_k {
            quadratic_refine(
                [w_nodes[k_star - 1], w_nodes[k_star], w_nodes[k_star + 1]],
                [v[k_star - 1], v[k_star], v[k_star + 1]],
                direction,
            )
        } else {
            (w_nodes[k_star], v[k_star])
        };
        scratch.u_value.push(v_fit);
        scratch.u_threshold.push(w_fit);
        scratch.u_flag.push(k_star + 1 == n_k);
    }
    let vals = &scratch.u_value;
    let mut i_star = 0usize;
    for i in 1..vals.len() {
        if better(vals[i], vals[i_star]) {
            i_star = i;
        }
    }
    let (u_fit, v_fit) = if refit && i_star > 0 && i_star + 1 < vals.len() {
        quadratic_refine(
            [
                u_nodes[offset + i_star - 1],
                u_nodes[offset + i_star],
                u_nodes[offset + i_star + 1],
            ],
            [vals[i_star - 1], vals[i_star], vals[i_star + 1]],
            direction,
        )
    } else {
        (u_nodes[offset + i_star], vals[i_star])
    };
    let unbounded = scratch.u_flag[i_star];
    let u = if unbounded && force_risky_at_cap {
        1.0
    } else {
        u_fit
    };
    NodeChoice {
        u,
        threshold: scratch.u_threshold[i_star],
        value: v_fit,
        unbounded,
    }
}

/// Full time-consistent solve with default search options.
pub fn solve(spec: &RiskSpec, ctx: &DpContext) -> Result<TcSolution> {
    solve_with(spec, ctx, TcOptions::default())
}

pub fn solve_with(spec: &RiskSpec, ctx: &DpContext, opts: TcOptions) -> Result<TcSolution> {
    spec.validate()?;
    let lattice = ctx.lattice;
    let direction = spec.direction();
    let force_risky = matches!(spec, RiskSpec::Bpoe { .. });
    let steps = ctx.scenario.rebalances;
    let mut cube: Vec<ValueSlice> = lattice
        .w_nodes
        .par_iter()
        .map(|&w_k| terminal_condition(w_k, spec, lattice))
        .collect::<Result<_>>()?;
    let mut stage_u = vec![Vec::new(); steps];
    let mut stage_w = vec![Vec::new(); steps];
    let mut stage_flag = vec![Vec::new(); steps];
    let mut inception: Option<NodeChoice> = None;
    for m in (0..steps).rev() {
        let plus: Vec<ValueSlice> = cube
            .par_iter()
            .map(|layer| ctx.step_back(layer))
            .collect::<Result<_>>()?;
        let choices: Vec<NodeChoice> = (0..lattice.w_policy.len())
            .into_par_iter()
            .map_init(SearchScratch::default, |scratch, p| {
                let (offset, candidates) = ctx.reb.candidates(p);
                nested_search(
                    &plus,
                    &lattice.w_nodes,
                    offset,
                    candidates,
                    &lattice.u_nodes,
                    direction,
                    force_risky,
                    opts.continuous_refit,
                    scratch,
                )
            })
            .collect();
        let u_curve: Vec<f64> = choices.iter().map(|c| c.u).collect();
        stage_w[m] = choices.iter().map(|c| c.threshold).collect();
        stage_flag[m] = choices.iter().map(|c| c.unbounded).collect();
        if m > 0 {
            cube = plus
                .par_iter()
                .map(|layer| {
                    apply_control_curve(
                        layer,
                        &lattice.w_policy,
                        &u_curve,
                        ctx.scenario.cashflows[m],
                        lattice,
                        &ctx.exp_y,
                    )
                })
                .collect::<Result<_>>()?;
        } else {
            let w0 = ctx.scenario.initial_wealth + ctx.scenario.cashflows[0];
            let candidates: Vec<Stencil> = lattice
                .u_nodes
                .iter()
                .map(|&u| Stencil::new(lattice, u * w0, (1.0 - u) * w0))
                .collect();
            inception = Some(nested_search(
                &plus,
                &lattice.w_nodes,
                0,
                &candidates,
                &lattice.u_nodes,
                direction,
                force_risky,
                opts.continuous_refit,
                &mut SearchScratch::default(),
            ));
        }
        stage_u[m] = u_curve;
    }
    let inception = inception.expect("at least one rebalance");
    let policy = policy_from_curves(
        &stage_u,
        Some(&stage_w),
        Some(&stage_flag),
        spec,
        ctx,
        "time-consistent".to_string(),
    );
    let expected = track_expectation(&policy, ctx)?;
    Ok(TcSolution {
        value_at_inception: inception.value,
        inception_threshold: inception.threshold,
        inception_control: inception.u,
        inception_unbounded: inception.unbounded,
        expected_terminal_wealth: expected,
        risk_value: extract_risk(inception.value, expected, spec),
        policy,
    })
}

/// Expected terminal wealth under the equilibrium policy; identical
/// mechanics to the precommitment tracker, driven by the stored curves.
pub fn track_expectation_tc(solution: &TcSolution, ctx: &DpContext) -> Result<f64> {
    track_expectation(&solution.policy, ctx)
}
