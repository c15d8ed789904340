//! Building blocks of the backward recursion shared by all solvers:
//! terminal condition, interest settlement, density convolution with
//! asymptotic boundary rows, and the cashflow-plus-rebalance intervention.
//!
//! A backward step from `t_{m+1}` to `t_m` is the composition
//! settle -> convolve -> rebalance/assemble. Every stage maps pointwise
//! ordered inputs to pointwise ordered outputs: the convolution weights and
//! the density are non-negative, interpolation weights are convex, and the
//! rebalance is an envelope over interpolated candidates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kou::{DensityConfig, DensityEval, ModelParams};
use crate::lattice::{BondPos, Lattice};
use crate::risk::{payoff, Direction, RiskSpec};

/// Time instant of a value slice within the backward recursion.
///
/// `Minus(m)` is the instant after the interest settlement ahead of `t_m`
/// (so `Minus(M)` sits just before the terminal time), `Plus(m)` the instant
/// after the convolution back to `t_m^+`, and `At(m)` the rebalanced slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeTag {
    Terminal,
    Minus(usize),
    Plus(usize),
    At(usize),
}

impl std::fmt::Display for TimeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TimeTag::Terminal => write!(f, "T"),
            TimeTag::Minus(m) => write!(f, "t_{m}^-"),
            TimeTag::Plus(m) => write!(f, "t_{m}^+"),
            TimeTag::At(m) => write!(f, "t_{m}"),
        }
    }
}

/// Value-function samples over the (y, b) grid at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSlice {
    /// Row-major values, y index outer, b index inner.
    pub values: Vec<f64>,
    pub n_y: usize,
    pub n_b: usize,
    pub tag: TimeTag,
}

impl ValueSlice {
    pub fn new(n_y: usize, n_b: usize, tag: TimeTag) -> Self {
        ValueSlice {
            values: vec![0.0; n_y * n_b],
            n_y,
            n_b,
            tag,
        }
    }

    #[inline]
    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.n_b..(n + 1) * self.n_b]
    }

    #[inline]
    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.values[n * self.n_b..(n + 1) * self.n_b]
    }

    #[inline]
    pub fn at(&self, n: usize, j: usize) -> f64 {
        self.values[n * self.n_b + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Investment scenario: horizon, rebalance count, cash injections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub t_years: f64,
    pub rebalances: usize,
    /// Cash injected at each rebalance time, `rebalances` entries.
    pub cashflows: Vec<f64>,
    pub initial_wealth: f64,
}

impl Scenario {
    /// 30-year yearly accumulation: zero initial wealth, 20k contributed at
    /// each rebalance.
    pub fn dc_accumulation() -> Self {
        Scenario {
            t_years: 30.0,
            rebalances: 30,
            cashflows: vec![20_000.0; 30],
            initial_wealth: 0.0,
        }
    }

    pub fn dt(&self) -> f64 {
        self.t_years / self.rebalances as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_years > 0.0) || self.rebalances == 0 {
            return Err(Error::InvalidParameter(
                "scenario needs a positive horizon and at least one rebalance".to_string(),
            ));
        }
        if self.cashflows.len() != self.rebalances {
            return Err(Error::InvalidParameter(format!(
                "{} cashflows for {} rebalances",
                self.cashflows.len(),
                self.rebalances
            )));
        }
        if self.cashflows.iter().any(|&q| q < 0.0) {
            return Err(Error::InvalidParameter(
                "cashflows must be non-negative".to_string(),
            ));
        }
        if self.initial_wealth < 0.0 {
            return Err(Error::InvalidParameter(
                "initial wealth must be non-negative".to_string(),
            ));
        }
        if self.initial_wealth + self.cashflows[0] <= 0.0 {
            return Err(Error::InvalidParameter(
                "initial wealth plus first cashflow must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Cached convolution kernel: the truncated density sampled at every grid
/// displacement, plus the boundary growth factor.
#[derive(Debug, Clone)]
pub struct DensityRows {
    /// `g((n - l) * h, dt; n_terms)` indexed by `(n - l) + n_y_dag`.
    pub g: Vec<f64>,
    offset: usize,
    /// `exp(mu dt)` applied on the upper boundary rows.
    pub growth_top: f64,
}

impl DensityRows {
    pub fn new(params: &ModelParams, lattice: &Lattice, cfg: &DensityConfig) -> Result<Self> {
        let ev = DensityEval::new(params, cfg)?;
        let n = lattice.spec.n_y_dag;
        let h = lattice.y_step;
        let g: Vec<f64> = (0..=2 * n)
            .map(|i| ev.eval((i as f64 - n as f64) * h))
            .collect();
        Ok(DensityRows {
            g,
            offset: n,
            growth_top: (params.mu * cfg.dt).exp(),
        })
    }
}

/// Terminal slice: the scalarized payoff of liquidation wealth.
pub fn terminal_condition(threshold: f64, spec: &RiskSpec, lattice: &Lattice) -> Result<ValueSlice> {
    let n_y = lattice.n_y_nodes();
    let n_b = lattice.n_b_nodes();
    let mut slice = ValueSlice::new(n_y, n_b, TimeTag::Terminal);
    for n in 0..n_y {
        let s = lattice.y_nodes[n].exp();
        let row = slice.row_mut(n);
        for (j, &b) in lattice.b_nodes.iter().enumerate() {
            row[j] = payoff(s + b, threshold, spec)?;
        }
    }
    Ok(slice)
}

/// Per-bond-node lookup positions for the interest settlement, computed once
/// per (lattice, dt).
#[derive(Debug, Clone)]
pub struct SettleMap {
    targets: Vec<BondPos>,
}

impl SettleMap {
    pub fn new(lattice: &Lattice, r: f64, dt: f64) -> Self {
        let factor = (r * dt).exp();
        let targets = lattice
            .b_nodes
            .iter()
            .map(|&b| lattice.locate_b(b * factor))
            .collect();
        SettleMap { targets }
    }
}

/// Interest settlement: reads the slice at `b e^{r dt}`, extrapolating
/// proportionally above the bond cap. Maps `t_{m+1}` (or `T`) to `t_{m+1}^-`.
pub fn settle_interest(slice: &ValueSlice, map: &SettleMap, scenario: &Scenario) -> Result<ValueSlice> {
    let m_next = match slice.tag {
        TimeTag::Terminal => scenario.rebalances,
        TimeTag::At(m) if m > 0 => m,
        other => {
            return Err(Error::TimeTagMismatch {
                expected: "t_{m+1} or T".to_string(),
                got: other.to_string(),
            })
        }
    };
    let mut out = ValueSlice::new(slice.n_y, slice.n_b, TimeTag::Minus(m_next));
    let last = slice.n_b - 1;
    for n in 0..slice.n_y {
        let src = slice.row(n);
        let dst = out.row_mut(n);
        for (j, pos) in map.targets.iter().enumerate() {
            dst[j] = match *pos {
                BondPos::Within { idx, frac } => src[idx] + frac * (src[idx + 1] - src[idx]),
                BondPos::Beyond { scale } => scale * src[last],
            };
        }
    }
    Ok(out)
}

/// Density convolution along y on interior rows; boundary rows follow the
/// asymptotic forms (copy below, growth factor above). Maps `t_{m+1}^-`
/// to `t_m^+`.
pub fn convolve_step(
    slice: &ValueSlice,
    rows: &DensityRows,
    lattice: &Lattice,
) -> Result<ValueSlice> {
    let m_next = match slice.tag {
        TimeTag::Minus(m) => m,
        other => {
            return Err(Error::TimeTagMismatch {
                expected: "t_{m+1}^-".to_string(),
                got: other.to_string(),
            })
        }
    };
    if slice.n_y != lattice.n_y_nodes() || slice.n_b != lattice.n_b_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "slice is {}x{}, lattice is {}x{}",
            slice.n_y,
            slice.n_b,
            lattice.n_y_nodes(),
            lattice.n_b_nodes()
        )));
    }
    if rows.g.len() != 2 * lattice.spec.n_y_dag + 1 {
        return Err(Error::DimensionMismatch(
            "density row cache does not match the lattice".to_string(),
        ));
    }
    let n_b = slice.n_b;
    let lo = lattice.interior_lo;
    let hi = lattice.interior_hi;
    let quad = &lattice.quad_weights;
    let mut out = ValueSlice::new(slice.n_y, n_b, TimeTag::Plus(m_next - 1));
    out.values
        .par_chunks_mut(n_b)
        .enumerate()
        .for_each(|(n, dst)| {
            if n < lo {
                dst.copy_from_slice(slice.row(n));
            } else if n > hi {
                for (o, &v) in dst.iter_mut().zip(slice.row(n)) {
                    *o = rows.growth_top * v;
                }
            } else {
                for l in 0..slice.n_y {
                    let c = quad[l] * rows.g[n + rows.offset - l];
                    if c != 0.0 {
                        for (o, &v) in dst.iter_mut().zip(slice.row(l)) {
                            *o += c * v;
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Bilinear lookup position of a post-rebalance state `(ln(u w), (1-u) w)`.
///
/// `u = 0` has no log representation; the y coordinate saturates at the
/// bottom of the grid where the value is effectively a function of the bond
/// amount alone.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    y_idx: u32,
    y_frac: f64,
    b: BondPos,
}

impl Stencil {
    pub fn new(lattice: &Lattice, risky: f64, bond: f64) -> Self {
        let (y_idx, y_frac) = lattice.locate_y(risky.ln());
        Stencil {
            y_idx: y_idx as u32,
            y_frac,
            b: lattice.locate_b(bond),
        }
    }

    /// Evaluates the slice at the stored position.
    #[inline]
    pub fn eval(&self, slice: &ValueSlice) -> f64 {
        let n = self.y_idx as usize;
        let r0 = slice.row(n);
        let r1 = slice.row(n + 1);
        let (v0, v1) = match self.b {
            BondPos::Within { idx, frac } => (
                r0[idx] + frac * (r0[idx + 1] - r0[idx]),
                r1[idx] + frac * (r1[idx + 1] - r1[idx]),
            ),
            BondPos::Beyond { scale } => {
                let last = slice.n_b - 1;
                (scale * r0[last], scale * r1[last])
            }
        };
        v0 + self.y_frac * (v1 - v0)
    }
}

/// Candidate stencils for every (policy-wealth node, control node) pair.
/// They depend only on the lattice, so solvers build this table once.
///
/// The bond cap acts as a position limit: allocations that would park more
/// than `b_max` in the risk-free asset have no representable state, so they
/// are excluded from the search. The fully risky candidate always remains.
/// The cut only binds at wealth beyond the cap itself, which the domain
/// bounds place far outside the reachable region.
#[derive(Debug, Clone)]
pub struct RebalanceGrid {
    stencils: Vec<Stencil>,
    first_valid: Vec<u32>,
    n_u: usize,
}

impl RebalanceGrid {
    pub fn new(lattice: &Lattice) -> Self {
        let n_u = lattice.u_nodes.len();
        let mut stencils = Vec::with_capacity(lattice.w_policy.len() * n_u);
        let mut first_valid = Vec::with_capacity(lattice.w_policy.len());
        for &w in &lattice.w_policy {
            first_valid.push(first_feasible_control(&lattice.u_nodes, w, lattice.spec.b_max) as u32);
            for &u in &lattice.u_nodes {
                stencils.push(Stencil::new(lattice, u * w, (1.0 - u) * w));
            }
        }
        RebalanceGrid {
            stencils,
            first_valid,
            n_u,
        }
    }

    /// Feasible candidate stencils at one wealth node, plus the index of the
    /// first feasible control node.
    #[inline]
    pub fn candidates(&self, w_idx: usize) -> (usize, &[Stencil]) {
        let offset = self.first_valid[w_idx] as usize;
        (
            offset,
            &self.stencils[w_idx * self.n_u + offset..(w_idx + 1) * self.n_u],
        )
    }
}

/// Smallest control index with `(1 - u) w <= b_max`; the controls are
/// ascending so feasibility is a suffix.
fn first_feasible_control(u_nodes: &[f64], w: f64, b_max: f64) -> usize {
    u_nodes
        .iter()
        .position(|&u| (1.0 - u) * w <= b_max)
        .unwrap_or(u_nodes.len() - 1)
}

/// Exhaustive control search at one wealth level; ties break toward the
/// smaller (more conservative) risky fraction.
#[inline]
pub fn optimize_controls(
    slice: &ValueSlice,
    candidates: &[Stencil],
    direction: Direction,
) -> (usize, f64) {
    let mut best_i = 0usize;
    let mut best_v = candidates[0].eval(slice);
    match direction {
        Direction::Min => {
            for (i, st) in candidates.iter().enumerate().skip(1) {
                let v = st.eval(slice);
                if v < best_v {
                    best_v = v;
                    best_i = i;
                }
            }
        }
        Direction::Max => {
            for (i, st) in candidates.iter().enumerate().skip(1) {
                let v = st.eval(slice);
                if v > best_v {
                    best_v = v;
                    best_i = i;
                }
            }
        }
    }
    (best_i, best_v)
}

/// Rebalance optimization over the policy-wealth grid: for each node `w`
/// (already post-cashflow) the control search above yields the optimal
/// risky fraction and the optimum value.
pub fn rebalance(
    slice: &ValueSlice,
    direction: Direction,
    lattice: &Lattice,
    grid: &RebalanceGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    match slice.tag {
        TimeTag::Plus(_) => {}
        other => {
            return Err(Error::TimeTagMismatch {
                expected: "t_m^+".to_string(),
                got: other.to_string(),
            })
        }
    }
    let n_w = lattice.w_policy.len();
    let mut u_curve = vec![0.0; n_w];
    let mut v_curve = vec![0.0; n_w];
    for p in 0..n_w {
        let (offset, candidates) = grid.candidates(p);
        let (i, v) = optimize_controls(slice, candidates, direction);
        u_curve[p] = lattice.u_nodes[offset + i];
        v_curve[p] = v;
    }
    Ok((u_curve, v_curve))
}

/// Same search at one arbitrary wealth level (used for the inception state,
/// which need not be a policy node).
pub fn rebalance_at(
    slice: &ValueSlice,
    w: f64,
    direction: Direction,
    lattice: &Lattice,
) -> Result<(f64, f64)> {
    if !(w > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "rebalance wealth must be positive, got {w}"
        )));
    }
    let offset = first_feasible_control(&lattice.u_nodes, w, lattice.spec.b_max);
    let candidates: Vec<Stencil> = lattice.u_nodes[offset..]
        .iter()
        .map(|&u| Stencil::new(lattice, u * w, (1.0 - u) * w))
        .collect();
    let (i, v) = optimize_controls(slice, &candidates, direction);
    Ok((lattice.u_nodes[offset + i], v))
}

/// Assembles the rebalanced slice at `t_m` from the value-on-wealth curve:
/// `out(y, b) = v*(e^y + b + q_m)` by linear interpolation on the policy
/// grid.
pub fn assemble_from_curve(
    slice_plus: &ValueSlice,
    v_curve: &[f64],
    q_m: f64,
    lattice: &Lattice,
    exp_y: &[f64],
) -> Result<ValueSlice> {
    let m = match slice_plus.tag {
        TimeTag::Plus(m) => m,
        other => {
            return Err(Error::TimeTagMismatch {
                expected: "t_m^+".to_string(),
                got: other.to_string(),
            })
        }
    };
    let mut out = ValueSlice::new(slice_plus.n_y, slice_plus.n_b, TimeTag::At(m));
    for n in 0..slice_plus.n_y {
        let s = exp_y[n];
        let dst = out.row_mut(n);
        for (j, &b) in lattice.b_nodes.iter().enumerate() {
            let (i, frac) = lattice.locate_policy(s + b + q_m);
            dst[j] = v_curve[i] + frac * (v_curve[i + 1] - v_curve[i]);
        }
    }
    Ok(out)
}

/// Applies a stored control curve (no optimization): every state gathers the
/// post-step slice at its own post-rebalance coordinates. Used by the
/// expectation trackers and the equilibrium-propagation step.
pub fn apply_control_curve(
    slice_plus: &ValueSlice,
    wealth_nodes: &[f64],
    u_curve: &[f64],
    q_m: f64,
    lattice: &Lattice,
    exp_y: &[f64],
) -> Result<ValueSlice> {
    let m = match slice_plus.tag {
        TimeTag::Plus(m) => m,
        other => {
            return Err(Error::TimeTagMismatch {
                expected: "t_m^+".to_string(),
                got: other.to_string(),
            })
        }
    };
    let b_max = lattice.spec.b_max;
    let mut out = ValueSlice::new(slice_plus.n_y, slice_plus.n_b, TimeTag::At(m));
    for n in 0..slice_plus.n_y {
        let s = exp_y[n];
        let dst = out.row_mut(n);
        for (j, &b) in lattice.b_nodes.iter().enumerate() {
            let w = s + b + q_m;
            let mut u = crate::lattice::interp_w(wealth_nodes, u_curve, w).clamp(0.0, 1.0);
            // honor the bond position limit at wealth beyond the cap
            if (1.0 - u) * w > b_max {
                u = 1.0 - b_max / w;
            }
            dst[j] = Stencil::new(lattice, u * w, (1.0 - u) * w).eval(slice_plus);
        }
    }
    Ok(out)
}

/// Shared immutable state for one solver run.
pub struct DpContext<'a> {
    pub params: &'a ModelParams,
    pub scenario: &'a Scenario,
    pub lattice: &'a Lattice,
    pub rows: DensityRows,
    pub settle: SettleMap,
    pub reb: RebalanceGrid,
    pub exp_y: Vec<f64>,
}

impl<'a> DpContext<'a> {
    pub fn new(
        params: &'a ModelParams,
        scenario: &'a Scenario,
        lattice: &'a Lattice,
        n_terms: usize,
    ) -> Result<Self> {
        params.validate()?;
        scenario.validate()?;
        let cfg = DensityConfig::new(n_terms, scenario.dt())?;
        let rows = DensityRows::new(params, lattice, &cfg)?;
        let settle = SettleMap::new(lattice, params.r, scenario.dt());
        let reb = RebalanceGrid::new(lattice);
        let exp_y = lattice.y_nodes.iter().map(|&y| y.exp()).collect();
        Ok(DpContext {
            params,
            scenario,
            lattice,
            rows,
            settle,
            reb,
            exp_y,
        })
    }

    /// settle -> convolve, the stochastic part of one backward step.
    pub fn step_back(&self, slice: &ValueSlice) -> Result<ValueSlice> {
        let settled = settle_interest(slice, &self.settle, self.scenario)?;
        convolve_step(&settled, &self.rows, self.lattice)
    }
}
