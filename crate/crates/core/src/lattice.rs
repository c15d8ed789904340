//! Computational grids: uniform log-asset nodes with trapezoid quadrature
//! weights, power-law-spaced bond / threshold / policy-wealth nodes, and the
//! interpolation rules (including the linear extrapolation used above the
//! bond cap).
//!
//! The unequal spacing concentrates nodes at the low end of each dollar
//! range; the exponent is a configuration choice, not a contract, and any
//! monotone spacing is admissible for convergence.

use serde::{Deserialize, Serialize};

use crate::dp::Scenario;
use crate::error::{Error, Result};
use crate::kou::ModelParams;
use crate::risk::RiskSpec;

/// Dollar levels that are forced onto the bond and threshold grids so that
/// the region where the optimal control has structure stays resolved.
pub const DEFAULT_ANCHORS: [f64; 3] = [1.0e5, 1.0e6, 5.0e6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub y_min_dag: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub y_max_dag: f64,
    pub b_max: f64,
    pub w_threshold_min: f64,
    pub w_threshold_max: f64,
    /// Interior log-asset subintervals (bookkeeping; the full grid count
    /// `n_y_dag` is authoritative).
    pub n_y: usize,
    pub n_y_dag: usize,
    pub n_b: usize,
    pub n_w: usize,
    pub n_u: usize,
    pub n_policy_wealth: usize,
    pub policy_w_min: f64,
    pub policy_w_max: f64,
    /// Power-law exponent for the unequally spaced bond and threshold
    /// grids.
    pub spacing_exponent: f64,
    /// Power-law exponent for the policy-wealth grid. Higher values trade
    /// resolution at sub-dollar wealth for resolution in the hedging range.
    pub policy_spacing_exponent: f64,
    /// Forced nodes for the bond and threshold grids; empty disables.
    pub anchors: Vec<f64>,
}

impl GridSpec {
    /// Full-resolution grid preset.
    pub fn paper_full(params: &ModelParams, scenario: &Scenario, risk: &RiskSpec) -> Self {
        Self::with_counts(params, scenario, risk, 1024, 333, 333, 333, 4000)
    }

    /// Reduced preset sized for laptop-scale runs.
    pub fn desk(params: &ModelParams, scenario: &Scenario, risk: &RiskSpec) -> Self {
        Self::with_counts(params, scenario, risk, 512, 128, 128, 128, 2000)
    }

    pub fn with_counts(
        params: &ModelParams,
        scenario: &Scenario,
        risk: &RiskSpec,
        n_y_dag: usize,
        n_b: usize,
        n_w: usize,
        n_u: usize,
        n_policy_wealth: usize,
    ) -> Self {
        let center = 1.0e5f64.ln();
        let b_max = 5.0e8;
        let w_max = 5.0e8;
        let total_cash: f64 = scenario.cashflows.iter().sum();
        GridSpec {
            y_min_dag: center - 16.0,
            y_min: center - 8.0,
            y_max: center + 8.0,
            y_max_dag: center + 16.0,
            b_max,
            w_threshold_min: risk.threshold_floor(),
            w_threshold_max: w_max,
            n_y: n_y_dag / 2,
            n_y_dag,
            n_b,
            n_w,
            n_u,
            n_policy_wealth,
            policy_w_min: (center - 16.0).exp(),
            policy_w_max: (center + 16.0).exp()
                + b_max * (params.r * scenario.t_years).exp()
                + scenario.initial_wealth
                + total_cash,
            spacing_exponent: 4.0,
            policy_spacing_exponent: 12.0,
            anchors: DEFAULT_ANCHORS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.y_min_dag < self.y_min && self.y_min < self.y_max && self.y_max < self.y_max_dag)
        {
            return Err(Error::InvalidGrid(
                "log-asset bounds must satisfy y_min_dag < y_min < y_max < y_max_dag".to_string(),
            ));
        }
        if self.n_y_dag % 2 != 0 {
            return Err(Error::InvalidGrid("n_y_dag must be even".to_string()));
        }
        if !(self.b_max > 0.0) {
            return Err(Error::InvalidGrid("b_max must be > 0".to_string()));
        }
        if !(self.w_threshold_min < self.w_threshold_max) {
            return Err(Error::InvalidGrid(
                "threshold bounds must be increasing".to_string(),
            ));
        }
        if !(self.policy_w_min > 0.0 && self.policy_w_min < self.policy_w_max) {
            return Err(Error::InvalidGrid(
                "policy wealth bounds must be positive and increasing".to_string(),
            ));
        }
        for (name, n) in [
            ("n_y_dag", self.n_y_dag),
            ("n_b", self.n_b),
            ("n_w", self.n_w),
            ("n_u", self.n_u),
            ("n_policy_wealth", self.n_policy_wealth),
        ] {
            if n < 2 {
                return Err(Error::InvalidGrid(format!("{name} must be >= 2, got {n}")));
            }
        }
        if !(self.spacing_exponent >= 1.0) || !(self.policy_spacing_exponent >= 1.0) {
            return Err(Error::InvalidGrid(
                "spacing exponents must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Immutable discretized domain shared by the solvers.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub spec: GridSpec,
    /// Uniform log-asset nodes, `n_y_dag + 1` of them.
    pub y_nodes: Vec<f64>,
    pub y_step: f64,
    /// Bond nodes starting at 0.
    pub b_nodes: Vec<f64>,
    /// Threshold candidates spanning the truncated threshold domain.
    pub w_nodes: Vec<f64>,
    /// Control nodes spanning [0, 1] inclusive.
    pub u_nodes: Vec<f64>,
    /// Policy-wealth nodes used for the rebalance optimization and as the
    /// Monte Carlo policy table.
    pub w_policy: Vec<f64>,
    /// Composite-trapezoid quadrature weights over the y nodes.
    pub quad_weights: Vec<f64>,
    /// First and last strictly interior y indices (y_min < y < y_max).
    pub interior_lo: usize,
    pub interior_hi: usize,
}

impl Lattice {
    pub fn build(spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_y_dag;
        let y_step = (spec.y_max_dag - spec.y_min_dag) / n as f64;
        let y_nodes: Vec<f64> = (0..=n).map(|i| spec.y_min_dag + i as f64 * y_step).collect();
        let mut quad_weights = vec![y_step; n + 1];
        quad_weights[0] = 0.5 * y_step;
        quad_weights[n] = 0.5 * y_step;
        let tol = 1e-9 * y_step;
        let interior_lo = y_nodes
            .iter()
            .position(|&y| y > spec.y_min + tol)
            .ok_or_else(|| Error::InvalidGrid("no interior y nodes".to_string()))?;
        let interior_hi = y_nodes
            .iter()
            .rposition(|&y| y < spec.y_max - tol)
            .ok_or_else(|| Error::InvalidGrid("no interior y nodes".to_string()))?;
        let b_nodes = power_law_nodes(
            0.0,
            spec.b_max,
            spec.n_b,
            spec.spacing_exponent,
            &spec.anchors,
        );
        let w_nodes = power_law_nodes(
            spec.w_threshold_min,
            spec.w_threshold_max,
            spec.n_w,
            spec.spacing_exponent,
            &spec.anchors,
        );
        let u_nodes: Vec<f64> = (0..=spec.n_u)
            .map(|i| i as f64 / spec.n_u as f64)
            .collect();
        let w_policy = power_law_nodes(
            spec.policy_w_min,
            spec.policy_w_max,
            spec.n_policy_wealth,
            spec.policy_spacing_exponent,
            &[],
        );
        Ok(Lattice {
            spec: spec.clone(),
            y_nodes,
            y_step,
            b_nodes,
            w_nodes,
            u_nodes,
            w_policy,
            quad_weights,
            interior_lo,
            interior_hi,
        })
    }

    pub fn n_y_nodes(&self) -> usize {
        self.y_nodes.len()
    }

    pub fn n_b_nodes(&self) -> usize {
        self.b_nodes.len()
    }

    /// Clamped fractional position of `y` on the uniform log-asset grid.
    pub fn locate_y(&self, y: f64) -> (usize, f64) {
        let pos = (y - self.spec.y_min_dag) / self.y_step;
        if pos <= 0.0 {
            return (0, 0.0);
        }
        let last = self.y_nodes.len() - 1;
        if pos >= last as f64 {
            return (last - 1, 1.0);
        }
        let i = pos.floor() as usize;
        (i.min(last - 1), pos - i.min(last - 1) as f64)
    }

    /// Position of `b >= 0` on the bond grid: either an in-range linear
    /// stencil or the proportional extrapolation factor beyond the cap.
    pub fn locate_b(&self, b: f64) -> BondPos {
        let last = self.b_nodes.len() - 1;
        if b > self.b_nodes[last] {
            return BondPos::Beyond {
                scale: b / self.b_nodes[last],
            };
        }
        if b <= self.b_nodes[0] {
            return BondPos::Within { idx: 0, frac: 0.0 };
        }
        let idx = match self
            .b_nodes
            .binary_search_by(|x| x.partial_cmp(&b).expect("finite"))
        {
            Ok(i) if i == last => return BondPos::Beyond { scale: 1.0 },
            Ok(i) => return BondPos::Within { idx: i, frac: 0.0 },
            Err(i) => i - 1,
        };
        let frac = (b - self.b_nodes[idx]) / (self.b_nodes[idx + 1] - self.b_nodes[idx]);
        BondPos::Within { idx, frac }
    }

    /// Clamped linear stencil of `w` on the policy-wealth grid. The grid is
    /// pure power-law, so the cell is found by inverting the spacing map.
    pub fn locate_policy(&self, w: f64) -> (usize, f64) {
        let nodes = &self.w_policy;
        let last = nodes.len() - 1;
        if w <= nodes[0] {
            return (0, 0.0);
        }
        if w >= nodes[last] {
            return (last - 1, 1.0);
        }
        let lo = self.spec.policy_w_min;
        let range = self.spec.policy_w_max - lo;
        let x = ((w - lo) / range).max(0.0);
        let p = self.spec.policy_spacing_exponent;
        let pos = if (p - 4.0).abs() < 1e-12 {
            x.sqrt().sqrt() * last as f64
        } else {
            x.powf(1.0 / p) * last as f64
        };
        let mut i = (pos.floor() as usize).min(last - 1);
        // Guard against floating-point drift of the inverse map.
        while i > 0 && w < nodes[i] {
            i -= 1;
        }
        while i < last - 1 && w > nodes[i + 1] {
            i += 1;
        }
        let frac = ((w - nodes[i]) / (nodes[i + 1] - nodes[i])).clamp(0.0, 1.0);
        (i, frac)
    }
}

/// Outcome of locating a bond level relative to the grid cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BondPos {
    Within { idx: usize, frac: f64 },
    /// `b > b_max`; values extrapolate proportionally from the cap node.
    Beyond { scale: f64 },
}

/// `lo + (hi - lo) * (j/n)^p` nodes with anchor values swapped onto the
/// nearest non-endpoint node, preserving the node count.
fn power_law_nodes(lo: f64, hi: f64, n: usize, exponent: f64, anchors: &[f64]) -> Vec<f64> {
    let mut nodes: Vec<f64> = (0..=n)
        .map(|j| lo + (hi - lo) * (j as f64 / n as f64).powf(exponent))
        .collect();
    for &a in anchors {
        if a <= lo || a >= hi {
            continue;
        }
        if nodes.iter().any(|&x| x == a) {
            continue;
        }
        let mut best = 1usize;
        let mut best_d = f64::INFINITY;
        for (j, &x) in nodes.iter().enumerate().take(n).skip(1) {
            let d = (x - a).abs();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        nodes[best] = a;
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).expect("finite nodes"));
    nodes
}

/// Piecewise-linear interpolation on the bond grid with proportional
/// extrapolation above the cap.
pub fn interp_b(values: &[f64], b_nodes: &[f64], b: f64) -> f64 {
    debug_assert_eq!(values.len(), b_nodes.len());
    let last = b_nodes.len() - 1;
    if b > b_nodes[last] {
        return b / b_nodes[last] * values[last];
    }
    if b <= b_nodes[0] {
        return values[0];
    }
    let idx = match b_nodes.binary_search_by(|x| x.partial_cmp(&b).expect("finite")) {
        Ok(i) => return values[i],
        Err(i) => i - 1,
    };
    let frac = (b - b_nodes[idx]) / (b_nodes[idx + 1] - b_nodes[idx]);
    values[idx] + frac * (values[idx + 1] - values[idx])
}

/// Linear interpolation of a sorted (x, y) curve, clamped at both ends.
pub fn interp_w(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    debug_assert!(!xs.is_empty());
    let last = xs.len() - 1;
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[last] {
        return ys[last];
    }
    let idx = match xs.binary_search_by(|v| v.partial_cmp(&x).expect("finite")) {
        Ok(i) => return ys[i],
        Err(i) => i - 1,
    };
    let frac = (x - xs[idx]) / (xs[idx + 1] - xs[idx]);
    ys[idx] + frac * (ys[idx + 1] - ys[idx])
}
