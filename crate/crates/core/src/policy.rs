//! Stored rebalancing policies: per-time control curves on the shared
//! policy-wealth grid, consumable by the expectation tracker and the Monte
//! Carlo evaluator, and serialized as the policy-file artifact.

use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::dp::Scenario;
use crate::error::{Error, Result};
use crate::lattice::{interp_w, Lattice};
use crate::risk::RiskSpec;

/// One rebalance time's decision curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStage {
    /// Rebalance time in years.
    pub time_years: f64,
    /// Risky fraction per policy-wealth node, in [0, 1].
    pub u: Vec<f64>,
    /// Re-optimized threshold per node (time-consistent solvers only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold: Option<Vec<f64>>,
    /// Nodes where the threshold search hit the domain cap; the control is
    /// forced fully risky there.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub unbounded: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub solver: String,
    pub risk: Option<RiskSpec>,
    pub scenario: Scenario,
    pub grid_hash: String,
}

/// Piecewise-linear policy tables over post-cashflow wealth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Post-cashflow wealth nodes shared by all stages, ascending.
    pub wealth: Vec<f64>,
    /// One stage per rebalance time, ascending in time.
    pub stages: Vec<PolicyStage>,
    pub meta: PolicyMeta,
}

impl Policy {
    /// Control at stage `m` and post-cashflow wealth `w`, clamped to [0, 1].
    pub fn control_at(&self, m: usize, w: f64) -> f64 {
        interp_w(&self.wealth, &self.stages[m].u, w).clamp(0.0, 1.0)
    }

    /// A wealth-independent policy holding the risky fraction at `u`.
    pub fn constant(u: f64, scenario: &Scenario) -> Self {
        let stages = (0..scenario.rebalances)
            .map(|m| PolicyStage {
                time_years: m as f64 * scenario.dt(),
                u: vec![u; 2],
                threshold: None,
                unbounded: None,
            })
            .collect();
        Policy {
            wealth: vec![0.0, 1.0],
            stages,
            meta: PolicyMeta {
                solver: "constant".to_string(),
                risk: None,
                scenario: scenario.clone(),
                grid_hash: String::new(),
            },
        }
    }

    /// Checks the policy covers every rebalance time of `scenario`.
    pub fn validate_for(&self, scenario: &Scenario) -> Result<()> {
        if self.stages.len() != scenario.rebalances {
            return Err(Error::IncompletePolicy(format!(
                "policy has {} stages, scenario has {} rebalances",
                self.stages.len(),
                scenario.rebalances
            )));
        }
        for (m, stage) in self.stages.iter().enumerate() {
            if stage.u.len() != self.wealth.len() {
                return Err(Error::IncompletePolicy(format!(
                    "stage {m} has {} controls for {} wealth nodes",
                    stage.u.len(),
                    self.wealth.len()
                )));
            }
        }
        Ok(())
    }
}

/// Stable fingerprint of the discretization, stamped into policy metadata.
pub fn grid_hash(lattice: &Lattice) -> String {
    let mut h = DefaultHasher::new();
    let s = &lattice.spec;
    for v in [
        s.y_min_dag,
        s.y_min,
        s.y_max,
        s.y_max_dag,
        s.b_max,
        s.w_threshold_min,
        s.w_threshold_max,
        s.policy_w_min,
        s.policy_w_max,
        s.spacing_exponent,
    ] {
        v.to_bits().hash(&mut h);
    }
    for n in [s.n_y_dag, s.n_b, s.n_w, s.n_u, s.n_policy_wealth] {
        n.hash(&mut h);
    }
    for a in &s.anchors {
        a.to_bits().hash(&mut h);
    }
    format!("{:016x}", h.finish())
}
