use dcopt_core::dp::{DpContext, Scenario};
use dcopt_core::kou::ModelParams;
use dcopt_core::lattice::{GridSpec, Lattice};
use dcopt_core::mc::{simulate, SimConfig};
use dcopt_core::risk::{summarize, RiskSpec};
use std::time::Instant;

fn log_nodes(lo: f64, hi: f64, n_intervals: usize, with_zero: bool) -> Vec<f64> {
    // geometric ladder from lo to hi; optionally prepend the zero node
    let mut out = Vec::with_capacity(n_intervals + 1);
    let k = if with_zero { n_intervals - 1 } else { n_intervals };
    if with_zero {
        out.push(0.0);
    }
    for i in 0..=k {
        out.push(lo * (hi / lo).powf(i as f64 / k as f64));
    }
    out
}

#[test]
fn probe_logspace_desk() {
    let params = ModelParams::calibrated();
    let scenario = Scenario::dc_accumulation();
    let risk = RiskSpec::Cvar { alpha: 0.05, gamma: 10.0 };
    let spec = GridSpec::desk(&params, &scenario, &risk);
    let mut lattice = Lattice::build(&spec).unwrap();
    lattice.b_nodes = log_nodes(1.0e4, 5.0e8, spec.n_b, true);
    lattice.w_nodes = log_nodes(1.0e4, 5.0e8, spec.n_w, true);
    assert_eq!(lattice.b_nodes.len(), spec.n_b + 1);
    let t0 = Instant::now();
    let ctx = DpContext::new(&params, &scenario, &lattice, 12).unwrap();
    let sol = dcopt_core::precommit::solve(&risk, &ctx).unwrap();
    println!("solve: {:?}", t0.elapsed());
    println!("W* = {:.1} (table 750000), boundary={}", sol.optimal_threshold, sol.boundary_warning);
    let cfg = SimConfig { n_paths: 1_000_000, seed: 12345, antithetic: false };
    let samples = simulate(&sol.policy, &scenario, &params, &cfg).unwrap();
    let stats = summarize(&samples, 0.05, 668_810.0).unwrap();
    println!("MC mean = {:.0} ({:+.2}%)", stats.mean, (stats.mean / 2_441_270.0 - 1.0) * 100.0);
    println!("MC cvar = {:.0} ({:+.2}%)", stats.cvar_alpha, (stats.cvar_alpha / 668_810.0 - 1.0) * 100.0);
    println!("MC bpoe = {:.4} ({:+.2}pp)", stats.bpoe_d, (stats.bpoe_d - 0.05) * 100.0);
    println!("MC p5   = {:.0}, p50 = {:.0}, p95 = {:.0}", stats.p5, stats.p50, stats.p95);
}
