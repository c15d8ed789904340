//! Multi-period mean/tail-risk portfolio optimization for defined-contribution
//! accumulation under Kou jump-diffusion dynamics.
//!
//! The crate provides:
//! - the jump-diffusion model and its one-period transition density ([`kou`]),
//! - scalarized tail-risk payoffs and empirical risk statistics ([`risk`]),
//! - computational grids and interpolation rules ([`lattice`]),
//! - the backward-recursion building blocks ([`dp`]),
//! - precommitment and time-consistent solvers ([`precommit`], [`tc`]),
//! - forward Monte Carlo policy evaluation ([`mc`]),
//! - efficient-frontier sweeps and the scalarization parameter maps
//!   between the two risk formulations ([`frontier`]).

pub mod dp;
pub mod error;
pub mod frontier;
pub mod kou;
pub mod lattice;
pub mod mc;
pub mod policy;
pub mod precommit;
pub mod risk;
pub mod tc;

pub use error::{Error, Result};
