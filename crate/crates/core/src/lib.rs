//! Equilibrium solvers for time-inconsistent stochastic control problems
//! with drift control and non-exponential discounting.

pub mod bsde;
pub mod builtins;
pub mod cli;
pub mod closed_forms;
pub mod config;
pub mod error;
pub mod lattice;
pub mod mc;
pub mod pde;
pub mod problem;
pub mod scalar;
pub mod verify;

pub use error::{Error, Result};
pub use problem::{
    eval_discount, hamiltonian_dh, hamiltonian_h, hamiltonian_sup, Action, ActionBox, AnalyticPolicy, DiscountFunction,
    Drift, FeedbackTable, Policy, ProblemSpec, RunningReward, TerminalReward, Volatility,
};
pub use scalar::Real;

pub type Problem = ProblemSpec<f64>;
pub type Discount = DiscountFunction<f64>;
pub type PolicyF64 = Policy<f64>;
