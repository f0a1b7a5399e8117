//! Regression Monte Carlo for the equilibrium BSDE system.

mod basis;
mod picard;

pub use basis::{regression_step, BasisKind, Regression, RegressionBasis, StepBasis};
pub use picard::{
    bsvie_residual, contraction_report, extract_policy, picard_solve, write_policy_csv, BsdeSolution,
    ContractionReport, IterationRecord, PicardConfig, ResidualRow,
};
