//! Construction of weighted-average-power (WAP) maximizing tests, least
//! favorable null distributions, and attainable power envelopes by Monte
//! Carlo subgradient descent.
//!
//! The library answers the question "is this hypothesis test effectively
//! optimal?" for a user-supplied testing problem and ad hoc test. It builds
//! a comparison test that maximizes weighted average power against the most
//! unfavorable weighting over a discretized alternative (outer loop), subject
//! to size control enforced through Lagrange multipliers on a discretized
//! null (inner loop). Scanning both tests over fine parameter grids yields a
//! power envelope and a three-way verdict: effectively optimal, effectively
//! dominated, or inconclusive.
//!
//! Modules mirror the pipeline: [`problem`] declares testing problems,
//! [`bank`] and [`mc`] provide common-random-number Monte Carlo, [`simplex`]
//! projects weight iterates, [`inner`]/[`outer`] run the subgradient loops,
//! [`envelope`] orchestrates grid refinement and verdicts, and [`problems`]
//! ships the built-in problem families.

pub mod bank;
pub mod bessel;
mod engine;
pub mod envelope;
pub mod error;
pub mod inner;
pub mod mc;
pub mod outer;
pub mod problem;
pub mod problems;
pub mod report;
pub mod simplex;
pub mod util;

pub use bank::DrawBank;
pub use envelope::{
    build_ape, wap_comparison, ApeReport, BuildInputs, BuildOutput, RefinementRecord,
    RefinementTarget, TestDescriptor, ThresholdConfig, Verdict,
};
pub use error::{Error, Result};
pub use inner::{
    dual_value, run_inner, DualTrace, InnerSettings, MultiplierVector, NpTest, StepSchedule,
};
pub use mc::{rejection_probability, wap, EvalTarget, RejectionEstimate};
pub use outer::{power_gap_vector, run_outer, OuterResult, OuterSettings, OuterTrace};
pub use report::{
    format_sig, grid_table, heatmap_grid, write_report_files, ReportFiles, TableFormat,
};
pub use problem::{
    validate_problem, AdHocTest, AlternativeSupport, NullComponent, NullComponentKind,
    ParameterPoint, SwitchingRule, TestingProblem, UniformSlice,
};
pub use simplex::{project_simplex, WeightVector};
