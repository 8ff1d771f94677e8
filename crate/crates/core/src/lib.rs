//! Pathwise superhedging on continuous nonnegative price paths.
//!
//! The value of a time-changed path functional is computed by a backward
//! recursion over checkpoint histories ([`dp`]). The same tables drive a
//! nearly optimal martingale measure ([`measure`]) and a grid-hitting simple
//! strategy that superhedges the functional ([`strategy`]).

pub mod dp;
pub mod functionals;
pub mod measure;
pub mod paths;
pub mod stochastics;
pub mod strategy;

pub use dp::{DpError, DpTolerance, History, ValueModel, WalkTable};
pub use functionals::{builtin_terminal, eval_fn, ExperimentParams, FunctionalError, TerminalFunction};
pub use measure::{make_choice_tables, sample_measure_path, ChoiceTables, MeasureConfig, MeasureError, MeasureSample};
pub use paths::{hausdorff_distance, uniform_distance, Path, PathError};
pub use stochastics::{Estimate, RngStream};
pub use strategy::{build_superhedge, run_capital, verify_superhedge, GridHedge, SimpleStrategy, StrategyError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
}
