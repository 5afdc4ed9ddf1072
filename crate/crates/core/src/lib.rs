//! Analysis of randomized advertising holdout experiments whose outcomes are
//! mostly zero with a continuous positive part.
//!
//! Customers fall into three principal strata: `A` buys with or without the
//! ad, `I` buys only when exposed, `N` never buys. Modelling the strata
//! explicitly gives lower-variance treatment effect estimates than a plain
//! difference in means.

pub mod covariates;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod models;
pub mod presets;
pub mod simulation;
pub mod stats;

pub use data::{ExperimentDataset, ExperimentRecord, PanelHistory, PanelRecord};
pub use error::{Error, Result};
