//! Post-calibration of wrist-worn heart-rate estimates.
//!
//! The crate turns raw recordings (ECG, device heart rate, triaxial
//! acceleration, step counts) into a 15-second feature grid, selects
//! informative features, trains regressors under leave-one-subject-out
//! cross-validation and reports agreement statistics against the
//! ECG-derived ground truth.
//!
//! Module map:
//!
//! * [`io`] session data model and CSV schemas
//! * [`signal`] ECG to ground-truth heart rate
//! * [`activity`] activity counts, PAL cut-points, step rate
//! * [`features`] feature grid, selection, standardization, rolling windows
//! * [`models`] SVR, random forest, GP, MLP, sigmoid regression, kNN
//! * [`eval`] folds, grid search and agreement statistics
//! * [`synth`] synthetic cohort generator
//! * [`pipeline`] configuration and end-to-end orchestration

pub mod activity;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod signal;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ground_truth.md")]
    mod ground_truth {}
    #[doc = include_str!("../../../book/src/activity.md")]
    mod activity {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
