//! Stratified Monte Carlo cross-validation, R² and scatter export.

pub mod crossval;
pub mod metrics;
pub mod split;

pub use crossval::{
    aggregate, export_scatter, export_scatter_svg, read_scatter, run_crossval, run_trial, run_trial_on_split,
    scatter_csv, scatter_svg, CvReport, TrialFailure, TrialResult, TrialSetup,
};
pub use metrics::{mean, r_squared, sample_std};
pub use split::{split_indices, stratified_split, stratum, Split, SplitSpec};
