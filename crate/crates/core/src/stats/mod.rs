//! Statistical analysis of study results.

pub mod analysis;
pub mod dist;
pub mod hypothesis;

use thiserror::Error;

pub use analysis::{analyze_study, StudyReport};
pub use hypothesis::{
    holm_sidak, independent_t, one_sample_t, one_way_anova, paired_t, rm_anova, Df, TestResult, ALPHA,
};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("need at least {needed} groups or conditions, found {found}")]
    TooFewGroups { needed: usize, found: usize },
    #[error("sample lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("rows of the repeated-measures matrix differ in length")]
    Ragged,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("p-value {0} outside [0, 1]")]
    InvalidP(f64),
    #[error("incomplete study: {}", .0.join("; "))]
    IncompleteStudy(Vec<String>),
}
