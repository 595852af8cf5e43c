//! Evaluation for the procalc agent: metric formulas, gold-answer checks,
//! needle-in-a-haystack retrieval runs, dataset splits and ablations.

pub mod ablation;
pub mod dataset;
pub mod gold;
pub mod metrics;
pub mod needle;
pub mod report;
pub mod suite;
