//! Synthetic instances, recovery metrics and held-out prediction.

pub mod bench;
mod generate;
mod metrics;
mod predict;

pub use generate::{generate_synthetic, sample_responses, NnzMode, SynthConfig};
pub use metrics::{
    best_permutation_exhaustive, eval_metrics, hungarian_max, match_permutation, match_scores, permuted_truth_baseline,
    support, EvalReport, EXHAUSTIVE_MAX_K,
};
pub use predict::{
    cross_validate, kfold_partition, majority_baseline, predict_disjoint, predict_heldout, split_holdout, CvResult,
    CvScore,
};
