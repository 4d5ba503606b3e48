//! Experiment orchestration: dataset generation, k-fold cross-validation,
//! augmentation comparison campaigns, and report aggregation.

mod dataset;
mod experiment;
mod report;

pub use dataset::{gen_dataset, AugmentedDataset, GenConfig, SubsetSource};
pub use experiment::{
    compare_augmentations, kfold_split, run_experiment, run_experiment_on_folds, AugComparison,
    ExperimentConfig, MethodRow,
};
pub use report::{
    aggregate, comparison_to_csv, fold_report_to_csv, FoldReport, FoldResult, ReferenceRow,
    FULL_SCALE_AUG_RESULTS,
};
