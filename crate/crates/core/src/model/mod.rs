//! Hierarchical network assembly, the training protocol and median-ensembled
//! importance.

mod arch;
mod ensemble;
mod protocol;

pub use arch::{build, build_with_l1, comparison_architectures, ArchitectureConfig, BuiltNetwork, LayerCount};
pub use ensemble::{
    derandomized_importance, ensemble_from_runs, median_matrix, run_importance, w_correlation, w_vector,
    EnsembleResult,
};
pub use protocol::{
    cross_validate, holdout_epochs, kfold_ids, optimal_epoch, train, CvResult, DrawResult, RunConfig, SearchSpace,
    TrainData, TrainedModel, STABILITY_HALF_WINDOW, STABILITY_TOLERANCE,
};

pub use ensemble::mean_off_diagonal;
