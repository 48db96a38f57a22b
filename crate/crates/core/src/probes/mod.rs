//! Regularized linear probes, inner-CV model selection and the repeated
//! train/test split protocol.

pub mod cv;
pub mod lasso;
pub mod logistic;
pub mod protocol;
pub mod split;

pub use cv::{nested_cv_select, select_best, CvOptions, CvResult, FittedModel, GridScale, HyperGrid, ModelKind};
pub use lasso::{alpha_max, fit_lasso, fit_lasso_path, predict_linear, soft_threshold, LinearModel};
pub use logistic::{fit_logistic, fit_logistic_traced, logistic_objective, predict_logistic, sigmoid, LogisticModel};
pub use protocol::{
    run_probe_matrix, run_probe_protocol, DescriptorOutcome, PcaFit, Preprocessing, ProbeConfig, ProbeRun, RegressionScore,
    RepetitionResult,
};
pub use split::{derive_seed, inner_folds, make_splits, shuffled_indices, Split, SplitPlan};
