//! Angular-slice dataset, small MLP classifiers trained from scratch, and the
//! width sweep over trained models.

pub mod data;
pub mod mlp;
pub mod sweep;
pub mod train;

pub use data::{gen_angular_data, slice_label, AngularDataset};
pub use mlp::{
    gradient_check, mlp_backward, mlp_forward, Adam, Classifier, GradCheck, Gradients, Mlp, GRAD_CHECK_FLOOR,
    GRAD_CHECK_STEP,
};
pub use sweep::{
    permuted_pair, spearman, width_sweep, PermutedPairConfig, PermutedPairReport, WidthRow, WidthSweepConfig,
    WidthSweepResult,
};
pub use train::{train, NormConstraint, TrainConfig, TrainedModel, UnembeddingMode, SUPPORTED_WIDTHS};
