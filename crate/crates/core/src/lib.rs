//! Differentially private Gaussian-process regression and classification.
//!
//! Predictions that are linear in the private outputs, `y* = C y`, are
//! released with Gaussian noise shaped by an optimised covariance `M` (the
//! cloaking mechanism). On top of that sit dense and FITC-sparse regression,
//! a privatised Laplace classifier (dense or low-rank), and exponential-
//! mechanism hyperparameter selection.

pub mod classification;
pub mod cloaking;
pub mod data;
pub mod error;
pub mod hyperselect;
pub mod kernels;
pub mod linalg;
pub mod regression;
pub mod rng;
pub mod sparse;

pub use classification::{
    dp_classify, dp_laplace_fit, dp_sparse_classify, laplace_cloaking_matrix, predict_class_prob, predict_latent,
    ClassifyOutput, ClassifyTask, LaplaceFit, LaplaceState, LatentPredictor, LatentPrior,
};
pub use cloaking::{
    c_delta, cloaking_matrix, delta_bound, dp_noise_sample, optimize_m, AscentMethod, CloakingResult, MOptimum,
    OptimizeOptions, PrivacySpec,
};
pub use data::{ImageDataset, TabularDataset};
pub use error::{Error, Result};
pub use hyperselect::{
    cross_val_sse, epsilon_sweep, evaluate_grid, expected_rmse, select_config, sensitivity_bound, ConfigGrid,
    SelectionTable, SensitivityThreshold,
};
pub use kernels::{HyperConfig, KernelSpec, LengthscaleFunction, LengthscaleParams, WeightFunction};
pub use regression::{
    dp_gp_regress, dp_regress, dp_sparse_regress, rmse_cv, CloakedPredictor, DPPrediction, RegressionMode,
    RegressionTask, RmseSummary,
};
pub use sparse::{fitc_cloaking_matrix, fitc_predict_var, kmeans_place, sor_lowrank, FitcParts, InducingSet};
