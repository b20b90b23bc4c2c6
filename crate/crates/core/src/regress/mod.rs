//! Regression engines and their evaluation.

pub mod bagging;
pub mod cv;
pub mod krr;
pub mod metrics;
pub mod ols;

pub use bagging::{bagged_fit, BagParams, BaggedModel, Criterion};
pub use cv::{cross_validate, CvReport, FoldOutcome, FoldReport};
pub use krr::{coulomb_matrix, krr_fit, krr_select, max_atoms, random_sorted_matrices, KrrGrid, KrrModel, KrrParams};
pub use metrics::{mae, rmse};
pub use ols::{ols_fit, OlsModel};
