//! Kernel machines trained by sequential minimal optimization.
//!
//! [`smo_train_binary`] and [`smo_train_svr`] share one dual solver
//! ([`solver`]) that works on the generic problem
//!
//! ```text
//! min ½ αᵀQα + pᵀα   s.t.  yᵀα = 0,  0 ≤ α ≤ C
//! ```
//!
//! with `Q_ij = y_i y_j K(x_i, x_j)`. Classification uses `p = -1`; ε-SVR
//! doubles the variables into (α, α*) with `p = (ε - t, ε + t)`.
//! Multiclass grading is one-vs-one over every class pair.

mod grid;
mod kernel;
mod model;
mod solver;
mod standardize;
mod svc;
mod svr;

use crate::error::ErrorFamily;

pub use grid::{grid_search_cv, CvCell, GridResult, GridSpec, Hyperparameters, KernelChoice, Task};
pub use kernel::{gram_matrix, KernelSpec};
pub use model::{load_model, save_model, ModelDocument, ModelPayload, MODEL_FORMAT_VERSION};
pub use solver::SolverParams;
pub use standardize::{Standardizer, STD_FLOOR};
pub use svc::{predict_svc, smo_train_binary, train_svc, vote, BinarySvc, PairMachine, SvcModel};
pub use svr::{smo_train_svr, train_svr, SvrModel};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SvmError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("binary training needs both labels present")]
    SingleClassInput,
    #[error("classification needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("regression needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("labels must be +1 or -1, got {0}")]
    InvalidLabel(f64),
    #[error("non-finite value in training data")]
    NonFiniteInput,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("{folds} folds exceed the smallest class count {smallest}")]
    FoldsExceedClassCount { folds: usize, smallest: usize },
    #[error("sample {0} has no class label")]
    MissingLabel(usize),
    #[error("sample {index} has no `{target}` target")]
    MissingTarget { index: usize, target: &'static str },
    #[error("pair ({positive}, {negative}): {source}")]
    Pair {
        positive: String,
        negative: String,
        #[source]
        source: Box<SvmError>,
    },
    #[error("unsupported model document: {0}")]
    UnsupportedModel(String),
}

impl SvmError {
    pub fn family(&self) -> ErrorFamily {
        match self {
            SvmError::NonFiniteInput => ErrorFamily::Numeric,
            SvmError::UnsupportedModel(_) => ErrorFamily::Io,
            SvmError::Pair { source, .. } => source.family(),
            _ => ErrorFamily::Config,
        }
    }
}
