//! Hyperspectral peat-analysis pipeline.
//!
//! Raw pushbroom scans are converted to reflectance with dark/white
//! references, cropped to a central region of interest, shadow-masked with
//! Otsu's threshold, aggregated into averaged spectral samples, and finally
//! graded (one-vs-one SVM) or regressed (ε-SVR). Both learners are trained
//! with a sequential minimal optimization solver and tuned by
//! cross-validated grid search.
//!
//! The modules mirror the processing stages:
//!
//! * [`hypercube`]: ENVI I/O, radiometric calibration, ROI cropping
//! * [`masking`]: intensity image, Otsu threshold, pixel mask
//! * [`sampling`]: grouped spectral samples and stratified splits
//! * [`svm`]: kernels, SMO, SVC/SVR, grid search
//! * [`metrics`]: confusion matrix, OA/AA/Kappa, MAE/RMSE/R²
//! * [`synth`]: synthetic cubes with known ground truth
//! * [`pipeline`]: end-to-end run driven by a [`pipeline::RunConfig`]

pub mod error;
pub mod hypercube;
pub mod masking;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod svm;
pub mod synth;

pub use error::{Error, ErrorFamily, Result};
pub use hypercube::{
    calibrate_reflectance, crop_roi, CalibrationDiagnostics, CubeKind, EnviHeader, Hypercube, ReferenceFrames,
    RoiWindow, WavelengthAxis,
};
pub use masking::{build_mask, intensity_image, otsu_threshold, IntensityImage, IntensityMode, PixelMask};
pub use metrics::{confusion_matrix, grade_report, regress_report, ConfusionMatrix, GradeReport, RegressReport};
pub use pipeline::{RunConfig, RunOutcome, RunReport};
pub use sampling::{draw_spectral_samples, split_train_test, SampleOrigin, SampleSet, SpectralSample, Targets};
pub use svm::{
    grid_search_cv, predict_svc, smo_train_binary, smo_train_svr, train_svc, BinarySvc, GridSpec, KernelSpec,
    SolverParams, Standardizer, SvcModel, SvrModel, Task,
};
pub use synth::{generate_cube, SyntheticCube, SyntheticSpec};
