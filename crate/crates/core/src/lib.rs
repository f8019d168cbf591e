//! Region-based semantic segmentation with jointly calibrated one-vs-all
//! linear SVMs.
//!
//! Images are represented by overlapping regions drawn from several
//! bottom-up hierarchies over a shared superpixel partition. Each pixel takes
//! the class of the best calibrated (region, class) score over all regions
//! that contain it. The per-class sigmoid calibration is fitted jointly
//! against the final pixel labeling, in both fully and weakly supervised
//! settings.
//!
//! Modules:
//! - [`dataset`]: data model, synthetic generator, file formats, IoU
//! - [`forest`]: region forests and the labeling rule
//! - [`svm`]: one-vs-all squared-hinge SVMs with hard-negative mining
//! - [`calibration`]: sigmoids, losses, joint calibration, Platt baseline
//! - [`weak`]: latent-label alternation for image-level supervision
//! - [`metrics`]: evaluation reports
//! - [`pipeline`]: glue used by the command-line front end

pub mod calibration;
pub mod dataset;
mod error;
pub mod forest;
pub mod metrics;
pub mod pipeline;
pub mod svm;
pub mod weak;

#[cfg(test)]
mod test_support;

pub use calibration::{
    joint_calibrate, platt_fit, sigmoid, CalibrationParams, GridSpec, LossKind, Method,
    SigmoidParams,
};
pub use dataset::{
    generate_synthetic, load_dataset, save_dataset, ClassId, Dataset, ImageId, ImageRecord,
    RegionId, Superpixel, SuperpixelId, Supervision, SyntheticConfig,
};
pub use error::{Error, Result};
pub use forest::{label_image_fast, label_image_naive, Labeling, RegionForest, ScoreMatrix};
pub use metrics::{evaluate, evaluate_weak, EvalReport, WeakEvalReport};
pub use svm::{LinearModel, SvmConfig};
