//! Scene change detection between two point clouds.
//!
//! Each scan is summarized by a Gaussian mixture fitted with
//! Expectation-Maximization (with component annihilation and
//! minimum-description-length model selection). Changes are the mixture
//! components whose removal most reduces the Earth Mover's Distance between
//! the two summaries.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`pointcloud`]: PLY I/O, outlier removal, voxel downsampling, PCA, cropping
//! - [`gmm`]: mixture types, EM fitting and model selection
//! - [`transport`]: exact transportation solver and EMD
//! - [`changedetect`]: greedy component extraction, point labeling, the full pipeline
//! - [`eval`]: component-level confusion counts and metrics
//! - [`synth`]: deterministic synthetic scene pairs with ground truth

pub mod changedetect;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod pointcloud;
pub mod synth;
pub mod transport;

pub use changedetect::{
    detect_changes, label_points, run_pipeline, ChangeModel, DetectionConfig, DetectionMode, DetectionReport,
    MassPolicy, StageTimings,
};
pub use error::{Error, Result};
pub use eval::{classify_components, compute_metrics, ConfusionCounts, GroundTruthRegion, Metrics};
pub use gmm::{fit, EmConfig, EmTrace, GaussianComponent, MixtureModel};
pub use pointcloud::{FilterParams, PcaTransform, PointCloud};
pub use transport::{emd, Signature};
