//! Gradient dimensionality reduction with every tSNE/UMAP difference
//! exposed as an independent switch. The similarity normalization is the
//! one toggle that changes the embedding family; everything else
//! (initialization, pseudo-distance, symmetrization, symmetric
//! attraction, kernel shape, sampling scheme) can be flipped freely.

pub mod affinity;
pub mod dataset;
pub mod error;
pub mod gradients;
pub mod knn;
pub mod lowdim;
pub mod metrics;
pub mod optimizer;
pub mod sampling;
pub mod spectral;

pub use affinity::{AffinityGraph, KernelMode, KernelParams, Symmetrization};
pub use dataset::{load_matrix, make_blobs, make_swiss_roll, save_matrix, DataMatrix, MatrixFormat};
pub use error::{GdrError, Result};
pub use gradients::{GradientRegime, LossKind};
pub use knn::{knn_descent, knn_exact, NeighborGraph, NnDescentParams};
pub use lowdim::{fit_ab, q_unnormalized, ABParams, AbSource};
pub use metrics::{ForceRatios, MetricReport};
pub use optimizer::{
    init_random, run, AbMode, ApplyMode, EmbeddingState, InitMode, LrSchedule, Preset, RunConfig,
    RunReport,
};
pub use sampling::{SamplingMode, SamplingPlan};
pub use spectral::init_spectral;
