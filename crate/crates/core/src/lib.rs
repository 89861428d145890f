//! Gated subspace inference.
//!
//! Every linear map `y = Wx` of a transformer layer is split exactly into a
//! cached low-rank image `M = W·V_k` applied to `g = V_kᵀx` and a residual
//! correction `W·r`. A per-token gate skips the correction when `‖r‖/‖x‖`
//! is small, so most tokens read `k/d` of the weight bytes while the rest
//! are computed exactly.

pub mod cascade;
pub mod container;
pub mod corpus;
pub mod cost;
pub mod error;
pub mod gated;
pub mod linalg;
pub mod model;
pub mod subspace;
pub mod svd;

pub use error::{ContainerError, Error, Result};
pub use gated::{
    cache_image, fold_gate_stats, gated_forward, spectral_norm, CachedImage, ExecutionMode, GatePath, GateRecord,
    LayerStats,
};
pub use linalg::DenseMatrix;
pub use subspace::{
    build_basis, dgks_insert, principal_angle_cosines, project, BasisOrigin, ProjectionResult, SubspaceBasis,
};
pub use svd::{effective_rank, thin_svd, SingularSpectrum, ThinSvd};
