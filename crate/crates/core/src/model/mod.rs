//! A small pre-norm decoder whose linear maps run through the gated path.

pub mod artifact;
pub mod calibrate;
pub mod config;
pub mod decoder;
pub mod eval;
pub mod runtime;
pub mod weights;

pub use artifact::{load_artifact, RuntimeArtifact};
pub use calibrate::{
    calibrate, hidden_rank, BasisSource, Calibration, CalibrationData, CalibrationOptions, DEFAULT_ETA,
};
pub use config::{ModelConfig, Positional};
pub use decoder::{forward, forward_captured, gelu, layer_norm, Decoder, LayerActivations, LayerCapture};
pub use eval::{
    argmax, evaluate, generation_agreement, greedy_generate, greedy_generate_tracked, perplexity,
    perplexity_from_logits, sample_sequence, top1_agreement, EvalReport, Reference, TrackingLog,
};
pub use runtime::{BoundAudit, GsiRuntime, LayerBases, MapKind};
pub use weights::{init_planted, init_random, load_weights, LayerWeights, ModelWeights};
