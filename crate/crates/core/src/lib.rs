//! Semi-supervised training toolkit for CTC sequence models.
//!
//! A strong teacher labels unlabelled utterances with its collapsed best path;
//! a smaller student is then trained with CTC on labelled plus pseudo-labelled
//! data. Unlabelled data is chosen with confidence bins, domain sampling and
//! content/device caps. A synthetic corpus generator provides desk-scale data.

pub mod confidence;
pub mod corpus;
pub mod checkpoint;
pub mod ctc;
pub mod decoder;
pub mod kd;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod selection;
pub mod train;

pub use ctc::{
    brute_force_log_likelihood, collapse, ctc_log_likelihood, ctc_loss_and_grad, Alphabet, CtcError, LabelSequence,
    LogLikelihood, LogProbMatrix, LossGrad, Path,
};
pub use decoder::{extract_confidence_features, greedy_decode, prefix_beam_decode, ConfidenceFeatures, DecodeResult};
pub use metrics::{edit_distance, wer, werr, EditCounts, EvalReport};
pub use model::{FeatureMatrix, ModelConfig, ModelError, ModelParams};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
