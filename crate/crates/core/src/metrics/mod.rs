//! Evaluation suite for the three outputs: attention maps (where) and the
//! generated what / why text.

mod eval;
pub mod saliency;
pub mod text;

pub use eval::{
    evaluate_files, evaluate_split, EvalConfig, EvalReport, GroundTruth, GroupReport, Prediction,
    PredictionLine, SaliencyScores, TextScores,
};
pub use saliency::{
    auc_borji, auc_judd, cc_metric, kldiv_metric, nss_metric, roc_auc, sim_metric,
    NegativeSampling,
};
pub use text::{bleu, cider, meteor_simplified, rouge_l, tokenize, CiderScores};

use thiserror::Error;

use crate::data_model::DataError;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("map has zero variance")]
    ZeroVariance,
    #[error("fixation set is empty")]
    EmptyFixations,
    #[error("every pixel is fixated; no negatives for the ROC")]
    NoNegatives,
    #[error("candidate text is empty")]
    EmptyCandidate,
    #[error("corpus of {0} sample(s) is too small for IDF statistics")]
    CorpusTooSmall(usize),
    #[error("split is empty")]
    EmptySplit,
    #[error("prediction missing for record `{0}`")]
    MissingPrediction(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Data(#[from] DataError),
}
