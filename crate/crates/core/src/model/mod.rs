//! Toy-scale LLada: patch encoder with projector, causal language model with an
//! `[ATTN]` token, ψ projector and the cross-attention map decoder.

mod checkpoint;
mod config;
mod generate;
mod network;
mod params;
mod tokenizer;

pub use checkpoint::{
    blob_path, load_checkpoint, read_manifest, save_checkpoint, Dtype, LoadedCheckpoint, Manifest, TensorEntry,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use config::{LoraConfig, ModelConfig, PsiInit, DECODER_STAGES};
pub use generate::{GenerateOptions, Generation, MAX_BEAM_WIDTH};
pub use network::{
    padded_segments, predicted_map, BatchForward, BatchItem, DecoderTrace, DecoderValues, ForwardOptions,
    ForwardOutput, FreezeOptions, LladaModel, LlmOutput,
};
pub use params::{Binder, ParamSet, Trainable};
pub use tokenizer::{
    build_base_vocab, canonical_item, tokenize, Segment, TokenSequence, Vocab, ATTN_TOKEN, BOS, EOS, FIELD_SEP, IMG,
    ITEM_SEP, MODEL_PROMPT, PAD, SPECIAL_TOKENS, UNK, WHAT_MARKER, WHY_MARKER,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("sequence length {len} exceeds the maximum {max}")]
    Length { len: usize, max: usize },
    #[error("answer contains no [ATTN] token")]
    MissingAttnToken,
    #[error("answer contains {0} [ATTN] tokens, expected exactly one")]
    MultipleAttnToken(usize),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
