//! Shared domain types, the line-delimited dataset schema and heatmap I/O.

mod image;
mod record;
mod saliency;

pub use image::{load_image, save_png_rgb, RgbImage};
pub use record::{
    load_dataset, load_record, load_record_with, serialize_record, write_dataset, AnnotationRecord,
    FixationSet, FrameSequence, LoadOptions, SceneContext, ScenarioCategory, Source, Split,
    TimePeriod, Location, Verification, Weather,
};
pub use saliency::{load_saliency_map, save_saliency_map, SaliencyMap};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error in field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("fixation ({row}, {col}) outside {height}x{width} map")]
    Bounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("unsupported image format: {0}")]
    Format(String),
    #[error("map is degenerate (sums to zero or is empty)")]
    DegenerateMap,
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("value out of range: {0}")]
    ValueRange(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DataError {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        DataError::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}
