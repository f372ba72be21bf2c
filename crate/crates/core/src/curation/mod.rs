//! Attention-aware key-sample selection over frame sequences.
//!
//! A frame becomes a key sample when, compared with the most recent key, its scene
//! embedding drifts (`s_scene < tau_scene`), its attention map shifts
//! (`d_kl > tau_kl`) or the content of the attended region changes
//! (`s_attn < tau_attn`). The first frame is always a key.

mod embedding;
mod region;

pub use embedding::{EmbeddingProvider, Frame, PrecomputedEmbeddings, ThumbnailEmbedder, EMBEDDING_MAGIC};
pub use region::{
    attended_region, attended_region_embedding, attended_region_image, Region, RegionStrategy,
    REGION_THRESHOLD,
};

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::{DataError, FrameSequence, RgbImage, SaliencyMap, Source};

pub const KL_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-length embedding vector")]
    ZeroVector,
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("map is degenerate (sums to zero or is empty)")]
    DegenerateMap,
    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),
    #[error("frame `{0}` has no pixels but the provider needs them")]
    MissingImage(String),
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
    #[error("bad embedding file: {0}")]
    Format(String),
    #[error("frame {index}: {source}")]
    AtFrame {
        index: usize,
        #[source]
        source: Box<CurationError>,
    },
    #[error(transparent)]
    Data(DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<DataError> for CurationError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::DegenerateMap => CurationError::DegenerateMap,
            DataError::ShapeMismatch(a, b, c, d) => CurationError::ShapeMismatch(a, b, c, d),
            other => CurationError::Data(other),
        }
    }
}

impl CurationError {
    fn at(self, index: usize) -> Self {
        CurationError::AtFrame {
            index,
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub tau_scene: f64,
    pub tau_kl: f64,
    pub tau_attn: f64,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        Self {
            tau_scene: 0.9,
            tau_kl: 5.0,
            tau_attn: 0.9,
        }
    }
}

impl SelectionThresholds {
    pub fn validate(&self) -> Result<(), CurationError> {
        let cos_ok = |v: f64| (-1.0..=1.0).contains(&v);
        if !cos_ok(self.tau_scene) {
            return Err(CurationError::InvalidThreshold(format!("tau_scene={}", self.tau_scene)));
        }
        if !cos_ok(self.tau_attn) {
            return Err(CurationError::InvalidThreshold(format!("tau_attn={}", self.tau_attn)));
        }
        if self.tau_kl.is_nan() || self.tau_kl < 0.0 {
            return Err(CurationError::InvalidThreshold(format!("tau_kl={}", self.tau_kl)));
        }
        Ok(())
    }
}

/// Thresholds with optional per-source overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    #[serde(default)]
    pub default: SelectionThresholds,
    #[serde(default)]
    pub per_source: BTreeMap<Source, SelectionThresholds>,
}

impl SelectionConfig {
    pub fn for_source(&self, source: Option<Source>) -> SelectionThresholds {
        source
            .and_then(|s| self.per_source.get(&s).copied())
            .unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    First,
    Scene,
    Kl,
    Attn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySampleDecision {
    pub index: usize,
    pub frame_id: String,
    pub is_key: bool,
    pub s_scene: f64,
    pub d_kl: f64,
    pub s_attn: f64,
    /// Index of the key sample this frame was compared against.
    pub reference: usize,
    pub triggered_by: Vec<Trigger>,
}

/// Cosine similarity.
pub fn scene_similarity(a: &[f64], b: &[f64]) -> Result<f64, CurationError> {
    if a.len() != b.len() {
        return Err(CurationError::DimensionMismatch(a.len(), b.len()));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(CurationError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `Σ A_t log(A_t / (A_prev + ε))` over the two maps normalized to distributions.
pub fn attention_kl_divergence(a_t: &SaliencyMap, a_prev: &SaliencyMap) -> Result<f64, CurationError> {
    if a_t.shape() != a_prev.shape() {
        let ((h1, w1), (h2, w2)) = (a_t.shape(), a_prev.shape());
        return Err(CurationError::ShapeMismatch(h1, w1, h2, w2));
    }
    let p = a_t.normalize_to_distribution()?;
    let q = a_prev.normalize_to_distribution()?;
    Ok(p.values()
        .iter()
        .zip(q.values())
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (p / (q + KL_EPS)).ln())
        .sum())
}

struct FrameFeatures {
    scene: Vec<f64>,
    region: Vec<f64>,
}

fn features(
    provider: &dyn EmbeddingProvider,
    frame: &Frame,
    map: &SaliencyMap,
) -> Result<FrameFeatures, CurationError> {
    Ok(FrameFeatures {
        scene: provider.embed_image(frame)?,
        region: provider.embed_region(frame, map)?,
    })
}

/// Runs the selection recurrence. `load` supplies pixels for a frame reference
/// (return `None` for providers that work from ids alone).
pub fn select_key_samples_with(
    seq: &FrameSequence,
    th: &SelectionThresholds,
    provider: &dyn EmbeddingProvider,
    mut load: impl FnMut(&str) -> Result<Option<RgbImage>, CurationError>,
) -> Result<Vec<KeySampleDecision>, CurationError> {
    th.validate()?;
    // Embeddings do not depend on the recurrence, so compute them all up front.
    let mut feats = Vec::with_capacity(seq.len());
    for (i, (id, map)) in seq.frames().iter().enumerate() {
        let frame = Frame {
            id: id.clone(),
            image: load(id).map_err(|e| e.at(i))?,
        };
        feats.push(features(provider, &frame, map).map_err(|e| e.at(i))?);
    }

    let frames = seq.frames();
    let mut out = Vec::with_capacity(frames.len());
    out.push(KeySampleDecision {
        index: 0,
        frame_id: frames[0].0.clone(),
        is_key: true,
        s_scene: 1.0,
        d_kl: 0.0,
        s_attn: 1.0,
        reference: 0,
        triggered_by: vec![Trigger::First],
    });
    let mut key = 0;
    for t in 1..frames.len() {
        let s_scene = scene_similarity(&feats[t].scene, &feats[key].scene).map_err(|e| e.at(t))?;
        let d_kl = attention_kl_divergence(&frames[t].1, &frames[key].1).map_err(|e| e.at(t))?;
        let s_attn = scene_similarity(&feats[t].region, &feats[key].region).map_err(|e| e.at(t))?;
        let mut triggered_by = Vec::new();
        if s_scene < th.tau_scene {
            triggered_by.push(Trigger::Scene);
        }
        if d_kl > th.tau_kl {
            triggered_by.push(Trigger::Kl);
        }
        if s_attn < th.tau_attn {
            triggered_by.push(Trigger::Attn);
        }
        let is_key = !triggered_by.is_empty();
        out.push(KeySampleDecision {
            index: t,
            frame_id: frames[t].0.clone(),
            is_key,
            s_scene,
            d_kl,
            s_attn,
            reference: key,
            triggered_by,
        });
        if is_key {
            key = t;
        }
    }
    Ok(out)
}

/// Selection for providers that need no pixels (e.g. precomputed embeddings).
pub fn select_key_samples(
    seq: &FrameSequence,
    th: &SelectionThresholds,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<KeySampleDecision>, CurationError> {
    select_key_samples_with(seq, th, provider, |_| Ok(None))
}

/// Selection over in-memory frames: `images[i]` belongs to `seq.frames()[i]`.
pub fn select_key_samples_in_memory(
    seq: &FrameSequence,
    images: &[RgbImage],
    th: &SelectionThresholds,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<KeySampleDecision>, CurationError> {
    if images.len() != seq.len() {
        return Err(CurationError::DimensionMismatch(seq.len(), images.len()));
    }
    let mut it = images.iter();
    select_key_samples_with(seq, th, provider, |_| Ok(it.next().cloned()))
}

/// One line of `sequences.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub scene_id: String,
    #[serde(default)]
    pub source: Option<Source>,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub id: String,
    pub map_path: PathBuf,
    #[serde(default)]
    pub frame_path: Option<PathBuf>,
}

pub fn load_sequences(path: impl AsRef<Path>) -> Result<Vec<SequenceEntry>, CurationError> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| CurationError::Format(format!("line {}: {e}", n + 1)))?;
        out.push(entry);
    }
    Ok(out)
}

impl SequenceEntry {
    /// Loads the maps (paths relative to `root`) into a validated sequence.
    pub fn load(&self, root: &Path) -> Result<FrameSequence, CurationError> {
        let mut frames = Vec::with_capacity(self.frames.len());
        for (i, f) in self.frames.iter().enumerate() {
            let map = crate::data_model::load_saliency_map(root.join(&f.map_path))
                .map_err(|e| CurationError::from(e).at(i))?;
            frames.push((f.id.clone(), map));
        }
        Ok(FrameSequence::new(self.scene_id.clone(), frames)?)
    }
}
