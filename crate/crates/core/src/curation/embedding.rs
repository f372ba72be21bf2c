//! Embedding providers: a precomputed sidecar file and a pixel thumbnail fallback.
//!
//! Sidecar layout (all integers and floats little-endian):
//!
//! ```text
//! magic   b"EMBD"
//! dim     u32
//! count   u32
//! count × { id_len u16, id utf-8 bytes, dim × f32 }
//! ```
//!
//! Region embeddings are stored under the key `"{frame_id}#region"`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::region::{attended_region_embedding, RegionStrategy};
use super::CurationError;
use crate::data_model::{RgbImage, SaliencyMap};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMBD";

/// A frame handed to an embedding provider. Providers backed by precomputed
/// vectors only need the id.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: String,
    pub image: Option<RgbImage>,
}

impl Frame {
    pub fn new(id: impl Into<String>, image: RgbImage) -> Self {
        Self {
            id: id.into(),
            image: Some(image),
        }
    }

    pub fn id_only(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            image: None,
        }
    }

    pub fn require_image(&self) -> Result<&RgbImage, CurationError> {
        self.image
            .as_ref()
            .ok_or_else(|| CurationError::MissingImage(self.id.clone()))
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// Unit-length global embedding of the frame.
    fn embed_image(&self, frame: &Frame) -> Result<Vec<f64>, CurationError>;
    /// Unit-length embedding of the attended region of the frame.
    fn embed_region(&self, frame: &Frame, map: &SaliencyMap) -> Result<Vec<f64>, CurationError> {
        attended_region_embedding(frame, map, self, RegionStrategy::default())
    }
}

pub(crate) fn unit(mut v: Vec<f64>) -> Result<Vec<f64>, CurationError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(CurationError::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Vectors looked up by frame id from a sidecar file.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEmbeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl PrecomputedEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f32>) -> Result<(), CurationError> {
        if v.len() != self.dim {
            return Err(CurationError::DimensionMismatch(self.dim, v.len()));
        }
        self.vectors.insert(id.into(), v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, CurationError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != EMBEDDING_MAGIC {
            return Err(CurationError::Format("bad magic, expected EMBD".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let count = u32::from_le_bytes(u32buf) as usize;
        if dim == 0 {
            return Err(CurationError::Format("dim must be positive".into()));
        }
        let mut out = Self::new(dim);
        let mut fbuf = vec![0u8; dim * 4];
        for _ in 0..count {
            let mut lbuf = [0u8; 2];
            r.read_exact(&mut lbuf)?;
            let mut idb = vec![0u8; u16::from_le_bytes(lbuf) as usize];
            r.read_exact(&mut idb)?;
            let id = String::from_utf8(idb).map_err(|_| CurationError::Format("id is not utf-8".into()))?;
            r.read_exact(&mut fbuf)?;
            let v = fbuf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            out.vectors.insert(id, v);
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), CurationError> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.vectors.len() as u32).to_le_bytes())?;
        let mut ids: Vec<&String> = self.vectors.keys().collect();
        ids.sort();
        for id in ids {
            let len = u16::try_from(id.len()).map_err(|_| CurationError::Format(format!("id too long: {id}")))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for x in &self.vectors[id] {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CurationError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CurationError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn lookup(&self, key: &str) -> Result<Vec<f64>, CurationError> {
        let v = self
            .vectors
            .get(key)
            .ok_or_else(|| CurationError::MissingEmbedding(key.to_string()))?;
        unit(v.iter().map(|&x| x as f64).collect())
    }
}

impl EmbeddingProvider for PrecomputedEmbeddings {
    fn name(&self) -> &str {
        "precomputed"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, frame: &Frame) -> Result<Vec<f64>, CurationError> {
        self.lookup(&frame.id)
    }

    fn embed_region(&self, frame: &Frame, _map: &SaliencyMap) -> Result<Vec<f64>, CurationError> {
        self.lookup(&format!("{}#region", frame.id))
    }
}

/// Downsampled RGB thumbnail, mean-centred per channel so that cosine similarity
/// reacts to layout and colour rather than overall brightness.
#[derive(Debug, Clone, Copy)]
pub struct ThumbnailEmbedder {
    pub side: usize,
}

impl Default for ThumbnailEmbedder {
    fn default() -> Self {
        Self { side: 4 }
    }
}

impl EmbeddingProvider for ThumbnailEmbedder {
    fn name(&self) -> &str {
        "thumbnail"
    }

    fn dim(&self) -> usize {
        self.side * self.side * 3 + 1
    }

    fn embed_image(&self, frame: &Frame) -> Result<Vec<f64>, CurationError> {
        let img = frame.require_image()?;
        let thumb = img.resize(self.side, self.side);
        let mut v: Vec<f64> = thumb.data().iter().map(|&b| b as f64 / 255.0).collect();
        for ch in 0..3 {
            let mean = v.iter().skip(ch).step_by(3).sum::<f64>() / (self.side * self.side) as f64;
            v.iter_mut().skip(ch).step_by(3).for_each(|x| *x -= mean);
        }
        // constant component keeps flat images embeddable
        v.push(0.1);
        unit(v)
    }
}
