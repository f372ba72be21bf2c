use std::io::Cursor;
use std::path::Path;

use ndarray::Array2;

use super::DataError;

/// Continuous non-negative attention field over an H×W grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    values: Array2<f64>,
}

impl SaliencyMap {
    pub fn new(values: Array2<f64>) -> Result<Self, DataError> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(DataError::ValueRange(format!(
                "saliency values must be finite and >= 0, found {v}"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            values: Array2::zeros((height, width)),
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = Array2::from_shape_fn((height, width), |(r, c)| f(r, c).max(0.0));
        Self { values }
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[[row, col]]
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Scales the map so that its values sum to one.
    pub fn normalize_to_distribution(&self) -> Result<SaliencyMap, DataError> {
        let total = self.sum();
        if self.is_empty() || total <= 0.0 {
            return Err(DataError::DegenerateMap);
        }
        Ok(Self {
            values: self.values.mapv(|v| v / total),
        })
    }

    /// Scales the map so that its maximum is exactly one.
    pub fn normalize_to_unit_max(&self) -> Result<SaliencyMap, DataError> {
        let max = self.max();
        if self.is_empty() || max <= 0.0 {
            return Err(DataError::DegenerateMap);
        }
        // Dividing the max by itself is exact in IEEE arithmetic.
        Ok(Self {
            values: self.values.mapv(|v| v / max),
        })
    }

    pub fn scaled(&self, factor: f64) -> SaliencyMap {
        Self {
            values: self.values.mapv(|v| (v * factor).max(0.0)),
        }
    }

    /// Bilinear resampling with half-pixel centers (edge-clamped).
    pub fn resize(&self, height: usize, width: usize) -> SaliencyMap {
        if self.shape() == (height, width) {
            return self.clone();
        }
        let (h0, w0) = self.shape();
        let values = Array2::from_shape_fn((height, width), |(r, c)| {
            let sy = ((r as f64 + 0.5) * h0 as f64 / height as f64 - 0.5).clamp(0.0, (h0 - 1) as f64);
            let sx = ((c as f64 + 0.5) * w0 as f64 / width as f64 - 0.5).clamp(0.0, (w0 - 1) as f64);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h0 - 1), (x0 + 1).min(w0 - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let top = self.values[[y0, x0]] * (1.0 - fx) + self.values[[y0, x1]] * fx;
            let bottom = self.values[[y1, x0]] * (1.0 - fx) + self.values[[y1, x1]] * fx;
            top * (1.0 - fy) + bottom * fy
        });
        Self { values }
    }
}

/// Loads an 8-bit single-channel PNG or a P2/P5 PGM, scaled to [0, 1] by the format's max value.
pub fn load_saliency_map(path: impl AsRef<Path>) -> Result<SaliencyMap, DataError> {
    let bytes = std::fs::read(path.as_ref())?;
    decode_saliency(&bytes)
}

pub(crate) fn decode_saliency(bytes: &[u8]) -> Result<SaliencyMap, DataError> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png_gray(bytes)
    } else if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else {
        Err(DataError::Format("expected PNG or PGM (P2/P5)".into()))
    }
}

fn decode_png_gray(bytes: &[u8]) -> Result<SaliencyMap, DataError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| DataError::Format(format!("png: {e}")))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale {
        return Err(DataError::Format(format!(
            "saliency PNG must be single-channel, got {color:?}"
        )));
    }
    if depth != png::BitDepth::Eight {
        return Err(DataError::Format(format!(
            "saliency PNG must be 8-bit, got {depth:?}"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| DataError::Format("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| DataError::Format(format!("png: {e}")))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let stride = info.line_size;
    let values = Array2::from_shape_fn((h, w), |(r, c)| buf[r * stride + c] as f64 / 255.0);
    SaliencyMap::new(values)
}

fn pgm_tokens(bytes: &[u8], count: usize) -> Result<(Vec<u64>, usize), DataError> {
    let mut out = Vec::with_capacity(count);
    let mut i = 2;
    while out.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(DataError::Format("pgm: truncated header".into()));
        }
        let text = std::str::from_utf8(&bytes[start..i]).expect("ascii digits");
        out.push(
            text.parse()
                .map_err(|_| DataError::Format("pgm: bad integer".into()))?,
        );
    }
    Ok((out, i))
}

fn decode_pgm(bytes: &[u8]) -> Result<SaliencyMap, DataError> {
    let binary = bytes[1] == b'5';
    let (header, end) = pgm_tokens(bytes, 3)?;
    let (w, h, maxval) = (header[0] as usize, header[1] as usize, header[2]);
    if maxval == 0 || maxval > 65535 {
        return Err(DataError::Format(format!("pgm: unsupported maxval {maxval}")));
    }
    let n = w * h;
    let raw: Vec<u64> = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        let data = &bytes[(end + 1).min(bytes.len())..];
        if maxval < 256 {
            if data.len() < n {
                return Err(DataError::Format("pgm: truncated raster".into()));
            }
            data[..n].iter().map(|&b| b as u64).collect()
        } else {
            if data.len() < 2 * n {
                return Err(DataError::Format("pgm: truncated raster".into()));
            }
            data.chunks_exact(2)
                .take(n)
                .map(|p| u16::from_be_bytes([p[0], p[1]]) as u64)
                .collect()
        }
    } else {
        let text = std::str::from_utf8(&bytes[end..])
            .map_err(|_| DataError::Format("pgm: non-ascii raster".into()))?;
        let vals: Result<Vec<u64>, _> = text
            .split_ascii_whitespace()
            .take(n)
            .map(|t| t.parse::<u64>())
            .collect();
        let vals = vals.map_err(|_| DataError::Format("pgm: bad pixel".into()))?;
        if vals.len() < n {
            return Err(DataError::Format("pgm: truncated raster".into()));
        }
        vals
    };
    if let Some(v) = raw.iter().find(|&&v| v > maxval) {
        return Err(DataError::Format(format!("pgm: pixel {v} exceeds maxval {maxval}")));
    }
    let values = Array2::from_shape_fn((h, w), |(r, c)| raw[r * w + c] as f64 / maxval as f64);
    SaliencyMap::new(values)
}

/// Writes the map as an 8-bit grayscale PNG. Values must lie in [0, 1].
pub fn save_saliency_map(map: &SaliencyMap, path: impl AsRef<Path>) -> Result<(), DataError> {
    let bytes = encode_saliency_png(map)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub(crate) fn encode_saliency_png(map: &SaliencyMap) -> Result<Vec<u8>, DataError> {
    if map.values.iter().any(|&v| v > 1.0) {
        return Err(DataError::ValueRange(
            "saliency values above 1; normalize_to_unit_max before saving".into(),
        ));
    }
    let pixels: Vec<u8> = map
        .values
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    encode_png(&pixels, map.width(), map.height(), png::ColorType::Grayscale)
}

pub(crate) fn encode_png(
    pixels: &[u8],
    width: usize,
    height: usize,
    color: png::ColorType,
) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| DataError::Format(format!("png: {e}")))?;
        writer
            .write_image_data(pixels)
            .map_err(|e| DataError::Format(format!("png: {e}")))?;
        writer
            .finish()
            .map_err(|e| DataError::Format(format!("png: {e}")))?;
    }
    Ok(out)
}
