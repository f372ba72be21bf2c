use std::io::Cursor;
use std::path::Path;

use super::saliency::{decode_saliency, encode_png};
use super::DataError;

/// Interleaved 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, DataError> {
        if data.len() != height * width * 3 {
            return Err(DataError::Format(format!(
                "rgb buffer of {} bytes does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend_from_slice(&f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> RgbImage {
        assert!(row + height <= self.height && col + width <= self.width, "crop out of bounds");
        RgbImage::from_fn(height, width, |r, c| self.pixel(row + r, col + c))
    }

    pub fn mean_intensity(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&b| b as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize(&self, height: usize, width: usize) -> RgbImage {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let (h0, w0) = (self.height, self.width);
        RgbImage::from_fn(height, width, |r, c| {
            let sy = ((r as f64 + 0.5) * h0 as f64 / height as f64 - 0.5).clamp(0.0, (h0 - 1) as f64);
            let sx = ((c as f64 + 0.5) * w0 as f64 / width as f64 - 0.5).clamp(0.0, (w0 - 1) as f64);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h0 - 1), (x0 + 1).min(w0 - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let mut out = [0u8; 3];
            for (ch, o) in out.iter_mut().enumerate() {
                let p = |y: usize, x: usize| self.pixel(y, x)[ch] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                *o = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
            }
            out
        })
    }

    pub fn to_png(&self) -> Result<Vec<u8>, DataError> {
        encode_png(&self.data, self.width, self.height, png::ColorType::Rgb)
    }
}

/// Loads a frame image: PNG (gray, gray+alpha, RGB, RGBA; 8 or 16 bit) or PPM/PGM.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage, DataError> {
    let bytes = std::fs::read(path.as_ref())?;
    decode_image(&bytes)
}

pub(crate) fn decode_image(bytes: &[u8]) -> Result<RgbImage, DataError> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png_rgb(bytes)
    } else if bytes.starts_with(b"P3") || bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        let gray = decode_saliency(bytes)?;
        Ok(RgbImage::from_fn(gray.height(), gray.width(), |r, c| {
            let v = (gray.get(r, c) * 255.0).round() as u8;
            [v, v, v]
        }))
    } else {
        Err(DataError::Format("expected PNG, PPM or PGM".into()))
    }
}

fn decode_png_rgb(bytes: &[u8]) -> Result<RgbImage, DataError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| DataError::Format(format!("png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| DataError::Format("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| DataError::Format(format!("png: {e}")))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(DataError::Format(format!("png: unsupported color {other:?}"))),
    };
    let stride = info.line_size;
    Ok(RgbImage::from_fn(h, w, |r, c| {
        let i = r * stride + c * channels;
        if channels < 3 {
            [buf[i]; 3]
        } else {
            [buf[i], buf[i + 1], buf[i + 2]]
        }
    }))
}

fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, DataError> {
    let binary = bytes[1] == b'6';
    let mut fields = Vec::new();
    let mut pos = 2;
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(DataError::Format("ppm: truncated header".into()));
        }
        if bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| DataError::Format("ppm: bad header".into()))?;
        fields.push(field);
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 255 {
        return Err(DataError::Format(format!("ppm: unsupported maxval {maxval}")));
    }
    let n = w * h * 3;
    // One whitespace byte separates the header from a binary raster.
    let data_start = (pos + 1).min(bytes.len());
    let raw: Vec<usize> = if binary {
        let data = bytes
            .get(data_start..data_start + n)
            .ok_or_else(|| DataError::Format("ppm: truncated raster".into()))?;
        data.iter().map(|&b| b as usize).collect()
    } else {
        let text = std::str::from_utf8(&bytes[pos..])
            .map_err(|_| DataError::Format("ppm: non-ascii raster".into()))?;
        let vals: Result<Vec<usize>, _> =
            text.split_ascii_whitespace().take(n).map(str::parse).collect();
        let vals = vals.map_err(|_| DataError::Format("ppm: bad pixel".into()))?;
        if vals.len() < n {
            return Err(DataError::Format("ppm: truncated raster".into()));
        }
        vals
    };
    let data = raw
        .iter()
        .map(|&v| ((v.min(maxval) * 255 + maxval / 2) / maxval) as u8)
        .collect();
    RgbImage::new(h, w, data)
}

pub fn save_png_rgb(image: &RgbImage, path: impl AsRef<Path>) -> Result<(), DataError> {
    std::fs::write(path, image.to_png()?)?;
    Ok(())
}
