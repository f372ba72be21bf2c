use super::AnnotationError;
use crate::data_model::{RgbImage, SaliencyMap};

pub const DEFAULT_DIM_FACTOR: f64 = 0.25;

/// Grayscale-mask visual prompt: every pixel is scaled by
/// `dim + (1 - dim) * m`, with `m` the map scaled to unit max.
pub fn render_grayscale_overlay(
    image: &RgbImage,
    map: &SaliencyMap,
    dim_factor: f64,
) -> Result<RgbImage, AnnotationError> {
    if !(0.0..1.0).contains(&dim_factor) {
        return Err(AnnotationError::Validation(format!(
            "dim_factor must be in [0, 1), got {dim_factor}"
        )));
    }
    if (image.height(), image.width()) != map.shape() {
        return Err(AnnotationError::ShapeMismatch(
            image.height(),
            image.width(),
            map.height(),
            map.width(),
        ));
    }
    let max = map.max();
    let mut out = image.clone();
    for r in 0..image.height() {
        for c in 0..image.width() {
            let m = if max > 0.0 { map.get(r, c) / max } else { 0.0 };
            let k = dim_factor + (1.0 - dim_factor) * m;
            let px = image.pixel(r, c);
            let scaled = px.map(|v| if k >= 1.0 { v } else { (v as f64 * k).round() as u8 });
            out.set_pixel(r, c, scaled);
        }
    }
    Ok(out)
}
