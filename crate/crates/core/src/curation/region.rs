use std::collections::VecDeque;

use super::embedding::{EmbeddingProvider, Frame};
use super::CurationError;
use crate::data_model::{RgbImage, SaliencyMap};

/// Fraction of the map maximum at or above which a pixel counts as attended.
pub const REGION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegionStrategy {
    /// Crop the bounding box of the largest attended component.
    #[default]
    BoundingBox,
    /// Keep the full frame but paint unattended pixels black.
    MaskToBlack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.row && r < self.row + self.height && c >= self.col && c < self.col + self.width
    }

    /// Rescales map coordinates onto an image of a different size, rounding outward.
    pub fn scaled(&self, from: (usize, usize), to: (usize, usize)) -> Region {
        if from == to {
            return *self;
        }
        let lo = |v: usize, f: usize, t: usize| v * t / f;
        let hi = |v: usize, f: usize, t: usize| (v * t).div_ceil(f);
        let r0 = lo(self.row, from.0, to.0);
        let c0 = lo(self.col, from.1, to.1);
        let r1 = hi(self.row + self.height, from.0, to.0).max(r0 + 1);
        let c1 = hi(self.col + self.width, from.1, to.1).max(c0 + 1);
        Region {
            row: r0,
            col: c0,
            height: r1.min(to.0) - r0,
            width: c1.min(to.1) - c0,
        }
    }
}

fn binarize(map: &SaliencyMap, fraction: f64) -> Result<(Vec<bool>, f64), CurationError> {
    let max = map.max();
    if map.is_empty() || max <= 0.0 {
        return Err(CurationError::DegenerateMap);
    }
    let cut = fraction * max;
    Ok((map.values().iter().map(|&v| v >= cut).collect(), max))
}

/// Bounding box of the largest 4-connected component of `map >= fraction * max`.
/// On equal sizes the component holding the (first) argmax wins.
pub fn attended_region(map: &SaliencyMap, fraction: f64) -> Result<Region, CurationError> {
    let (h, w) = map.shape();
    let (mask, max) = binarize(map, fraction)?;
    let argmax = map.values().iter().position(|&v| v == max).unwrap_or(0);
    let mut label = vec![usize::MAX; h * w];
    let mut best: Option<(usize, bool, Region)> = None;
    let mut queue = VecDeque::new();
    let mut next = 0;
    for start in 0..h * w {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        let mut size = 0;
        let mut has_argmax = false;
        label[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            size += 1;
            has_argmax |= i == argmax;
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r);
            c1 = c1.max(c);
            let mut visit = |j: usize| {
                if mask[j] && label[j] == usize::MAX {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        next += 1;
        let region = Region {
            row: r0,
            col: c0,
            height: r1 - r0 + 1,
            width: c1 - c0 + 1,
        };
        let better = match &best {
            None => true,
            Some((bs, bh, _)) => size > *bs || (size == *bs && has_argmax && !bh),
        };
        if better {
            best = Some((size, has_argmax, region));
        }
    }
    // the argmax always passes the threshold, so at least one component exists
    Ok(best.map(|b| b.2).expect("non-empty mask"))
}

/// The image the provider sees for the attended region.
pub fn attended_region_image(
    image: &RgbImage,
    map: &SaliencyMap,
    strategy: RegionStrategy,
) -> Result<RgbImage, CurationError> {
    let img_shape = (image.height(), image.width());
    match strategy {
        RegionStrategy::BoundingBox => {
            let r = attended_region(map, REGION_THRESHOLD)?.scaled(map.shape(), img_shape);
            Ok(image.crop(r.row, r.col, r.height, r.width))
        }
        RegionStrategy::MaskToBlack => {
            let m = if map.shape() == img_shape {
                map.clone()
            } else {
                map.resize(img_shape.0, img_shape.1)
            };
            let (mask, _) = binarize(&m, REGION_THRESHOLD)?;
            let mut out = image.clone();
            for r in 0..img_shape.0 {
                for c in 0..img_shape.1 {
                    if !mask[r * img_shape.1 + c] {
                        out.set_pixel(r, c, [0, 0, 0]);
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Embeds the attended part of a frame with the provider's global encoder.
pub fn attended_region_embedding<P: EmbeddingProvider + ?Sized>(
    frame: &Frame,
    map: &SaliencyMap,
    provider: &P,
    strategy: RegionStrategy,
) -> Result<Vec<f64>, CurationError> {
    let region = attended_region_image(frame.require_image()?, map, strategy)?;
    provider.embed_image(&Frame::new(frame.id.clone(), region))
}
