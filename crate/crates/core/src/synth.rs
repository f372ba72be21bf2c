//! Synthetic driving-like scenes whose text labels and attention maps describe the
//! same object. Each noisy road scene holds a grey distractor, one vulnerable road
//! user and one vehicle. The scene location decides which of the two is attended:
//! the vulnerable road user in urban scenes, the vehicle elsewhere. The what-label
//! names the attended object and its grid position; the why-label gives a
//! kind-specific reason and an urgency that follows the vertical position. The
//! Gaussian attention blob sits on the attended object.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::build_base_vocab;
use crate::trainer::TrainSample;

use crate::data_model::{
    save_png_rgb, save_saliency_map, write_dataset, AnnotationRecord, DataError, FixationSet, Location, RgbImage,
    SaliencyMap, ScenarioCategory, SceneContext, Source, Split, TimePeriod, Verification, Weather,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObjectKind {
    pub name: &'static str,
    pub color: [u8; 3],
    /// (height, width) in pixels at a 32-pixel image.
    pub size: (usize, usize),
    pub reason: &'static str,
    pub vulnerable: bool,
}

pub const OBJECT_KINDS: [ObjectKind; 5] = [
    ObjectKind {
        name: "pedestrian",
        color: [220, 40, 40],
        size: (7, 3),
        reason: "may step onto the road",
        vulnerable: true,
    },
    ObjectKind {
        name: "car",
        color: [40, 70, 220],
        size: (4, 7),
        reason: "may brake or change lanes",
        vulnerable: false,
    },
    ObjectKind {
        name: "cyclist",
        color: [230, 210, 40],
        size: (6, 4),
        reason: "may swerve into the lane",
        vulnerable: true,
    },
    ObjectKind {
        name: "truck",
        color: [200, 50, 200],
        size: (6, 8),
        reason: "blocks the view ahead",
        vulnerable: false,
    },
    ObjectKind {
        name: "traffic light",
        color: [40, 200, 60],
        size: (5, 2),
        reason: "controls the right of way",
        vulnerable: false,
    },
];

const HORIZONTAL: [&str; 4] = ["far left", "left of center", "right of center", "far right"];
const VERTICAL: [&str; 4] = ["far ahead", "ahead", "close", "very close"];
const URGENCY: [&str; 4] = ["later", "soon", "now", "immediately"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub samples: usize,
    pub height: usize,
    pub width: usize,
    /// Objects are centred on a `cell × cell` grid.
    pub cell: usize,
    pub sigma: f64,
    pub seed: u64,
    pub fixations: usize,
    /// Fraction of samples assigned to the validation split (taken from the end).
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            height: 32,
            width: 32,
            cell: 8,
            sigma: 4.0,
            seed: 7,
            fixations: 6,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub record: AnnotationRecord,
    pub image: RgbImage,
    pub map: SaliencyMap,
    pub kind: ObjectKind,
    /// Grid cell `(row, col)` of the salient object.
    pub cell: (usize, usize),
}

fn bucket(idx: usize, n: usize) -> usize {
    (idx * 4) / n.max(1)
}

fn paint(img: &mut RgbImage, cy: usize, cx: usize, (h, w): (usize, usize), color: [u8; 3]) {
    let top = cy.saturating_sub(h / 2);
    let left = cx.saturating_sub(w / 2);
    for r in top..(top + h).min(img.height()) {
        for c in left..(left + w).min(img.width()) {
            img.set_pixel(r, c, color);
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Vec<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows = (cfg.height / cfg.cell).max(1);
    let cols = (cfg.width / cfg.cell).max(1);
    let scale = cfg.height as f64 / 32.0;
    let n_val = (cfg.samples as f64 * cfg.val_fraction).round() as usize;
    let noise = Normal::new(0.0, 6.0).expect("valid std");
    let fix_noise = Normal::new(0.0, cfg.sigma / 2.0).expect("valid std");
    let weathers = [Weather::Sunny, Weather::Rainy, Weather::Cloudy, Weather::Foggy];
    let times = [TimePeriod::Daytime, TimePeriod::Evening, TimePeriod::Night];
    let mut out = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let urban = rng.random_bool(0.5);
        let location = if urban {
            Location::Urban
        } else {
            *[Location::Rural, Location::Highway].choose(&mut rng).expect("non-empty")
        };
        let pick = |rng: &mut ChaCha8Rng, vulnerable: bool| {
            let pool: Vec<&ObjectKind> = OBJECT_KINDS.iter().filter(|k| k.vulnerable == vulnerable).collect();
            **pool.choose(rng).expect("non-empty pool")
        };
        let kind = pick(&mut rng, urban);
        let rival = pick(&mut rng, !urban);
        let mut taken: Vec<(usize, usize)> = Vec::with_capacity(3);
        while taken.len() < 3.min(rows * cols) {
            let d = (rng.random_range(0..rows), rng.random_range(0..cols));
            if !taken.contains(&d) {
                taken.push(d);
            }
        }
        let cell = taken[0];
        let mut image = RgbImage::from_fn(cfg.height, cfg.width, |_, _| {
            let v = (90.0_f64 + noise.sample(&mut rng)).clamp(0.0, 255.0) as u8;
            [v, v, v]
        });
        let center = |(r, c): (usize, usize)| (r * cfg.cell + cfg.cell / 2, c * cfg.cell + cfg.cell / 2);
        let sz = |(h, w): (usize, usize)| (((h as f64) * scale).round() as usize, ((w as f64) * scale).round() as usize);
        if let Some(&d) = taken.get(1) {
            let (dy, dx) = center(d);
            paint(&mut image, dy, dx, sz((4, 4)), [160, 160, 160]);
        }
        if let Some(&d) = taken.get(2) {
            let (dy, dx) = center(d);
            paint(&mut image, dy, dx, sz(rival.size), rival.color);
        }
        let (cy, cx) = center(cell);
        paint(&mut image, cy, cx, sz(kind.size), kind.color);

        let (fy, fx) = (cy as f64 - 0.5, cx as f64 - 0.5);
        let s2 = 2.0 * cfg.sigma * cfg.sigma;
        let map = SaliencyMap::from_fn(cfg.height, cfg.width, |r, c| {
            let d2 = (r as f64 - fy).powi(2) + (c as f64 - fx).powi(2);
            (-d2 / s2).exp()
        });
        let mut fixations: Vec<(usize, usize)> = Vec::with_capacity(cfg.fixations);
        for _ in 0..cfg.fixations {
            let r = (fy + fix_noise.sample(&mut rng)).round().clamp(0.0, cfg.height as f64 - 1.0) as usize;
            let c = (fx + fix_noise.sample(&mut rng)).round().clamp(0.0, cfg.width as f64 - 1.0) as usize;
            if !fixations.contains(&(r, c)) {
                fixations.push((r, c));
            }
        }

        let (vb, hb) = (bucket(cell.0, rows), bucket(cell.1, cols));
        let what = vec![format!("{} {} {}", kind.name, HORIZONTAL[hb], VERTICAL[vb])];
        let why = vec![format!("it {} {}", kind.reason, URGENCY[vb])];
        let category = match rng.random_range(0..10) {
            0..=5 => ScenarioCategory::Normal,
            6..=8 => ScenarioCategory::SafetyCritical,
            _ => ScenarioCategory::Accident,
        };
        let context = SceneContext::new(
            *weathers.choose(&mut rng).expect("non-empty"),
            *times.choose(&mut rng).expect("non-empty"),
            location,
            category,
        );
        let id = format!("syn{i:04}");
        let record = AnnotationRecord {
            frame_path: format!("frames/{id}.png").into(),
            map_path: format!("maps/{id}.png").into(),
            fixations: Some(FixationSet::new(fixations).expect("in-bounds fixations")),
            context,
            what,
            why,
            source: Source::Synthetic,
            split: if i >= cfg.samples - n_val { Split::Val } else { Split::Train },
            verification: Verification::Accepted,
            editor_note: None,
            version: 1,
            extra: Default::default(),
            id,
        };
        out.push(SynthSample {
            record,
            image,
            map,
            kind,
            cell,
        });
    }
    out
}

/// Writes frames, maps and `dataset.jsonl` under `dir`.
pub fn write_synthetic(dir: &Path, samples: &[SynthSample]) -> Result<Vec<AnnotationRecord>, DataError> {
    std::fs::create_dir_all(dir.join("frames"))?;
    std::fs::create_dir_all(dir.join("maps"))?;
    for s in samples {
        save_png_rgb(&s.image, dir.join(&s.record.frame_path))?;
        save_saliency_map(&s.map, dir.join(&s.record.map_path))?;
    }
    let records: Vec<AnnotationRecord> = samples.iter().map(|s| s.record.clone()).collect();
    write_dataset(dir.join("dataset.jsonl"), &records)?;
    Ok(records)
}

/// In-memory training samples, skipping the PNG round trip.
pub fn train_samples(samples: &[SynthSample]) -> Vec<TrainSample> {
    samples
        .iter()
        .map(|s| TrainSample {
            id: s.record.id.clone(),
            image: s.image.clone(),
            map: s.map.clone(),
            context: s.record.context.describe(),
            what: s.record.what.clone(),
            why: s.record.why.clone(),
        })
        .collect()
}

/// Base vocabulary covering every label and context phrase of the generator.
pub fn base_vocab(samples: &[SynthSample]) -> Vec<String> {
    let mut texts: Vec<String> = Vec::new();
    for s in samples {
        texts.push(s.record.context.describe());
        texts.extend(s.record.what.iter().cloned());
        texts.extend(s.record.why.iter().cloned());
    }
    build_base_vocab(texts.iter().map(String::as_str))
}
