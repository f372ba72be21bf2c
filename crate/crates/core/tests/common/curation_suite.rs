use std::collections::HashMap;

use llada_core::curation::{
    attention_kl_divergence, select_key_samples, select_key_samples_in_memory, CurationError, EmbeddingProvider, Frame,
    KeySampleDecision, SelectionThresholds, ThumbnailEmbedder, Trigger,
};
use llada_core::data_model::{FrameSequence, RgbImage, SaliencyMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scene and region vectors looked up by frame id.
#[derive(Default)]
pub struct Stub {
    scene: HashMap<String, Vec<f64>>,
    region: HashMap<String, Vec<f64>>,
}

impl Stub {
    fn add(&mut self, id: &str, scene: Vec<f64>, region: Vec<f64>) {
        self.scene.insert(id.into(), scene);
        self.region.insert(id.into(), region);
    }
}

impl EmbeddingProvider for Stub {
    fn name(&self) -> &str {
        "stub"
    }
    fn dim(&self) -> usize {
        self.scene.values().next().map_or(0, |v| v.len())
    }
    fn embed_image(&self, frame: &Frame) -> Result<Vec<f64>, CurationError> {
        Ok(self.scene[&frame.id].clone())
    }
    fn embed_region(&self, frame: &Frame, _map: &SaliencyMap) -> Result<Vec<f64>, CurationError> {
        Ok(self.region[&frame.id].clone())
    }
}

fn angle(deg: f64) -> Vec<f64> {
    let r = deg.to_radians();
    vec![r.cos(), r.sin()]
}

fn map4(v: [f64; 4]) -> SaliencyMap {
    SaliencyMap::from_fn(2, 2, |r, c| v[r * 2 + c])
}

fn keys(d: &[KeySampleDecision]) -> Vec<usize> {
    d.iter().filter(|x| x.is_key).map(|x| x.index).collect()
}

struct Fixture {
    name: &'static str,
    stub: Stub,
    maps: Vec<SaliencyMap>,
    thresholds: SelectionThresholds,
    expected_keys: Vec<usize>,
    expected_triggers: Vec<(usize, Vec<Trigger>)>,
}

fn run(f: &Fixture) -> Vec<KeySampleDecision> {
    let frames = f
        .maps
        .iter()
        .enumerate()
        .map(|(i, m)| (format!("f{i}"), m.clone()))
        .collect();
    let seq = FrameSequence::new(f.name, frames).unwrap();
    let d = select_key_samples(&seq, &f.thresholds, &f.stub).unwrap();
    assert_eq!(keys(&d), f.expected_keys, "fixture {}", f.name);
    for (i, t) in &f.expected_triggers {
        assert_eq!(&d[*i].triggered_by, t, "fixture {} frame {i}", f.name);
    }
    assert_eq!(d[0].triggered_by, vec![Trigger::First]);
    d
}

fn flat() -> SaliencyMap {
    map4([1.0; 4])
}

/// Scene angles 0,15,30,45,60 degrees. The 15-degree steps never trigger against the
/// previous frame, but the 30-degree gap to the last key does.
fn scene_drift() -> Fixture {
    let mut stub = Stub::default();
    for (i, deg) in [0.0, 15.0, 30.0, 45.0, 60.0].iter().enumerate() {
        stub.add(&format!("f{i}"), angle(*deg), angle(0.0));
    }
    Fixture {
        name: "scene-drift",
        stub,
        maps: vec![flat(); 5],
        thresholds: SelectionThresholds::default(),
        expected_keys: vec![0, 2, 4],
        expected_triggers: vec![(1, vec![]), (2, vec![Trigger::Scene]), (4, vec![Trigger::Scene])],
    }
}

/// One-hot attention against a reference holding e^-5.1 (KL ≈ 5.1) and e^-4.9 (KL ≈ 4.9)
/// of its mass on the same pixel.
fn kl_margin() -> Fixture {
    let (a, b) = ((-5.1f64).exp(), (-4.9f64).exp());
    let mut stub = Stub::default();
    for i in 0..5 {
        stub.add(&format!("f{i}"), angle(0.0), angle(0.0));
    }
    Fixture {
        name: "kl-margin",
        stub,
        maps: vec![
            map4([a, 1.0 - a, 0.0, 0.0]),
            map4([1.0, 0.0, 0.0, 0.0]),
            map4([b, 1.0 - b, 0.0, 0.0]),
            map4([1.0, 0.0, 0.0, 0.0]),
            map4([7.0, 0.0, 0.0, 0.0]),
        ],
        thresholds: SelectionThresholds::default(),
        expected_keys: vec![0, 1, 2],
        expected_triggers: vec![(1, vec![Trigger::Kl]), (2, vec![Trigger::Kl]), (3, vec![]), (4, vec![])],
    }
}

/// Region angles 0,20,26,40,60: cos 26° ≈ 0.8988 falls under 0.9.
fn region_shift() -> Fixture {
    let mut stub = Stub::default();
    for (i, deg) in [0.0, 20.0, 26.0, 40.0, 60.0].iter().enumerate() {
        stub.add(&format!("f{i}"), angle(0.0), angle(*deg));
    }
    Fixture {
        name: "region-shift",
        stub,
        maps: vec![flat(); 5],
        thresholds: SelectionThresholds::default(),
        expected_keys: vec![0, 2, 4],
        expected_triggers: vec![(2, vec![Trigger::Attn]), (3, vec![]), (4, vec![Trigger::Attn])],
    }
}

/// Similarities of exactly 0.9 (9/10 with integer vectors) do not trigger; a frame
/// changing scene, map and region triggers all three.
fn ties_and_all() -> Fixture {
    let mut stub = Stub::default();
    stub.add("f0", vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]);
    stub.add("f1", vec![9.0, 3.0, 3.0, 1.0], vec![9.0, 3.0, 3.0, 1.0]);
    stub.add("f2", vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]);
    stub.add("f3", vec![3.0, 9.0, 1.0, 3.0], vec![3.0, 9.0, 3.0, 1.0]);
    Fixture {
        name: "ties",
        stub,
        maps: vec![
            map4([1.0, 0.0, 0.0, 0.0]),
            map4([1.0, 0.0, 0.0, 0.0]),
            map4([0.0, 0.0, 0.0, 1.0]),
            map4([0.0, 0.0, 0.0, 2.0]),
        ],
        thresholds: SelectionThresholds::default(),
        expected_keys: vec![0, 2],
        expected_triggers: vec![
            (1, vec![]),
            (2, vec![Trigger::Scene, Trigger::Kl, Trigger::Attn]),
            (3, vec![]),
        ],
    }
}

fn walk_stub(n: usize) -> Stub {
    let mut stub = Stub::default();
    for i in 0..n {
        stub.add(&format!("f{i}"), angle(i as f64 * 40.0), angle(i as f64 * 40.0));
    }
    stub
}

/// Degenerate thresholds: nothing triggers, or every change triggers.
fn extremes() -> Vec<Fixture> {
    let maps: Vec<SaliencyMap> = (0..5).map(|i| map4([1.0, (i + 1) as f64, 0.5, 2.0])).collect();
    vec![
        Fixture {
            name: "never",
            stub: walk_stub(5),
            maps: maps.clone(),
            thresholds: SelectionThresholds {
                tau_scene: -1.0,
                tau_kl: f64::INFINITY,
                tau_attn: -1.0,
            },
            expected_keys: vec![0],
            expected_triggers: vec![],
        },
        Fixture {
            name: "always",
            stub: walk_stub(5),
            maps,
            thresholds: SelectionThresholds {
                tau_scene: -1.0,
                tau_kl: 0.0,
                tau_attn: -1.0,
            },
            expected_keys: vec![0, 1, 2, 3, 4],
            expected_triggers: vec![(3, vec![Trigger::Kl])],
        },
    ]
}

pub fn hand_fixtures() -> usize {
    let mut all = vec![scene_drift(), kl_margin(), region_shift(), ties_and_all()];
    all.extend(extremes());
    for f in &all {
        let d = run(f);
        if f.name == "kl-margin" {
            // literal KL of a one-hot against mass m on the same pixel
            let lit = |m: f64| (1.0 / (m + 1e-12)).ln();
            assert!((d[1].d_kl - lit((-5.1f64).exp())).abs() < 1e-9, "{}", d[1].d_kl);
            assert!((d[3].d_kl - lit((-4.9f64).exp())).abs() < 1e-9, "{}", d[3].d_kl);
        }
        if f.name == "ties" {
            assert_eq!(d[1].s_scene, 0.9);
            assert_eq!(d[3].s_attn, 0.9);
        }
    }
    all.len()
}

/// A random scene: a drifting image with occasional cuts and a moving Gaussian blob.
pub fn random_sequence(rng: &mut ChaCha8Rng, len: usize) -> (FrameSequence, Vec<RgbImage>) {
    let (h, w) = (12, 12);
    let mut base = [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()];
    let (mut cy, mut cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
    let mut frames = Vec::new();
    let mut images = Vec::new();
    for i in 0..len {
        if rng.random_bool(0.15) {
            base = [rng.random(), rng.random(), rng.random()];
        }
        let mut img = RgbImage::from_fn(h, w, |r, c| {
            let k = ((r * 7 + c * 3) % 32) as u8;
            [base[0].wrapping_add(k), base[1].wrapping_add(2 * k), base[2]]
        });
        for _ in 0..2 {
            let (r, c) = (rng.random_range(0..h), rng.random_range(0..w));
            img.set_pixel(r, c, [rng.random(), rng.random(), rng.random()]);
        }
        cy = (cy + rng.random_range(-1.0..1.0)).clamp(0.0, (h - 1) as f64);
        cx = (cx + rng.random_range(-1.0..1.0)).clamp(0.0, (w - 1) as f64);
        let sigma = rng.random_range(1.5..3.0);
        let map = SaliencyMap::from_fn(h, w, |r, c| {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        });
        frames.push((format!("s{i}"), map));
        images.push(img);
    }
    (FrameSequence::new("random", frames).unwrap(), images)
}

fn thresholds_for(rng: &mut ChaCha8Rng) -> SelectionThresholds {
    SelectionThresholds {
        tau_scene: rng.random_range(0.3..0.95),
        tau_kl: rng.random_range(0.2..5.0),
        tau_attn: rng.random_range(0.3..0.95),
    }
}

/// Decisions on a prefix equal the prefix of the decisions, and scaling every map by
/// a positive constant changes nothing.
pub fn properties(sequences: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let provider = ThumbnailEmbedder::default();
    let (mut total_keys, mut total_frames) = (0, 0);
    for _ in 0..sequences {
        let len = rng.random_range(2..12);
        let (seq, images) = random_sequence(&mut rng, len);
        let th = thresholds_for(&mut rng);
        let full = select_key_samples_in_memory(&seq, &images, &th, &provider).unwrap();
        total_keys += keys(&full).len();
        total_frames += len;
        let k = rng.random_range(1..=len);
        let prefix = select_key_samples_in_memory(&seq.truncated(k), &images[..k], &th, &provider).unwrap();
        assert_eq!(prefix, full[..k].to_vec(), "prefix {k} of {len}");

        let a = rng.random_range(0.01..100.0);
        let scaled: Vec<(String, SaliencyMap)> = seq.frames().iter().map(|(id, m)| (id.clone(), m.scaled(a))).collect();
        let scaled = FrameSequence::new("scaled", scaled).unwrap();
        let s = select_key_samples_in_memory(&scaled, &images, &th, &provider).unwrap();
        for (x, y) in full.iter().zip(&s) {
            assert_eq!((x.is_key, &x.triggered_by, x.reference), (y.is_key, &y.triggered_by, y.reference));
            assert!((x.d_kl - y.d_kl).abs() < 1e-9 && (x.s_attn - y.s_attn).abs() < 1e-12);
            assert_eq!(x.s_scene, y.s_scene);
        }
        for (i, d) in full.iter().enumerate().skip(1) {
            let (_, m) = &seq.frames()[i];
            let (_, r) = &seq.frames()[d.reference];
            assert!(d.reference < i && full[d.reference].is_key);
            assert_eq!(d.d_kl, attention_kl_divergence(m, r).unwrap());
        }
    }
    (total_keys, total_frames)
}

pub fn curation_suite() -> String {
    let n = hand_fixtures();
    let (k, f) = properties(100, 31);
    format!("{n} hand-traced fixtures exact; 100 random sequences ({k} keys / {f} frames) prefix-stable and scale-invariant")
}
