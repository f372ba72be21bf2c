use llada_core::data_model::{FixationSet, SaliencyMap};
use llada_core::metrics::{
    auc_borji, auc_judd, bleu, cc_metric, cider, kldiv_metric, meteor_simplified, nss_metric,
    rouge_l, sim_metric, tokenize, NegativeSampling,
};
use llada_core::metrics::text::modified_precision;
use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::{self, Grid};

pub fn grid_of(m: &SaliencyMap) -> Grid {
    m.values().rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> SaliencyMap {
    SaliencyMap::from_fn(h, w, |_, _| rng.random::<f64>())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// kldiv / cc / sim / nss against double-loop references on random 8×8 instances.
pub fn dense_oracles(instances: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let p = random_map(&mut rng, 8, 8);
        let mut g = random_map(&mut rng, 8, 8);
        if i % 5 == 0 {
            // sparse ground truth exercises the zero-bin branch
            g = SaliencyMap::from_fn(8, 8, |r, c| if (r + c) % 3 == 0 { g.get(r, c) } else { 0.0 });
        }
        let k: usize = rng.random_range(1..=10);
        let mut pts: Vec<(usize, usize)> = Vec::new();
        while pts.len() < k {
            let q = (rng.random_range(0..8), rng.random_range(0..8));
            if !pts.contains(&q) {
                pts.push(q);
            }
        }
        let fx = FixationSet::new(pts.clone()).unwrap();
        let (pg, gg) = (grid_of(&p), grid_of(&g));
        let pairs = [
            (kldiv_metric(&p, &g).unwrap(), oracles::kldiv(&pg, &gg), "kldiv"),
            (cc_metric(&p, &g).unwrap(), oracles::cc(&pg, &gg), "cc"),
            (sim_metric(&p, &g).unwrap(), oracles::sim(&pg, &gg), "sim"),
            (nss_metric(&p, &fx).unwrap(), oracles::nss(&pg, &pts), "nss"),
        ];
        for (got, want, name) in pairs {
            assert!(close(got, want, 1e-9), "{name} instance {i}: {got} vs {want}");
            worst = worst.max((got - want).abs());
        }
    }
    format!("{instances} instances, max |Δ| {worst:.1e}")
}

fn subsets(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if cur.len() == k {
        f(cur);
        return;
    }
    for i in start..n {
        if n - i < k - cur.len() {
            break;
        }
        cur.push(i);
        subsets(n, k, i + 1, cur, f);
        cur.pop();
    }
}

/// AUC-Judd against the exhaustive oracle on every grid up to 5×5 and every fixation
/// subset of size ≤ 6, under a tie-heavy and a continuous map per grid.
pub fn judd_exhaustive(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0usize;
    for h in 1..=5 {
        for w in 1..=5 {
            let n = h * w;
            if n < 2 {
                continue;
            }
            let maps = [
                SaliencyMap::from_fn(h, w, |_, _| rng.random_range(0..3) as f64),
                random_map(&mut rng, h, w),
            ];
            for map in &maps {
                let g = grid_of(map);
                for k in 1..=6.min(n - 1) {
                    subsets(n, k, 0, &mut Vec::new(), &mut |idx| {
                        let pts: Vec<(usize, usize)> = idx.iter().map(|&i| (i / w, i % w)).collect();
                        let got = auc_judd(map, &FixationSet::new(pts.clone()).unwrap()).unwrap();
                        let want = oracles::auc_judd(&g, &pts);
                        assert!(close(got, want, 1e-12), "{h}x{w} {pts:?}: {got} vs {want}");
                        checked += 1;
                    });
                }
            }
        }
    }
    format!("{checked} instances")
}

/// AUC-Borji against a reimplementation consuming the same random stream.
pub fn borji_stream(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let map = random_map(&mut rng, 8, 8);
    let pts: Vec<(usize, usize)> = vec![(1, 2), (3, 3), (6, 0), (7, 7), (4, 5)];
    let fx = FixationSet::new(pts.clone()).unwrap();
    let flat: Vec<f64> = map.values().iter().copied().collect();
    let pos: Vec<f64> = pts.iter().map(|&(r, c)| map.get(r, c)).collect();
    let mut estimates = Vec::new();
    for s in 0..20u64 {
        let got = auc_borji(&map, &fx, 100, s, NegativeSampling::AllPixels).unwrap();
        let mut stream = ChaCha8Rng::seed_from_u64(s);
        let mut total = 0.0;
        for _ in 0..100 {
            let neg: Vec<f64> = (0..pos.len()).map(|_| flat[stream.random_range(0..flat.len())]).collect();
            total += oracles::pairwise_auc(&pos, &neg);
        }
        let want = total / 100.0;
        assert!(close(got, want, 1e-12), "seed {s}: {got} vs {want}");
        estimates.push(got);
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let std = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / estimates.len() as f64).sqrt();
    assert!(std < 0.05, "AUC-B estimate std across seeds {std}");
    format!("20 seeds, std {std:.4}")
}

pub fn saliency_suite() -> String {
    let t = std::time::Instant::now();
    let a = dense_oracles(500, 11);
    let b = judd_exhaustive(12);
    let c = borji_stream(13);
    let secs = t.elapsed().as_secs_f64();
    assert!(secs < 60.0, "metric oracle suite took {secs:.1}s");
    format!("dense: {a}; AUC-J exhaustive: {b}; AUC-B stream: {c}; {secs:.1}s")
}

const WORDS: [&str; 7] = ["the", "car", "stops", "a", "red", "light", "ahead"];

fn sentence(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
    let len = rng.random_range(1..=max_len);
    (0..len).map(|_| WORDS.choose(rng).unwrap().to_string()).collect()
}

/// BLEU / ROUGE-L / METEOR / CIDEr against literal-definition oracles on fuzzed corpora.
pub fn text_fuzz(corpora: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut pairs = 0usize;
    for k in 0..corpora {
        let size = rng.random_range(2..=5);
        let cands: Vec<Vec<String>> = (0..size).map(|_| sentence(&mut rng, 8)).collect();
        let refs: Vec<Vec<Vec<String>>> = (0..size)
            .map(|_| (0..rng.random_range(1..=3)).map(|_| sentence(&mut rng, 8)).collect())
            .collect();
        for (c, rs) in cands.iter().zip(&refs) {
            let checks = [
                (bleu(c, rs, 4).unwrap(), oracles::bleu(c, rs, 4), "bleu"),
                (rouge_l(c, &rs[0]), oracles::rouge_l(c, &rs[0]), "rouge_l"),
                (meteor_simplified(c, &rs[0]), oracles::meteor(c, &rs[0]), "meteor"),
            ];
            for (got, want, name) in checks {
                assert!(close(got, want, 1e-9), "corpus {k} {name}: {c:?} vs {rs:?}: {got} vs {want}");
                worst = worst.max((got - want).abs());
            }
            pairs += 1;
        }
        let got = cider(&cands, &refs).unwrap();
        let want = oracles::cider(&cands, &refs);
        for (g, w) in got.per_sample.iter().zip(&want) {
            assert!(close(*g, *w, 1e-9), "corpus {k} cider: {g} vs {w}");
            worst = worst.max((g - w).abs());
        }
    }
    format!("{corpora} corpora, {pairs} pairs, max |Δ| {worst:.1e}")
}

/// Hand-computed fixtures: clipping 1/4, LCS F = 0.75 and friends.
pub fn text_fixtures() -> String {
    let t = |s: &str| tokenize(s);
    assert_eq!(modified_precision(&t("the the the the"), &[t("the cat sat down")], 1), (1, 4));
    let f = rouge_l(&t("a b c d"), &t("a c b d"));
    assert!(close(f, 0.75, 1e-12), "rouge {f}");
    let m = meteor_simplified(&t("the cat sat"), &t("the sat cat"));
    assert!(close(m, 0.5, 1e-12), "meteor {m}");
    let same = t("the cat sat on the mat");
    assert_eq!(bleu(&same, std::slice::from_ref(&same), 4).unwrap(), 1.0);
    assert_eq!(rouge_l(&same, &t("dog runs")), 0.0);
    let corpus = vec![t("red car stops"), t("a cyclist turns left"), t("light is green")];
    let refs: Vec<Vec<Vec<String>>> = corpus.iter().map(|c| vec![c.clone()]).collect();
    let s = cider(&corpus, &refs).unwrap();
    // identical to its own reference; a 3-token sentence has no 4-grams
    for (v, want) in s.per_sample.iter().zip([7.5, 10.0, 7.5]) {
        assert!(close(*v, want, 1e-12), "{:?}", s.per_sample);
    }
    let none = cider(&[t("zz yy"), t("xx")], &[vec![t("red car")], vec![t("car stops")]]).unwrap();
    assert_eq!(none.per_sample, vec![0.0, 0.0]);
    "clipping 1/4, LCS F 0.75, METEOR 0.5, identities".into()
}

pub fn text_suite() -> String {
    format!("{}; {}", text_fuzz(200, 21), text_fixtures())
}

/// Scale invariance of the saliency metrics for a ∈ {0.5, 3}.
pub fn scale_invariance(instances: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..instances {
        let p = random_map(&mut rng, 6, 7);
        let g = random_map(&mut rng, 6, 7);
        let fx = FixationSet::new(vec![(0, 0), (2, 3), (5, 6)]).unwrap();
        for a in [0.5, 3.0] {
            let q = SaliencyMap::new(Array2::from_shape_fn((6, 7), |(r, c)| a * p.get(r, c))).unwrap();
            for (x, y) in [
                (kldiv_metric(&q, &g).unwrap(), kldiv_metric(&p, &g).unwrap()),
                (cc_metric(&q, &g).unwrap(), cc_metric(&p, &g).unwrap()),
                (sim_metric(&q, &g).unwrap(), sim_metric(&p, &g).unwrap()),
                (nss_metric(&q, &fx).unwrap(), nss_metric(&p, &fx).unwrap()),
                (auc_judd(&q, &fx).unwrap(), auc_judd(&p, &fx).unwrap()),
                (
                    auc_borji(&q, &fx, 10, 1, NegativeSampling::AllPixels).unwrap(),
                    auc_borji(&p, &fx, 10, 1, NegativeSampling::AllPixels).unwrap(),
                ),
            ] {
                assert!(close(x, y, 1e-9), "{x} vs {y}");
            }
        }
    }
}
