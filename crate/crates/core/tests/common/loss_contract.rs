use llada_core::losses::{LossReport, LossWeights};
use llada_core::trainer::{TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fixtures;

fn literal_total(r: &LossReport, w: &LossWeights) -> f64 {
    let map = w.lambda_bce * r.map_bce + w.lambda_kl * r.map_kl;
    let txt = w.lambda_what * r.txt_what + w.lambda_why * r.txt_why;
    w.lambda_map * map + w.lambda_txt * txt
}

fn report(data: &[llada_core::trainer::TrainSample], vocab: &[String], w: LossWeights) -> LossReport {
    let cfg = TrainConfig {
        batch_size: 4,
        grad_accum_steps: 1,
        loss_weights: w,
        ..Default::default()
    };
    let mut t = Trainer::new(fixtures::toy_model(vocab.to_vec()), cfg, data).unwrap();
    t.compute_gradients(&[0, 1, 2, 3]).unwrap().0
}

/// The reported total equals the weighted sum of the reported components, at the
/// default weights and at random ones, and the components do not depend on the weights.
pub fn loss_contract(vectors: usize, seed: u64) -> String {
    let d = LossWeights::default();
    assert_eq!(
        [d.lambda_map, d.lambda_txt, d.lambda_bce, d.lambda_kl, d.lambda_what, d.lambda_why],
        [2.0, 1.0, 1.0, 0.1, 1.0, 1.0]
    );
    let (data, vocab) = fixtures::data(4, 32, seed);
    let base = report(&data, &vocab, d);
    assert!((base.total - literal_total(&base, &d)).abs() <= 1e-9);
    assert!((base.total - base.recompose(&d)).abs() <= 1e-9);
    assert!(base.map_bce > 0.0 && base.map_kl > 0.0 && base.txt_what > 0.0 && base.txt_why > 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..vectors {
        let w = LossWeights {
            lambda_map: rng.random_range(0.0..4.0),
            lambda_txt: rng.random_range(0.0..4.0),
            lambda_bce: rng.random_range(0.0..2.0),
            lambda_kl: rng.random_range(0.0..2.0),
            lambda_what: rng.random_range(0.0..2.0),
            lambda_why: rng.random_range(0.0..2.0),
        };
        let r = report(&data, &vocab, w);
        for (a, b) in [
            (r.map_bce, base.map_bce),
            (r.map_kl, base.map_kl),
            (r.txt_what, base.txt_what),
            (r.txt_why, base.txt_why),
        ] {
            assert!((a - b).abs() <= 1e-9, "component moved with weights: {a} vs {b}");
        }
        assert_eq!(r.token_counts, base.token_counts);
        let e = (r.total - literal_total(&r, &w)).abs();
        assert!(e <= 1e-9, "{w:?}: {} vs {}", r.total, literal_total(&r, &w));
        worst = worst.max(e);
    }
    format!("defaults (2,1,1,0.1,1,1) + {vectors} random weight vectors, max |Δ| {worst:.1e}")
}
