use llada_core::losses::LossWeights;
use llada_core::model::{LladaModel, Trainable};
use llada_core::trainer::{FreezeConfig, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::fixtures;

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

pub fn terms() -> Vec<(&'static str, LossWeights)> {
    let w = |m, t, b, k, wh, wy| LossWeights {
        lambda_map: m,
        lambda_txt: t,
        lambda_bce: b,
        lambda_kl: k,
        lambda_what: wh,
        lambda_why: wy,
    };
    vec![
        ("bce", w(1.0, 0.0, 1.0, 0.0, 0.0, 0.0)),
        ("kl", w(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)),
        ("what", w(0.0, 1.0, 0.0, 0.0, 1.0, 0.0)),
        ("why", w(0.0, 1.0, 0.0, 0.0, 0.0, 1.0)),
        ("full", LossWeights::default()),
    ]
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Central-difference check of `compute_gradients` on `probes` random entries per
/// loss term. Returns the worst relative error.
pub fn check_config(seed: u64, probes: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = fixtures::full_vocab();
    let mcfg = fixtures::random_config(&mut rng, vocab);
    let (data, _) = fixtures::data(3, mcfg.image_height, seed);
    let mut model = LladaModel::new(mcfg).unwrap();
    // B starts at zero; give it values so adapter gradients are not trivially zero
    let names: Vec<String> = model.params().names().to_vec();
    let normal = Normal::new(0.0, 0.1).unwrap();
    for (i, name) in names.iter().enumerate() {
        if name.ends_with("lora_b") {
            model.params_mut().value_mut(i).mapv_inplace(|_| normal.sample(&mut rng));
        }
    }
    let mut worst: f64 = 0.0;
    for (term, weights) in terms() {
        let cfg = TrainConfig {
            batch_size: 2,
            grad_accum_steps: 1,
            freeze: FreezeConfig { visual_encoder: false },
            loss_weights: weights,
            ..Default::default()
        };
        let mut t = Trainer::new(model.clone(), cfg, &data).unwrap();
        let idx = [0, 1, 2];
        let (_, grads) = t.compute_gradients(&idx).unwrap();
        let mask = t.trainable_mask().to_vec();
        let candidates: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i].is_frozen()).collect();
        for _ in 0..probes {
            let pid = candidates[rng.random_range(0..candidates.len())];
            let shape = t.model().params().value(pid).dim();
            let r = match &mask[pid] {
                Trainable::Rows(rows) => rows[rng.random_range(0..rows.len())],
                _ => rng.random_range(0..shape.0),
            };
            let c = rng.random_range(0..shape.1);
            let analytic = grads[pid].as_ref().map_or(0.0, |g| g[[r, c]]);
            let orig = t.model().params().value(pid)[[r, c]];
            let eval = |v: f64, t: &mut Trainer| {
                t.model_mut().params_mut().value_mut(pid)[[r, c]] = v;
                t.compute_gradients(&idx).unwrap().0.total
            };
            let plus = eval(orig + STEP, &mut t);
            let minus = eval(orig - STEP, &mut t);
            eval(orig, &mut t);
            let numeric = (plus - minus) / (2.0 * STEP);
            let e = rel_err(analytic, numeric);
            let name = t.model().params().name(pid).to_string();
            assert!(
                e <= TOLERANCE,
                "seed {seed} term {term} {name}[{r},{c}]: analytic {analytic:e} numeric {numeric:e} rel {e:e}"
            );
            worst = worst.max(e);
        }
    }
    worst
}

pub fn gradient_suite(configs: u64, probes: usize) -> String {
    let t = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..configs {
        worst = worst.max(check_config(100 + seed, probes));
    }
    let secs = t.elapsed().as_secs_f64();
    assert!(secs < 300.0, "gradient suite took {secs:.1}s");
    format!(
        "{configs} configs × {} terms × {probes} probes, worst rel err {worst:.1e}, {secs:.1}s",
        terms().len()
    )
}
