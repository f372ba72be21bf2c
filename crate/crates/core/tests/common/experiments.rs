use std::time::Instant;

use llada_core::data_model::Split;
use llada_core::metrics::{cc_metric, kldiv_metric};
use llada_core::model::{GenerateOptions, LladaModel, ModelConfig};
use llada_core::synth::{self, SynthConfig};
use llada_core::trainer::{predict, train, validate, Ablation, TrainConfig, TrainSample};

pub struct OverfitResult {
    pub parameters: usize,
    pub kldiv: f64,
    pub cc: f64,
    pub exact: usize,
    pub samples: usize,
    pub steps: usize,
    pub secs: f64,
    pub deterministic: bool,
}

pub fn overfit_config(steps: usize) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        warmup_iters: 20,
        batch_size: 8,
        grad_accum_steps: 2,
        weight_decay: 0.0,
        max_steps: steps,
        ..Default::default()
    }
}

fn overfit_once(data: &[TrainSample], vocab: &[String], steps: usize) -> LladaModel {
    let model = LladaModel::new(ModelConfig::toy(vocab.to_vec())).unwrap();
    train(model, data, overfit_config(steps), None).unwrap().0
}

/// Trains the toy model on `n` synthetic samples and scores it on the same samples.
/// With `check_determinism` a second run from the same seed must give identical weights.
pub fn overfit(n: usize, steps: usize, check_determinism: bool) -> OverfitResult {
    let all = synth::generate(&SynthConfig {
        samples: n,
        val_fraction: 0.0,
        ..Default::default()
    });
    let data = synth::train_samples(&all);
    let vocab = synth::base_vocab(&all);
    let t0 = Instant::now();
    let model = overfit_once(&data, &vocab, steps);
    let secs = t0.elapsed().as_secs_f64();
    let (mut kl, mut cc, mut exact) = (0.0, 0.0, 0);
    for s in &data {
        let p = predict(&model, s, true, &GenerateOptions::default()).unwrap();
        kl += kldiv_metric(&p.map, &s.map).unwrap();
        cc += cc_metric(&p.map, &s.map).unwrap();
        exact += usize::from(p.what == s.what && p.why == s.why);
    }
    let deterministic = !check_determinism || {
        let again = overfit_once(&data, &vocab, steps);
        again.params() == model.params()
    };
    OverfitResult {
        parameters: model.parameter_count(),
        kldiv: kl / n as f64,
        cc: cc / n as f64,
        exact,
        samples: n,
        steps,
        secs,
        deterministic,
    }
}

impl OverfitResult {
    pub fn passed(&self) -> bool {
        self.parameters <= 2_000_000
            && self.kldiv < 0.1
            && self.cc > 0.95
            && self.exact == self.samples
            && self.steps <= 2000
            && self.secs < 900.0
            && self.deterministic
    }

    pub fn summary(&self) -> String {
        format!(
            "{} params, {} steps in {:.0}s: train KLdiv {:.4}, CC {:.4}, exact text {}/{}, deterministic {}",
            self.parameters, self.steps, self.secs, self.kldiv, self.cc, self.exact, self.samples, self.deterministic
        )
    }
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub full_kl: f64,
    pub where_kl: f64,
    pub full_cider: f64,
    pub text_cider: f64,
}

pub struct AblationResult {
    pub seeds: Vec<SeedResult>,
    pub secs: f64,
}

impl AblationResult {
    /// Mean reduction of validation map KLdiv from adding what+why.
    pub fn map_gain(&self) -> f64 {
        self.seeds.iter().map(|s| s.where_kl - s.full_kl).sum::<f64>() / self.seeds.len() as f64
    }

    /// Mean CIDEr gain from adding where.
    pub fn text_gain(&self) -> f64 {
        self.seeds.iter().map(|s| s.full_cider - s.text_cider).sum::<f64>() / self.seeds.len() as f64
    }

    pub fn passed(&self) -> bool {
        self.map_gain() > 0.0 && self.text_gain() > 0.0
    }

    pub fn summary(&self) -> String {
        let per: Vec<String> = self
            .seeds
            .iter()
            .map(|s| {
                format!(
                    "seed {}: KL full {:.3} / where-only {:.3}, CIDEr full {:.2} / text-only {:.2}",
                    s.seed, s.full_kl, s.where_kl, s.full_cider, s.text_cider
                )
            })
            .collect();
        let verdict = |g: f64| if g > 0.0 { "holds" } else { "does not hold" };
        format!(
            "what+why -> where: mean KL gain {:+.3} ({}); where -> text: mean CIDEr gain {:+.3} ({}); {}; {:.0}s",
            self.map_gain(),
            verdict(self.map_gain()),
            self.text_gain(),
            verdict(self.text_gain()),
            per.join("; "),
            self.secs
        )
    }
}

/// Full vs where-only vs text-only on the context-dependent synthetic set.
pub fn ablation(samples: usize, steps: usize, seeds: u64) -> AblationResult {
    let all = synth::generate(&SynthConfig {
        samples,
        ..Default::default()
    });
    let vocab = synth::base_vocab(&all);
    let pick = |split| -> Vec<TrainSample> {
        let s: Vec<_> = all.iter().filter(|s| s.record.split == split).cloned().collect();
        synth::train_samples(&s)
    };
    let (trn, val) = (pick(Split::Train), pick(Split::Val));
    let t0 = Instant::now();
    let run = |seed: u64, ablation: Ablation| {
        let mut cfg = ModelConfig::toy(vocab.clone());
        cfg.init_seed = seed;
        let tc = TrainConfig {
            seed,
            ablation,
            weight_decay: 0.01,
            ..overfit_config(steps)
        };
        let (m, _) = train(LladaModel::new(cfg).unwrap(), &trn, tc, None).unwrap();
        validate(&m, &val, ablation.text(), &GenerateOptions::default()).unwrap()
    };
    let mut out = Vec::new();
    for seed in 0..seeds {
        let full = run(seed, Ablation::default());
        let where_only = run(
            seed,
            Ablation {
                enable_where: true,
                enable_what: false,
                enable_why: false,
            },
        );
        let text_only = run(
            seed,
            Ablation {
                enable_where: false,
                enable_what: true,
                enable_why: true,
            },
        );
        out.push(SeedResult {
            seed,
            full_kl: full.kldiv,
            where_kl: where_only.kldiv,
            full_cider: full.cider.unwrap(),
            text_cider: text_only.cider.unwrap(),
        });
    }
    AblationResult {
        seeds: out,
        secs: t0.elapsed().as_secs_f64(),
    }
}
