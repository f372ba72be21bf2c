use llada_core::model::{LladaModel, LoraConfig, ModelConfig, PsiInit};
use llada_core::synth::{self, SynthConfig, SynthSample};
use llada_core::trainer::TrainSample;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Synthetic samples at `size × size` with objects on a 4×4 grid.
pub fn synth(n: usize, size: usize, seed: u64) -> Vec<SynthSample> {
    synth::generate(&SynthConfig {
        samples: n,
        height: size,
        width: size,
        cell: size / 4,
        seed,
        val_fraction: 0.0,
        ..Default::default()
    })
}

pub fn data(n: usize, size: usize, seed: u64) -> (Vec<TrainSample>, Vec<String>) {
    let s = synth(n, size, seed);
    (synth::train_samples(&s), synth::base_vocab(&s))
}

pub fn toy_model(vocab: Vec<String>) -> LladaModel {
    LladaModel::new(ModelConfig::toy(vocab)).unwrap()
}

/// A small valid configuration with randomly drawn sizes.
pub fn random_config(rng: &mut ChaCha8Rng, vocab: Vec<String>) -> ModelConfig {
    let size = *[16usize, 24, 32].choose(rng).unwrap();
    let patch = *[4usize, 8].choose(rng).unwrap();
    let heads = *[1usize, 2, 4].choose(rng).unwrap();
    let llm_dim = heads * rng.random_range(2..=4) * 2;
    let dec_heads = *[1usize, 2].choose(rng).unwrap();
    let psi_init = if rng.random_bool(0.3) { PsiInit::Identity } else { PsiInit::Random };
    let mut channels: Vec<usize> = (0..4).map(|_| rng.random_range(2..=6)).collect();
    channels.push(1);
    let lora = LoraConfig {
        enabled: rng.random_bool(0.3),
        rank: 2,
        alpha: 4.0,
    };
    ModelConfig {
        image_height: size,
        image_width: size,
        patch_size: patch,
        embed_dim: rng.random_range(6..=16),
        llm_dim,
        llm_layers: rng.random_range(1..=2),
        llm_heads: heads,
        ffn_dim: llm_dim * 2,
        max_seq_len: 160,
        vocab,
        psi_hidden: 2 * llm_dim + rng.random_range(0..8),
        psi_init,
        decoder_channels: channels,
        decoder_heads: dec_heads,
        bn_momentum: 0.1,
        bn_eps: 1e-5,
        lora,
        init_seed: rng.random(),
    }
}

/// Vocabulary covering every word the synthetic generator can emit.
pub fn full_vocab() -> Vec<String> {
    synth::base_vocab(&synth(400, 32, 0))
}
