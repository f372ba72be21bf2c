use llada_core::autograd::Tape;
use llada_core::model::{
    load_checkpoint, save_checkpoint, BatchItem, Dtype, ForwardOptions, FreezeOptions, GenerateOptions, LladaModel,
    LoraConfig, ModelConfig, ModelError, ParamSet, PsiInit, Trainable,
};
use llada_core::trainer::{predict, TrainSample};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fixtures;

fn bits(a: &Array2<f64>) -> Vec<u64> {
    a.iter().map(|v| v.to_bits()).collect()
}

fn same(a: &Array2<f64>, b: &Array2<f64>) -> bool {
    a.dim() == b.dim() && bits(a) == bits(b)
}

fn setup(seed: u64) -> (LladaModel, Vec<TrainSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = fixtures::random_config(&mut rng, fixtures::full_vocab());
    let (data, _) = fixtures::data(4, cfg.image_height, seed);
    (LladaModel::new(cfg).unwrap(), data)
}

/// Hidden states before position k do not depend on tokens at or after k, and the
/// map does not depend on the answer text that follows `[ATTN]`.
pub fn causal_prefix(seed: u64) {
    let (model, data) = setup(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let s = &data[0];
    let seq = model.training_sequence(&s.context, &s.what, &s.why, true);
    let full = model.llm_forward(&s.image, &seq).unwrap();
    let attn = model.attn_position(&seq).unwrap();
    let vocab = model.vocab().len();
    for k in [attn + 1, attn + 2, seq.len() - 1] {
        let mut altered = seq.clone();
        for i in k..altered.len() {
            altered.ids[i] = rng.random_range(0..vocab);
        }
        // keep the single [ATTN]
        for i in k..altered.len() {
            if altered.ids[i] == model.vocab().attn_id() {
                altered.ids[i] = 0;
            }
        }
        let out = model.llm_forward(&s.image, &altered).unwrap();
        let a = full.hidden.slice(s![..k, ..]).to_owned();
        let b = out.hidden.slice(s![..k, ..]).to_owned();
        assert!(same(&a, &b), "seed {seed}: prefix {k} changed by later tokens");
        let la = full.logits.slice(s![..k, ..]).to_owned();
        let lb = out.logits.slice(s![..k, ..]).to_owned();
        assert!(same(&la, &lb), "seed {seed}: prefix logits {k} changed");
        let mut short = seq.clone();
        short.ids.truncate(k);
        short.segments.truncate(k);
        let t = model.llm_forward(&s.image, &short).unwrap();
        let close = a.iter().zip(t.hidden.iter()).all(|(x, y)| (x - y).abs() <= 1e-12);
        assert!(close, "seed {seed}: truncation to {k} changed the prefix");
    }
    let other = model.training_sequence(&s.context, &data[1].what, &data[1].why, true);
    let m1 = model.forward(&s.image, &seq).unwrap().map_logits.unwrap();
    let m2 = model.forward(&s.image, &other).unwrap().map_logits.unwrap();
    assert!(same(&m1, &m2), "seed {seed}: map depends on text after [ATTN]");
}

/// Every visual token receives the same cross-attention vector, and `h_dec = h_vis + that`.
pub fn repeat_rank_one(seed: u64) {
    let (model, data) = setup(seed);
    for s in &data[..2] {
        let seq = model.training_sequence(&s.context, &s.what, &s.why, true);
        let out = model.forward(&s.image, &seq).unwrap();
        let h_vis = model.encode_image(&s.image).unwrap();
        let dv = model
            .decode_attention_map(out.attn_embedding.as_ref().unwrap().view(), &h_vis, false)
            .unwrap();
        let first: Vec<u64> = dv.repeated.row(0).iter().map(|v| v.to_bits()).collect();
        for r in dv.repeated.rows() {
            assert_eq!(r.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), first, "seed {seed}");
        }
        assert!(same(&dv.h_dec, &(&dv.h_vis + &dv.repeated)), "seed {seed}: h_dec");
        assert!(same(&dv.map_logits, out.map_logits.as_ref().unwrap()), "seed {seed}: decode path");
    }
    // and on the training tape, per sample of a batch
    let seqs: Vec<_> = data
        .iter()
        .map(|s| model.training_sequence(&s.context, &s.what, &s.why, true))
        .collect();
    let items: Vec<BatchItem> = data.iter().zip(&seqs).map(|(s, q)| BatchItem { image: &s.image, seq: q }).collect();
    let mut tape = Tape::new();
    let opts = ForwardOptions {
        train: true,
        decode_map: true,
        ..Default::default()
    };
    let f = model.forward_batch(&mut tape, &items, &opts, &[]).unwrap();
    let rep = tape.value(f.trace.unwrap().repeated);
    let n = model.num_patches();
    for b in 0..items.len() {
        let block = rep.slice(s![b * n..(b + 1) * n, ..]);
        for r in block.rows() {
            assert!(r.iter().zip(block.row(0)).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

/// Attaching zero-initialized adapters leaves every output bit unchanged.
pub fn lora_zero_init(seed: u64) {
    let (model, data) = setup(seed);
    let mut base = model.clone();
    if base.config().lora.enabled {
        let mut cfg = base.config().clone();
        cfg.lora.enabled = false;
        base = LladaModel::new(cfg).unwrap();
    }
    let mut adapted = base.clone();
    adapted
        .apply_lora(&LoraConfig {
            enabled: true,
            rank: 2,
            alpha: 8.0,
        })
        .unwrap();
    assert!(adapted.parameter_count() > base.parameter_count());
    for s in &data {
        let seq = base.training_sequence(&s.context, &s.what, &s.why, true);
        let a = base.forward(&s.image, &seq).unwrap();
        let b = adapted.forward(&s.image, &seq).unwrap();
        assert!(same(&a.text_logits, &b.text_logits), "seed {seed}: text logits");
        assert!(same(a.map_logits.as_ref().unwrap(), b.map_logits.as_ref().unwrap()), "seed {seed}: map");
    }
}

/// f64 checkpoints reload bit-exactly; f32 ones reload as the f32-rounded values.
pub fn checkpoint_round_trip(seed: u64) {
    let (mut model, data) = setup(seed);
    // non-trivial buffers
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
    let mut buffers = model.buffers().clone();
    for i in 0..buffers.len() {
        buffers.value_mut(i).mapv_inplace(|v| v + rng.random::<f64>());
    }
    model = LladaModel::from_parts(model.config().clone(), model.params().clone(), buffers).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut extra = ParamSet::default();
    extra.insert("adam.m.x", Array2::from_elem((2, 3), 1.0 / 3.0));
    let p64 = dir.path().join("m64.json");
    save_checkpoint(&p64, &model, Dtype::F64, &extra, serde_json::json!({"step": 5})).unwrap();
    let back = load_checkpoint(&p64, Some(model.config())).unwrap();
    assert_eq!(back.dtype, Dtype::F64);
    assert_eq!(back.metadata["step"], 5);
    for (name, v) in model.params().iter().chain(model.buffers().iter()) {
        let w = back.model.params().get(name).or_else(|| back.model.buffers().get(name)).unwrap();
        assert!(same(v, w), "{name}");
    }
    assert!(same(extra.get("adam.m.x").unwrap(), back.extra.get("adam.m.x").unwrap()));
    let s = &data[0];
    let seq = model.training_sequence(&s.context, &s.what, &s.why, true);
    let a = model.forward(&s.image, &seq).unwrap();
    let b = back.model.forward(&s.image, &seq).unwrap();
    assert!(same(a.map_logits.as_ref().unwrap(), b.map_logits.as_ref().unwrap()));

    let p32 = dir.path().join("m32.json");
    save_checkpoint(&p32, &model, Dtype::F32, &ParamSet::default(), serde_json::Value::Null).unwrap();
    let back = load_checkpoint(&p32, None).unwrap();
    for (name, v) in model.params().iter() {
        let rounded = v.mapv(|x| x as f32 as f64);
        assert!(same(&rounded, back.model.params().get(name).unwrap()), "f32 {name}");
    }
    // a corrupted blob is refused
    let bin = dir.path().join("m64.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&bin, bytes).unwrap();
    assert!(load_checkpoint(&p64, None).is_err());
}

/// A batch with padding gives the same per-sample outputs as single-sample calls.
pub fn batching_equivalence(seed: u64) {
    let (model, data) = setup(seed);
    let seqs: Vec<_> = data
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let with_text = i % 2 == 0;
            model.training_sequence(&s.context, &s.what, &s.why, with_text)
        })
        .collect();
    let items: Vec<BatchItem> = data.iter().zip(&seqs).map(|(s, q)| BatchItem { image: &s.image, seq: q }).collect();
    let mut tape = Tape::new();
    let opts = ForwardOptions {
        decode_map: true,
        ..Default::default()
    };
    let f = model.forward_batch(&mut tape, &items, &opts, &[]).unwrap();
    let logits = tape.value(f.text_logits);
    let maps = tape.value(f.map_logits.unwrap());
    let hw = model.config().image_height * model.config().image_width;
    for (b, it) in items.iter().enumerate() {
        let single = model.forward(it.image, it.seq).unwrap();
        let l = logits.slice(s![b * f.lmax..b * f.lmax + it.seq.len(), ..]);
        let max_l = l.iter().zip(single.text_logits.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let m = maps.slice(s![b * hw..(b + 1) * hw, ..]);
        let max_m = m
            .iter()
            .zip(single.map_logits.as_ref().unwrap().iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_l < 1e-10 && max_m < 1e-10, "seed {seed} sample {b}: {max_l:e} {max_m:e}");
    }
}

/// With adapters the trainable set is the adapters, the `[ATTN]` row, ψ and the decoder.
/// The whole visual encoder, projector included, stays frozen.
pub fn lora_parameter_count(seed: u64) {
    let (model, _) = setup(seed);
    let mut cfg = model.config().clone();
    cfg.lora = LoraConfig {
        enabled: true,
        rank: 2,
        alpha: 4.0,
    };
    let model = LladaModel::new(cfg.clone()).unwrap();
    let mask = model.trainable(&FreezeOptions::default());
    let d = cfg.llm_dim;
    let mut expected = cfg.llm_layers * 4 * (d * 2 + 2 * d) + d;
    for (name, v) in model.params().iter() {
        let head = name.split('.').next().unwrap();
        if matches!(head, "psi" | "dec") {
            expected += v.len();
        }
    }
    assert_eq!(model.trainable_count(&mask), expected, "seed {seed}");
    let attn = model.vocab().attn_id();
    let tok = model.params().expect_id("llm.tok_emb");
    assert_eq!(mask[tok], Trainable::Rows(vec![attn]));
}

/// Identity-initialized ψ passes the `[ATTN]` hidden state through unchanged.
pub fn identity_psi(seed: u64) {
    let (model, data) = setup(seed);
    let mut cfg = model.config().clone();
    cfg.psi_init = PsiInit::Identity;
    let model = LladaModel::new(cfg).unwrap();
    let s = &data[0];
    let seq = model.training_sequence(&s.context, &s.what, &s.why, true);
    let out = model.llm_forward(&s.image, &seq).unwrap();
    let pos = model.attn_position(&seq).unwrap();
    let e = model.extract_attention_embedding(&out.hidden, &seq).unwrap();
    assert_eq!(
        e.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        out.hidden.row(pos).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

/// An untrained model never panics on generation: either a map comes back or a typed
/// error for an answer without exactly one `[ATTN]`, and `predict` always has a map.
pub fn generation_robust(seed: u64) {
    let (model, data) = setup(seed);
    let s = &data[0];
    let (h, w) = (model.config().image_height, model.config().image_width);
    for (max_new, beam) in [(1, 1), (6, 2), (20, 4), (200, 1)] {
        let gen = GenerateOptions {
            max_new_tokens: max_new,
            beam_width: beam,
        };
        match model.generate(&s.image, &s.context, &gen) {
            Ok(g) => {
                assert_eq!(g.map_logits.dim(), (h, w));
                assert!(g.map_logits.iter().all(|v| v.is_finite()));
                assert!(g.answer_ids.len() <= max_new);
                assert!(g.sequence.len() <= model.config().max_seq_len);
            }
            Err(ModelError::MissingAttnToken | ModelError::MultipleAttnToken(_)) => {}
            Err(e) => panic!("seed {seed}: unexpected {e}"),
        }
        let p = predict(&model, s, true, &gen).unwrap();
        assert_eq!(p.map.shape(), (h, w));
        assert!(p.map.values().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }
    assert!(model
        .generate(
            &s.image,
            &s.context,
            &GenerateOptions {
                max_new_tokens: 0,
                beam_width: 1
            }
        )
        .is_err());
}

pub fn toy_parameter_count() -> usize {
    LladaModel::new(ModelConfig::toy(fixtures::full_vocab())).unwrap().parameter_count()
}

pub fn architecture_suite(seeds: u64) -> String {
    for seed in 0..seeds {
        causal_prefix(seed);
        repeat_rank_one(seed);
        lora_zero_init(seed);
        checkpoint_round_trip(seed);
    }
    format!("{seeds} random configs: causal prefix, rank-1 repeat, LoRA zero-init, checkpoint round-trip all bit-exact")
}
