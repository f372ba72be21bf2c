//! Visual encoder, causal language model, ψ projector and attention decoder.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{LoraConfig, ModelConfig, PsiInit, DECODER_STAGES};
use super::params::{Binder, ParamSet, Trainable};
use super::tokenizer::{Segment, TokenSequence, Vocab, PAD};
use super::ModelError;
use crate::autograd::{bilinear_matrix, AttnBlock, BnMode, Tape, Var};
use crate::data_model::{RgbImage, SaliencyMap};

const LORA_TARGETS: [&str; 4] = ["q", "k", "v", "o"];

#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub image: &'a RgbImage,
    pub seq: &'a TokenSequence,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    /// Batch-norm batch statistics instead of running statistics.
    pub train: bool,
    /// Run ψ and the decoder. Every sequence must then hold exactly one `[ATTN]`.
    pub decode_map: bool,
    /// Samples per batch-norm group in train mode; the whole batch when `None`.
    pub bn_group_samples: Option<usize>,
    pub zero_cross_attention: bool,
}

/// Tape nodes of the decoder internals, for inspection.
#[derive(Debug, Clone, Copy)]
pub struct DecoderTrace {
    pub cross_attention: Var,
    /// Cross-attention output replicated to every visual token.
    pub repeated: Var,
    pub h_dec: Var,
}

#[derive(Debug)]
pub struct BatchForward {
    pub batch: usize,
    /// Padded length of every sample block in `text_logits` and `hidden`.
    pub lmax: usize,
    pub lengths: Vec<usize>,
    /// `(batch · lmax, vocab)`; row `i` predicts token `i + 1` of the same sample.
    pub text_logits: Var,
    pub hidden: Var,
    /// `(batch · patches, llm_dim)`
    pub h_vis: Var,
    pub attn_hidden: Option<Var>,
    /// ψ output, `(batch, llm_dim)`.
    pub h_attn: Option<Var>,
    /// `(batch · H · W, 1)`, each sample row-major.
    pub map_logits: Option<Var>,
    pub trace: Option<DecoderTrace>,
    /// Per batch-norm stage: per group `(mean, biased var)`.
    pub bn_stats: Vec<Vec<(Array1<f64>, Array1<f64>)>>,
    pub bn_group_rows: usize,
    /// Tape variable of every parameter that was used.
    pub params: Vec<Option<Var>>,
}

/// Outputs of one sample in evaluation mode.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub text_logits: Array2<f64>,
    /// Present iff the sequence holds an `[ATTN]` token.
    pub map_logits: Option<Array2<f64>>,
    pub attn_embedding: Option<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct LlmOutput {
    pub hidden: Array2<f64>,
    pub logits: Array2<f64>,
}

/// Concrete decoder intermediates for a single sample.
#[derive(Debug, Clone)]
pub struct DecoderValues {
    pub map_logits: Array2<f64>,
    pub h_vis: Array2<f64>,
    pub repeated: Array2<f64>,
    pub h_dec: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeOptions {
    pub visual_encoder: bool,
    /// When false ψ and the decoder are frozen.
    pub enable_where: bool,
}

impl Default for FreezeOptions {
    fn default() -> Self {
        Self {
            visual_encoder: true,
            enable_where: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LladaModel {
    cfg: ModelConfig,
    vocab: Vocab,
    params: ParamSet,
    buffers: ParamSet,
    upsample: Array2<f64>,
}

fn normal(rng: &mut ChaCha8Rng, shape: (usize, usize), std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn(shape, || dist.sample(rng))
}

fn bn_stage(i: usize) -> bool {
    i + 1 < DECODER_STAGES
}

/// Expected `(name, shape)` of every non-adapter parameter, in creation order.
fn base_layout(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let d = cfg.llm_dim;
    let mut l = vec![
        ("vis.patch_w".into(), (cfg.patch_dim(), cfg.embed_dim)),
        ("vis.patch_b".into(), (1, cfg.embed_dim)),
        ("vis.phi_w".into(), (cfg.embed_dim, d)),
        ("vis.phi_b".into(), (1, d)),
        ("llm.tok_emb".into(), (cfg.vocab_size(), d)),
        ("llm.pos_emb".into(), (cfg.max_seq_len, d)),
    ];
    for i in 0..cfg.llm_layers {
        let p = |n: &str| format!("llm.{i}.{n}");
        l.push((p("ln1_g"), (1, d)));
        l.push((p("ln1_b"), (1, d)));
        for t in LORA_TARGETS {
            l.push((p(&format!("w{t}")), (d, d)));
            l.push((p(&format!("b{t}")), (1, d)));
        }
        l.push((p("ln2_g"), (1, d)));
        l.push((p("ln2_b"), (1, d)));
        l.push((p("ff1_w"), (d, cfg.ffn_dim)));
        l.push((p("ff1_b"), (1, cfg.ffn_dim)));
        l.push((p("ff2_w"), (cfg.ffn_dim, d)));
        l.push((p("ff2_b"), (1, d)));
    }
    l.push(("llm.lnf_g".into(), (1, d)));
    l.push(("llm.lnf_b".into(), (1, d)));
    l.push(("psi.w1".into(), (d, cfg.psi_hidden)));
    l.push(("psi.b1".into(), (1, cfg.psi_hidden)));
    l.push(("psi.w2".into(), (cfg.psi_hidden, d)));
    l.push(("psi.b2".into(), (1, d)));
    for t in LORA_TARGETS {
        l.push((format!("dec.ca.w{t}"), (d, d)));
        l.push((format!("dec.ca.b{t}"), (1, d)));
    }
    let mut cin = d;
    for (i, &cout) in cfg.decoder_channels.iter().enumerate() {
        l.push((format!("dec.conv{i}.w"), (9 * cin, cout)));
        if bn_stage(i) {
            l.push((format!("dec.bn{i}.g"), (1, cout)));
            l.push((format!("dec.bn{i}.b"), (1, cout)));
        } else {
            l.push((format!("dec.conv{i}.b"), (1, cout)));
        }
        cin = cout;
    }
    l
}

fn lora_layout(cfg: &ModelConfig, rank: usize) -> Vec<(String, (usize, usize))> {
    let d = cfg.llm_dim;
    let mut l = Vec::new();
    for i in 0..cfg.llm_layers {
        for t in LORA_TARGETS {
            l.push((format!("llm.{i}.{t}.lora_a"), (d, rank)));
            l.push((format!("llm.{i}.{t}.lora_b"), (rank, d)));
        }
    }
    l
}

fn buffer_layout(cfg: &ModelConfig) -> Vec<(String, (usize, usize))> {
    let mut l = Vec::new();
    for (i, &c) in cfg.decoder_channels.iter().enumerate() {
        if bn_stage(i) {
            l.push((format!("dec.bn{i}.mean"), (1, c)));
            l.push((format!("dec.bn{i}.var"), (1, c)));
        }
    }
    l
}

fn init_value(name: &str, shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    if leaf.ends_with("_g") || (leaf == "g" && name.contains(".bn")) {
        return Array2::ones(shape);
    }
    if name.ends_with("_emb") {
        return normal(rng, shape, 0.1);
    }
    if leaf.starts_with('b') || leaf.ends_with("_b") {
        return Array2::zeros(shape);
    }
    normal(rng, shape, (1.0 / shape.0 as f64).sqrt())
}

impl LladaModel {
    /// Randomly initialized model (seeded by `cfg.init_seed`). Adapters are added
    /// when `cfg.lora.enabled`.
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut params = ParamSet::default();
        for (name, shape) in base_layout(&cfg) {
            let v = init_value(&name, shape, &mut rng);
            params.insert(name, v);
        }
        if cfg.psi_init == PsiInit::Identity {
            let d = cfg.llm_dim;
            let mut w1 = Array2::zeros((d, cfg.psi_hidden));
            let mut w2 = Array2::zeros((cfg.psi_hidden, d));
            for j in 0..d {
                w1[[j, j]] = 1.0;
                w1[[j, d + j]] = -1.0;
                w2[[j, j]] = 1.0;
                w2[[d + j, j]] = -1.0;
            }
            params.insert("psi.w1", w1);
            params.insert("psi.w2", w2);
        }
        let mut buffers = ParamSet::default();
        for (name, shape) in buffer_layout(&cfg) {
            let v = if name.ends_with(".var") { Array2::ones(shape) } else { Array2::zeros(shape) };
            buffers.insert(name, v);
        }
        let mut model = Self::assemble(cfg, params, buffers)?;
        if model.cfg.lora.enabled {
            let lora = model.cfg.lora.clone();
            model.apply_lora(&lora)?;
        }
        Ok(model)
    }

    fn assemble(cfg: ModelConfig, params: ParamSet, buffers: ParamSet) -> Result<Self, ModelError> {
        let vocab = Vocab::new(&cfg.vocab)?;
        let (gh, gw) = cfg.grid();
        let upsample = bilinear_matrix(gh, gw, cfg.image_height, cfg.image_width);
        Ok(Self {
            cfg,
            vocab,
            params,
            buffers,
            upsample,
        })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes against `cfg`.
    pub fn from_parts(cfg: ModelConfig, params: ParamSet, buffers: ParamSet) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut expected = base_layout(&cfg);
        if cfg.lora.enabled {
            expected.extend(lora_layout(&cfg, cfg.lora.rank));
        }
        let check = |set: &ParamSet, layout: &[(String, (usize, usize))], what: &str| -> Result<(), ModelError> {
            if set.len() != layout.len() {
                return Err(ModelError::ConfigMismatch(format!(
                    "{what}: expected {} tensors, found {}",
                    layout.len(),
                    set.len()
                )));
            }
            for (name, shape) in layout {
                match set.get(name) {
                    Some(v) if v.dim() == *shape => {}
                    Some(v) => {
                        return Err(ModelError::ConfigMismatch(format!(
                            "{name}: expected shape {shape:?}, found {:?}",
                            v.dim()
                        )))
                    }
                    None => return Err(ModelError::ConfigMismatch(format!("missing tensor `{name}`"))),
                }
            }
            Ok(())
        };
        check(&params, &expected, "parameters")?;
        check(&buffers, &buffer_layout(&cfg), "buffers")?;
        Self::assemble(cfg, params, buffers)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn buffers(&self) -> &ParamSet {
        &self.buffers
    }

    pub fn num_patches(&self) -> usize {
        self.cfg.num_patches()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_elements()
    }

    /// Adds zero-initialized low-rank adapters to every attention projection of the
    /// language model. `B = 0`, so outputs are unchanged.
    pub fn apply_lora(&mut self, lora: &LoraConfig) -> Result<(), ModelError> {
        self.cfg.check_lora(lora)?;
        if self.params.id("llm.0.q.lora_a").is_some() && self.cfg.lora.rank != lora.rank {
            return Err(ModelError::Config("adapters with a different rank are already attached".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.init_seed ^ 0x4c6f_5241);
        for (name, shape) in lora_layout(&self.cfg, lora.rank) {
            let v = if name.ends_with("lora_a") {
                normal(&mut rng, shape, (1.0 / shape.0 as f64).sqrt())
            } else {
                Array2::zeros(shape)
            };
            self.params.insert(name, v);
        }
        self.cfg.lora = LoraConfig {
            enabled: true,
            ..lora.clone()
        };
        Ok(())
    }

    /// Trainability of every parameter under the given freeze options.
    pub fn trainable(&self, opts: &FreezeOptions) -> Vec<Trainable> {
        let lora = self.cfg.lora.enabled;
        self.params
            .names()
            .iter()
            .map(|name| {
                let head = name.split('.').next().unwrap_or("");
                if head == "vis" && name.contains("patch") && opts.visual_encoder {
                    return Trainable::Frozen;
                }
                if matches!(head, "psi" | "dec") {
                    return if opts.enable_where { Trainable::All } else { Trainable::Frozen };
                }
                if !lora {
                    return Trainable::All;
                }
                if name.contains(".lora_") {
                    Trainable::All
                } else if name == "llm.tok_emb" {
                    Trainable::Rows(vec![self.vocab.attn_id()])
                } else {
                    Trainable::Frozen
                }
            })
            .collect()
    }

    pub fn trainable_count(&self, mask: &[Trainable]) -> usize {
        mask.iter()
            .enumerate()
            .map(|(i, t)| t.count(self.params.value(i).dim()))
            .sum()
    }

    fn check_image(&self, image: &RgbImage) -> Result<(), ModelError> {
        if (image.height(), image.width()) != (self.cfg.image_height, self.cfg.image_width) {
            return Err(ModelError::Shape(format!(
                "image is {}x{}, model expects {}x{}",
                image.height(),
                image.width(),
                self.cfg.image_height,
                self.cfg.image_width
            )));
        }
        Ok(())
    }

    fn check_sequence(&self, seq: &TokenSequence) -> Result<(), ModelError> {
        if seq.ids.len() != seq.segments.len() {
            return Err(ModelError::Shape("ids and segments differ in length".into()));
        }
        if seq.len() > self.cfg.max_seq_len {
            return Err(ModelError::Length {
                len: seq.len(),
                max: self.cfg.max_seq_len,
            });
        }
        let vis = seq.vision_positions();
        let n = self.num_patches();
        if vis.len() != n || vis.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(ModelError::Shape(format!(
                "expected {n} contiguous vision positions, found {}",
                vis.len()
            )));
        }
        if let Some(&bad) = seq.ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(ModelError::Shape(format!("token id {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Flattened patches, `(patches, 3p²)`, values in `[0, 1]`.
    pub fn patchify(&self, image: &RgbImage) -> Result<Array2<f64>, ModelError> {
        self.check_image(image)?;
        let p = self.cfg.patch_size;
        let (gh, gw) = self.cfg.grid();
        let mut out = Array2::zeros((gh * gw, self.cfg.patch_dim()));
        for pr in 0..gh {
            for pc in 0..gw {
                let mut row = out.row_mut(pr * gw + pc);
                for dy in 0..p {
                    for dx in 0..p {
                        let px = image.pixel(pr * p + dy, pc * p + dx);
                        for ch in 0..3 {
                            row[(dy * p + dx) * 3 + ch] = px[ch] as f64 / 255.0;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn encode_on_tape(&self, tape: &mut Tape, b: &mut Binder, images: &[&RgbImage]) -> Result<Var, ModelError> {
        let mut rows = Vec::with_capacity(images.len());
        for img in images {
            rows.push(self.patchify(img)?);
        }
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let patches = ndarray::concatenate(Axis(0), &views).expect("equal patch widths");
        let x = tape.constant(patches);
        let (w, bias) = (b.var(tape, "vis.patch_w"), b.var(tape, "vis.patch_b"));
        let e = tape.linear(x, w, bias);
        let (w, bias) = (b.var(tape, "vis.phi_w"), b.var(tape, "vis.phi_b"));
        Ok(tape.linear(e, w, bias))
    }

    fn projection(&self, tape: &mut Tape, b: &mut Binder, h: Var, layer: usize, t: &str) -> Var {
        let w = b.var(tape, &format!("llm.{layer}.w{t}"));
        let bias = b.var(tape, &format!("llm.{layer}.b{t}"));
        let y = tape.linear(h, w, bias);
        if !self.cfg.lora.enabled {
            return y;
        }
        let a = b.var(tape, &format!("llm.{layer}.{t}.lora_a"));
        let bb = b.var(tape, &format!("llm.{layer}.{t}.lora_b"));
        let ha = tape.matmul(h, a);
        let hab = tape.matmul(ha, bb);
        let delta = tape.scale(hab, self.cfg.lora.scaling());
        tape.add(y, delta)
    }

    /// Batched forward pass on `tape`. `grad[i]` marks parameter `i` as needing a
    /// gradient; pass an empty slice for inference.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        items: &[BatchItem],
        opts: &ForwardOptions,
        grad: &[bool],
    ) -> Result<BatchForward, ModelError> {
        if items.is_empty() {
            return Err(ModelError::Shape("empty batch".into()));
        }
        for it in items {
            self.check_sequence(it.seq)?;
        }
        let mut binder = Binder::new(&self.params, grad);
        let bsz = items.len();
        let n = self.num_patches();
        let d = self.cfg.llm_dim;
        let images: Vec<&RgbImage> = items.iter().map(|i| i.image).collect();
        let h_vis = self.encode_on_tape(tape, &mut binder, &images)?;

        let lengths: Vec<usize> = items.iter().map(|i| i.seq.len()).collect();
        let lmax = *lengths.iter().max().expect("non-empty batch");
        let mut ids = Vec::with_capacity(bsz * lmax);
        let mut vis_rows = Vec::with_capacity(bsz * n);
        let mut positions = Vec::with_capacity(bsz * lmax);
        let mut blocks = Vec::with_capacity(bsz);
        for (bi, it) in items.iter().enumerate() {
            ids.extend(&it.seq.ids);
            ids.extend(std::iter::repeat_n(PAD, lmax - it.seq.len()));
            vis_rows.extend(it.seq.vision_positions().into_iter().map(|p| bi * lmax + p));
            positions.extend(0..lmax);
            blocks.push(AttnBlock {
                q_start: bi * lmax,
                q_len: lmax,
                k_start: bi * lmax,
                k_len: lmax,
                k_valid: it.seq.len(),
            });
        }
        let tok_emb = binder.var(tape, "llm.tok_emb");
        let tok = tape.gather(tok_emb, &ids);
        let x = tape.scatter(tok, h_vis, &vis_rows);
        let pos_emb = binder.var(tape, "llm.pos_emb");
        let pos = tape.gather(pos_emb, &positions);
        let mut x = tape.add(x, pos);

        for layer in 0..self.cfg.llm_layers {
            let g = binder.var(tape, &format!("llm.{layer}.ln1_g"));
            let bb = binder.var(tape, &format!("llm.{layer}.ln1_b"));
            let h = tape.layer_norm(x, g, bb);
            let q = self.projection(tape, &mut binder, h, layer, "q");
            let k = self.projection(tape, &mut binder, h, layer, "k");
            let v = self.projection(tape, &mut binder, h, layer, "v");
            let a = tape.attention(q, k, v, self.cfg.llm_heads, blocks.clone(), true);
            let o = self.projection(tape, &mut binder, a, layer, "o");
            x = tape.add(x, o);
            let g = binder.var(tape, &format!("llm.{layer}.ln2_g"));
            let bb = binder.var(tape, &format!("llm.{layer}.ln2_b"));
            let h = tape.layer_norm(x, g, bb);
            let (w, bias) = (
                binder.var(tape, &format!("llm.{layer}.ff1_w")),
                binder.var(tape, &format!("llm.{layer}.ff1_b")),
            );
            let f = tape.linear(h, w, bias);
            let f = tape.gelu(f);
            let (w, bias) = (
                binder.var(tape, &format!("llm.{layer}.ff2_w")),
                binder.var(tape, &format!("llm.{layer}.ff2_b")),
            );
            let f = tape.linear(f, w, bias);
            x = tape.add(x, f);
        }
        let g = binder.var(tape, "llm.lnf_g");
        let bb = binder.var(tape, "llm.lnf_b");
        let hidden = tape.layer_norm(x, g, bb);
        let text_logits = tape.matmul_t(hidden, tok_emb);

        let mut out = BatchForward {
            batch: bsz,
            lmax,
            lengths,
            text_logits,
            hidden,
            h_vis,
            attn_hidden: None,
            h_attn: None,
            map_logits: None,
            trace: None,
            bn_stats: Vec::new(),
            bn_group_rows: 0,
            params: Vec::new(),
        };
        if opts.decode_map {
            let mut rows = Vec::with_capacity(bsz);
            for (bi, it) in items.iter().enumerate() {
                rows.push(bi * lmax + self.attn_position(it.seq)?);
            }
            let ah = tape.gather(hidden, &rows);
            let h_attn = self.psi(tape, &mut binder, ah);
            let (map, trace, stats, group_rows) = self.decode_on_tape(tape, &mut binder, h_attn, h_vis, bsz, opts);
            debug_assert_eq!(tape.value(h_attn).ncols(), d);
            out.attn_hidden = Some(ah);
            out.h_attn = Some(h_attn);
            out.map_logits = Some(map);
            out.trace = Some(trace);
            out.bn_stats = stats;
            out.bn_group_rows = group_rows;
        }
        out.params = binder.into_vars();
        Ok(out)
    }

    /// Position of the single `[ATTN]` in the answer.
    pub fn attn_position(&self, seq: &TokenSequence) -> Result<usize, ModelError> {
        let pos = seq.answer_positions_of(self.vocab.attn_id());
        match pos.len() {
            0 => Err(ModelError::MissingAttnToken),
            1 => Ok(pos[0]),
            k => Err(ModelError::MultipleAttnToken(k)),
        }
    }

    fn psi(&self, tape: &mut Tape, b: &mut Binder, x: Var) -> Var {
        let (w, bias) = (b.var(tape, "psi.w1"), b.var(tape, "psi.b1"));
        let h = tape.linear(x, w, bias);
        let h = tape.relu(h);
        let (w, bias) = (b.var(tape, "psi.w2"), b.var(tape, "psi.b2"));
        tape.linear(h, w, bias)
    }

    #[allow(clippy::type_complexity)]
    fn decode_on_tape(
        &self,
        tape: &mut Tape,
        b: &mut Binder,
        h_attn: Var,
        h_vis: Var,
        bsz: usize,
        opts: &ForwardOptions,
    ) -> (Var, DecoderTrace, Vec<Vec<(Array1<f64>, Array1<f64>)>>, usize) {
        let n = self.num_patches();
        let (gh, gw) = self.cfg.grid();
        let mut lin = |tape: &mut Tape, x: Var, t: &str| {
            let w = b.var(tape, &format!("dec.ca.w{t}"));
            let bias = b.var(tape, &format!("dec.ca.b{t}"));
            tape.linear(x, w, bias)
        };
        let q = lin(tape, h_attn, "q");
        let k = lin(tape, h_vis, "k");
        let v = lin(tape, h_vis, "v");
        let blocks = (0..bsz)
            .map(|bi| AttnBlock {
                q_start: bi,
                q_len: 1,
                k_start: bi * n,
                k_len: n,
                k_valid: n,
            })
            .collect();
        let ca = tape.attention(q, k, v, self.cfg.decoder_heads, blocks, false);
        let mut ca = lin(tape, ca, "o");
        if opts.zero_cross_attention {
            ca = tape.scale(ca, 0.0);
        }
        let rep_ids: Vec<usize> = (0..bsz).flat_map(|bi| std::iter::repeat_n(bi, n)).collect();
        let repeated = tape.gather(ca, &rep_ids);
        let h_dec = tape.add(h_vis, repeated);

        let group_rows = opts.bn_group_samples.unwrap_or(bsz).max(1) * n;
        let mut stats = Vec::new();
        let mut x = h_dec;
        for i in 0..DECODER_STAGES {
            let cols = tape.im2col3x3(x, bsz, gh, gw);
            let w = b.var(tape, &format!("dec.conv{i}.w"));
            let y = tape.matmul(cols, w);
            x = if bn_stage(i) {
                let g = b.var(tape, &format!("dec.bn{i}.g"));
                let beta = b.var(tape, &format!("dec.bn{i}.b"));
                let mode = if opts.train {
                    BnMode::Train { group_rows }
                } else {
                    BnMode::Eval {
                        mean: self.buffers.get(&format!("dec.bn{i}.mean")).expect("bn buffer").row(0).to_owned(),
                        var: self.buffers.get(&format!("dec.bn{i}.var")).expect("bn buffer").row(0).to_owned(),
                    }
                };
                let (y, st) = tape.batch_norm(y, g, beta, &mode, self.cfg.bn_eps);
                stats.push(st);
                tape.relu(y)
            } else {
                let bias = b.var(tape, &format!("dec.conv{i}.b"));
                tape.add_row(y, bias)
            };
        }
        let up = tape.constant(self.upsample.clone());
        let mut maps = Vec::with_capacity(bsz);
        for bi in 0..bsz {
            let s = tape.slice_rows(x, bi * n, n);
            maps.push(tape.matmul(up, s));
        }
        let map = if maps.len() == 1 { maps[0] } else { tape.concat_rows(&maps) };
        let trace = DecoderTrace {
            cross_attention: ca,
            repeated,
            h_dec,
        };
        (map, trace, stats, group_rows)
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, fwd: &BatchForward, total_rows: usize) {
        let mom = self.cfg.bn_momentum;
        let mut stage = 0;
        for i in 0..DECODER_STAGES {
            if !bn_stage(i) {
                continue;
            }
            let Some(groups) = fwd.bn_stats.get(stage) else { return };
            stage += 1;
            let mean_id = self.buffers.expect_id(&format!("dec.bn{i}.mean"));
            let var_id = self.buffers.expect_id(&format!("dec.bn{i}.var"));
            for (gi, (mean, var)) in groups.iter().enumerate() {
                let m = (total_rows - gi * fwd.bn_group_rows).min(fwd.bn_group_rows) as f64;
                let unbiased = if m > 1.0 { var * (m / (m - 1.0)) } else { var.clone() };
                let rm = self.buffers.value_mut(mean_id);
                *rm = &*rm * (1.0 - mom) + &(mean.view().insert_axis(Axis(0)).to_owned() * mom);
                let rv = self.buffers.value_mut(var_id);
                *rv = &*rv * (1.0 - mom) + &(unbiased.insert_axis(Axis(0)) * mom);
            }
        }
    }

    /// Visual tokens `h_vis`, `(patches, llm_dim)`.
    pub fn encode_image(&self, image: &RgbImage) -> Result<Array2<f64>, ModelError> {
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, &[]);
        let v = self.encode_on_tape(&mut tape, &mut b, &[image])?;
        Ok(tape.value(v).clone())
    }

    /// Final hidden states and next-token logits of one sequence.
    pub fn llm_forward(&self, image: &RgbImage, seq: &TokenSequence) -> Result<LlmOutput, ModelError> {
        let mut tape = Tape::new();
        let f = self.forward_batch(&mut tape, &[BatchItem { image, seq }], &ForwardOptions::default(), &[])?;
        Ok(LlmOutput {
            hidden: tape.value(f.hidden).clone(),
            logits: tape.value(f.text_logits).clone(),
        })
    }

    /// `ψ` applied to the hidden state at the `[ATTN]` position.
    pub fn extract_attention_embedding(&self, hidden: &Array2<f64>, seq: &TokenSequence) -> Result<Array1<f64>, ModelError> {
        let pos = self.attn_position(seq)?;
        if hidden.nrows() != seq.len() || hidden.ncols() != self.cfg.llm_dim {
            return Err(ModelError::Shape("hidden states do not match the sequence".into()));
        }
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, &[]);
        let x = tape.constant(hidden.row(pos).to_owned().insert_axis(Axis(0)));
        let y = self.psi(&mut tape, &mut b, x);
        Ok(tape.value(y).row(0).to_owned())
    }

    /// Decoder output for one sample in evaluation mode, with its intermediates.
    pub fn decode_attention_map(
        &self,
        h_attn: ArrayView1<f64>,
        h_vis: &Array2<f64>,
        zero_cross_attention: bool,
    ) -> Result<DecoderValues, ModelError> {
        let d = self.cfg.llm_dim;
        if h_attn.len() != d || h_vis.dim() != (self.num_patches(), d) {
            return Err(ModelError::Shape(format!(
                "decoder expects h_attn of {d} and h_vis of {}x{d}",
                self.num_patches()
            )));
        }
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, &[]);
        let q = tape.constant(h_attn.to_owned().insert_axis(Axis(0)));
        let kv = tape.constant(h_vis.clone());
        let opts = ForwardOptions {
            zero_cross_attention,
            ..Default::default()
        };
        let (map, trace, _, _) = self.decode_on_tape(&mut tape, &mut b, q, kv, 1, &opts);
        Ok(DecoderValues {
            map_logits: self.map_grid(tape.value(map)),
            h_vis: h_vis.clone(),
            repeated: tape.value(trace.repeated).clone(),
            h_dec: tape.value(trace.h_dec).clone(),
        })
    }

    /// Reshapes a `(H·W, 1)` column to `(H, W)`.
    pub fn map_grid(&self, col: &Array2<f64>) -> Array2<f64> {
        col.clone()
            .into_shape_with_order((self.cfg.image_height, self.cfg.image_width))
            .expect("map has H·W rows")
    }

    /// Single-sample evaluation-mode forward. The map is decoded iff the sequence
    /// holds `[ATTN]`.
    pub fn forward(&self, image: &RgbImage, seq: &TokenSequence) -> Result<ForwardOutput, ModelError> {
        let decode_map = match self.attn_position(seq) {
            Ok(_) => true,
            Err(ModelError::MissingAttnToken) => false,
            Err(e) => return Err(e),
        };
        let mut tape = Tape::new();
        let opts = ForwardOptions {
            decode_map,
            ..Default::default()
        };
        let f = self.forward_batch(&mut tape, &[BatchItem { image, seq }], &opts, &[])?;
        Ok(ForwardOutput {
            text_logits: tape.value(f.text_logits).clone(),
            map_logits: f.map_logits.map(|m| self.map_grid(tape.value(m))),
            attn_embedding: f.h_attn.map(|h| tape.value(h).row(0).to_owned()),
        })
    }

    /// Teacher-forced sequence for a sample.
    pub fn training_sequence(&self, context: &str, what: &[String], why: &[String], with_text: bool) -> TokenSequence {
        self.vocab
            .training_sequence(context, self.num_patches(), what, why, with_text)
    }
}

/// Predicted attention map: `sigmoid(logits)`.
pub fn predicted_map(logits: &Array2<f64>) -> SaliencyMap {
    SaliencyMap::new(logits.mapv(|x| 1.0 / (1.0 + (-x).exp()))).expect("sigmoid output lies in [0, 1]")
}

/// Segment tag of every row in a padded batch.
pub fn padded_segments(items: &[BatchItem], lmax: usize) -> Vec<Segment> {
    let mut out = Vec::with_capacity(items.len() * lmax);
    for it in items {
        out.extend(&it.seq.segments);
        out.extend(std::iter::repeat_n(Segment::Pad, lmax - it.seq.len()));
    }
    out
}
