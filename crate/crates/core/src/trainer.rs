//! Joint training of map and text objectives with gradient accumulation, AdamW,
//! warmup/decay learning rate, ablation switches, JSONL step logs and resumable
//! checkpoints.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::Tape;
use crate::data_model::{load_image, load_saliency_map, AnnotationRecord, DataError, RgbImage, SaliencyMap};
use crate::losses::{map_loss, text_loss_sums, total_loss, LossError, LossReport, LossWeights, TextLossSums, TokenCounts};
use crate::metrics::{cc_metric, cider, kldiv_metric, tokenize, MetricError, Prediction};
use crate::model::{
    load_checkpoint, predicted_map, save_checkpoint, BatchItem, Dtype, ForwardOptions, FreezeOptions, GenerateOptions,
    LladaModel, ModelError, ParamSet, TokenSequence, Trainable,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} ({component}); last checkpoint: {last_checkpoint:?}")]
    NonFiniteLoss {
        step: usize,
        component: String,
        last_checkpoint: Option<PathBuf>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Linear,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub enable_where: bool,
    pub enable_what: bool,
    pub enable_why: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            enable_where: true,
            enable_what: true,
            enable_why: true,
        }
    }
}

impl Ablation {
    pub fn text(&self) -> bool {
        self.enable_what || self.enable_why
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreezeConfig {
    pub visual_encoder: bool,
}

impl Default for FreezeConfig {
    fn default() -> Self {
        Self { visual_encoder: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_iters: usize,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub max_steps: usize,
    pub ablation: Ablation,
    pub freeze: FreezeConfig,
    pub loss_weights: LossWeights,
    /// Write a checkpoint every k steps (and at the end) when an output dir is set.
    pub checkpoint_every: Option<usize>,
    /// Samples per batch-norm statistics group; defaults to `batch_size`.
    pub bn_group_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            warmup_iters: 100,
            schedule: Schedule::Linear,
            batch_size: 8,
            grad_accum_steps: 5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: None,
            seed: 0,
            max_steps: 1000,
            ablation: Ablation::default(),
            freeze: FreezeConfig::default(),
            loss_weights: LossWeights::default(),
            checkpoint_every: None,
            bn_group_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Config(m.into()));
        let a = &self.ablation;
        if !(a.enable_where || a.enable_what || a.enable_why) {
            return err("at least one of enable_where / enable_what / enable_why must be set");
        }
        if self.batch_size == 0 || self.grad_accum_steps == 0 {
            return err("batch_size and grad_accum_steps must be positive");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return err("lr and weight_decay must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return err("betas must be in [0,1) and adam_eps positive");
        }
        if self.bn_group_size == Some(0) || self.checkpoint_every == Some(0) {
            return err("bn_group_size and checkpoint_every must be positive when set");
        }
        let w = &self.loss_weights;
        for v in [w.lambda_map, w.lambda_txt, w.lambda_bce, w.lambda_kl, w.lambda_what, w.lambda_why] {
            if !(v.is_finite() && v >= 0.0) {
                return err("loss weights must be finite and non-negative");
            }
        }
        Ok(())
    }

    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.grad_accum_steps
    }

    /// Loss weights with disabled tasks zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.loss_weights;
        if !self.ablation.enable_where {
            w.lambda_map = 0.0;
        }
        if !self.ablation.enable_what {
            w.lambda_what = 0.0;
        }
        if !self.ablation.enable_why {
            w.lambda_why = 0.0;
        }
        w
    }
}

/// Linear warmup from 0 to `lr` over `warmup_iters`, then decay to 0 at `max_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    if step < cfg.warmup_iters {
        return cfg.lr * step as f64 / cfg.warmup_iters as f64;
    }
    if cfg.max_steps <= cfg.warmup_iters {
        return cfg.lr;
    }
    let frac = ((step - cfg.warmup_iters) as f64 / (cfg.max_steps - cfg.warmup_iters) as f64).min(1.0);
    match cfg.schedule {
        Schedule::Linear => cfg.lr * (1.0 - frac),
        Schedule::Cosine => cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
    }
}

/// One training example in memory.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub id: String,
    pub image: RgbImage,
    pub map: SaliencyMap,
    pub context: String,
    pub what: Vec<String>,
    pub why: Vec<String>,
}

/// Loads frames and maps of `records` (relative to `root`), resized to the model input.
pub fn load_samples(records: &[AnnotationRecord], root: &Path, height: usize, width: usize) -> Result<Vec<TrainSample>, TrainError> {
    records
        .iter()
        .map(|r| {
            let mut image = load_image(root.join(&r.frame_path))?;
            if (image.height(), image.width()) != (height, width) {
                image = image.resize(height, width);
            }
            let mut map = load_saliency_map(root.join(&r.map_path))?;
            if map.shape() != (height, width) {
                map = map.resize(height, width);
            }
            Ok(TrainSample {
                id: r.id.clone(),
                image,
                map,
                context: r.context.describe(),
                what: r.what.clone(),
                why: r.why.clone(),
            })
        })
        .collect()
}

/// Position in the seeded sample stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub epoch: u64,
    pub pos: usize,
}

/// Epoch-wise permutations drawn from `ChaCha8(seed)` on stream `epoch`.
#[derive(Debug, Clone)]
pub struct DataOrder {
    n: usize,
    seed: u64,
    cursor: Cursor,
    perm: Vec<usize>,
}

impl DataOrder {
    pub fn new(n: usize, seed: u64, cursor: Cursor) -> Self {
        let mut o = Self {
            n,
            seed,
            cursor,
            perm: Vec::new(),
        };
        o.perm = o.permutation(cursor.epoch);
        o
    }

    fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut p: Vec<usize> = (0..self.n).collect();
        p.shuffle(&mut rng);
        p
    }

    pub fn cursor(&self) -> Cursor {
        self.cursor
    }

    pub fn next_index(&mut self) -> usize {
        if self.cursor.pos >= self.n {
            self.cursor = Cursor {
                epoch: self.cursor.epoch + 1,
                pos: 0,
            };
            self.perm = self.permutation(self.cursor.epoch);
        }
        let i = self.perm[self.cursor.pos];
        self.cursor.pos += 1;
        i
    }

    pub fn take(&mut self, k: usize) -> Vec<usize> {
        (0..k).map(|_| self.next_index()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub report: LossReport,
    pub weights: LossWeights,
    pub sample_ids: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainState {
    step: usize,
    cursor: Cursor,
    train_config: TrainConfig,
}

pub struct Trainer<'a> {
    model: LladaModel,
    cfg: TrainConfig,
    data: &'a [TrainSample],
    seqs: Vec<TokenSequence>,
    mask: Vec<Trainable>,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: usize,
    order: DataOrder,
    out_dir: Option<PathBuf>,
    last_checkpoint: Option<PathBuf>,
}

fn is_vector(a: &Array2<f64>) -> bool {
    a.nrows() == 1
}

impl<'a> Trainer<'a> {
    pub fn new(model: LladaModel, cfg: TrainConfig, data: &'a [TrainSample]) -> Result<Self, TrainError> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(TrainError::Config("training data is empty".into()));
        }
        let with_text = cfg.ablation.text();
        let mut seqs = Vec::with_capacity(data.len());
        for s in data {
            let seq = model.training_sequence(&s.context, &s.what, &s.why, with_text);
            if seq.len() > model.config().max_seq_len {
                return Err(ModelError::Length {
                    len: seq.len(),
                    max: model.config().max_seq_len,
                }
                .into());
            }
            seqs.push(seq);
        }
        let mask = model.trainable(&FreezeOptions {
            visual_encoder: cfg.freeze.visual_encoder,
            enable_where: cfg.ablation.enable_where,
        });
        let zeros: Vec<Array2<f64>> = (0..model.params().len())
            .map(|i| Array2::zeros(model.params().value(i).raw_dim()))
            .collect();
        Ok(Self {
            order: DataOrder::new(data.len(), cfg.seed, Cursor::default()),
            model,
            data,
            seqs,
            mask,
            m: zeros.clone(),
            v: zeros,
            step: 0,
            cfg,
            out_dir: None,
            last_checkpoint: None,
        })
    }

    /// Continues from a training checkpoint written by [`Trainer::save`].
    pub fn resume(path: &Path, data: &'a [TrainSample]) -> Result<Self, TrainError> {
        let ck = load_checkpoint(path, None)?;
        if ck.dtype != Dtype::F64 {
            return Err(TrainError::Config("training checkpoints must be f64".into()));
        }
        let state: TrainState = serde_json::from_value(ck.metadata)?;
        let mut t = Trainer::new(ck.model, state.train_config, data)?;
        for i in 0..t.model.params().len() {
            let name = t.model.params().name(i).to_string();
            let (Some(m), Some(v)) = (ck.extra.get(&format!("adam.m.{name}")), ck.extra.get(&format!("adam.v.{name}"))) else {
                return Err(TrainError::Config(format!("checkpoint lacks optimizer state for `{name}`")));
            };
            t.m[i] = m.clone();
            t.v[i] = v.clone();
        }
        t.step = state.step;
        t.order = DataOrder::new(data.len(), t.cfg.seed, state.cursor);
        t.last_checkpoint = Some(path.to_path_buf());
        Ok(t)
    }

    /// Directory for `log.jsonl` and `ckpt-NNNNNN.{json,bin}`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Result<Self, TrainError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        self.out_dir = Some(dir);
        Ok(self)
    }

    pub fn model(&self) -> &LladaModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut LladaModel {
        &mut self.model
    }

    pub fn into_model(self) -> LladaModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn set_max_steps(&mut self, max_steps: usize) {
        self.cfg.max_steps = max_steps;
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn trainable_mask(&self) -> &[Trainable] {
        &self.mask
    }

    pub fn last_checkpoint(&self) -> Option<&Path> {
        self.last_checkpoint.as_deref()
    }

    /// Loss and gradients of one effective batch, without updating weights.
    pub fn compute_gradients(&mut self, indices: &[usize]) -> Result<(LossReport, Vec<Option<Array2<f64>>>), TrainError> {
        let w = self.cfg.effective_weights();
        let where_on = self.cfg.ablation.enable_where;
        let n_eff = indices.len() as f64;
        let mut totals = TokenCounts::default();
        for &i in indices {
            let (a, b) = self.seqs[i].span_counts();
            totals.what += a;
            totals.why += b;
        }
        let coef = |weight: f64, count: usize| if count == 0 || weight == 0.0 { 0.0 } else { weight / count as f64 };
        let text_coef = (coef(w.what(), totals.what), coef(w.why(), totals.why));
        let need_text_grad = text_coef.0 != 0.0 || text_coef.1 != 0.0;
        let grad_mask: Vec<bool> = self.mask.iter().map(|t| !t.is_frozen()).collect();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.model.params().len()];
        let (mut bce_sum, mut kl_sum) = (0.0, 0.0);
        let mut text = TextLossSums::default();
        let (h, wd) = (self.model.config().image_height, self.model.config().image_width);
        let hw = h * wd;

        for chunk in indices.chunks(self.cfg.batch_size) {
            let items: Vec<BatchItem> = chunk
                .iter()
                .map(|&i| BatchItem {
                    image: &self.data[i].image,
                    seq: &self.seqs[i],
                })
                .collect();
            let opts = ForwardOptions {
                train: true,
                decode_map: where_on,
                bn_group_samples: Some(self.cfg.bn_group_size.unwrap_or(self.cfg.batch_size)),
                zero_cross_attention: false,
            };
            let mut tape = Tape::new();
            let fwd = self.model.forward_batch(&mut tape, &items, &opts, &grad_mask)?;
            let mut seeds = Vec::new();

            let logits = tape.value(fwd.text_logits);
            let mut text_grad = need_text_grad.then(|| Array2::zeros(logits.raw_dim()));
            for (b, it) in items.iter().enumerate() {
                let rows = s![b * fwd.lmax..b * fwd.lmax + it.seq.len(), ..];
                let (sums, g) = text_loss_sums(
                    logits.slice(rows),
                    &it.seq.ids,
                    &it.seq.segments,
                    need_text_grad.then_some(text_coef),
                )?;
                text.add(&sums);
                if let (Some(tg), Some(g)) = (text_grad.as_mut(), g) {
                    tg.slice_mut(rows).assign(&g);
                }
            }
            if let Some(tg) = text_grad {
                seeds.push((fwd.text_logits, tg));
            }

            if let Some(map_var) = fwd.map_logits {
                let all = tape.value(map_var);
                let mut g = Array2::zeros(all.raw_dim());
                for (b, &i) in chunk.iter().enumerate() {
                    let logits = self.model.map_grid(&all.slice(s![b * hw..(b + 1) * hw, ..]).to_owned());
                    let ml = map_loss(&logits, &self.data[i].map)?;
                    bce_sum += ml.bce;
                    kl_sum += ml.kl;
                    let d = (&ml.d_bce * w.bce() + &ml.d_kl * w.kl()) / n_eff;
                    g.slice_mut(s![b * hw..(b + 1) * hw, ..])
                        .assign(&d.into_shape_with_order((hw, 1)).expect("H·W entries"));
                }
                seeds.push((map_var, g));
            }

            if !seeds.is_empty() {
                let mut back = tape.backward(&seeds);
                for (pid, var) in fwd.params.iter().enumerate() {
                    let Some(var) = var else { continue };
                    if let Some(g) = back.take(*var) {
                        match &mut grads[pid] {
                            Some(acc) => *acc += &g,
                            slot => *slot = Some(g),
                        }
                    }
                }
            }
            if where_on {
                self.model.update_running_stats(&fwd, chunk.len() * self.model.num_patches());
            }
        }
        let (txt_what, txt_why) = text.means();
        let map = if where_on { (bce_sum / n_eff, kl_sum / n_eff) } else { (0.0, 0.0) };
        let report = total_loss(map, (txt_what, txt_why), text.counts, &w).map_err(|e| match e {
            LossError::NonFinite(c) => TrainError::NonFiniteLoss {
                step: self.step,
                component: c.to_string(),
                last_checkpoint: self.last_checkpoint.clone(),
            },
            other => other.into(),
        })?;
        Ok((report, grads))
    }

    fn apply_update(&mut self, mut grads: Vec<Option<Array2<f64>>>, lr: f64) -> Result<(), TrainError> {
        if grads.iter().flatten().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(TrainError::NonFiniteLoss {
                step: self.step,
                component: "gradient".into(),
                last_checkpoint: self.last_checkpoint.clone(),
            });
        }
        if let Some(max_norm) = self.cfg.grad_clip {
            let norm = grads
                .iter()
                .flatten()
                .map(|g| g.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > max_norm {
                let k = max_norm / norm;
                for g in grads.iter_mut().flatten() {
                    *g *= k;
                }
            }
        }
        let t = (self.step + 1) as i32;
        let (b1, b2, eps, wd) = (self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps, self.cfg.weight_decay);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (i, mask) in self.mask.iter().enumerate() {
            let rows: Vec<usize> = match mask {
                Trainable::Frozen => continue,
                Trainable::All => (0..self.model.params().value(i).nrows()).collect(),
                Trainable::Rows(r) => r.clone(),
            };
            let decay = if is_vector(self.model.params().value(i)) { 0.0 } else { wd };
            let g = grads[i].take();
            let p = self.model.params_mut().value_mut(i);
            for r in rows {
                for c in 0..p.ncols() {
                    let gv = g.as_ref().map_or(0.0, |g| g[[r, c]]);
                    let m = &mut self.m[i][[r, c]];
                    *m = b1 * *m + (1.0 - b1) * gv;
                    let v = &mut self.v[i][[r, c]];
                    *v = b2 * *v + (1.0 - b2) * gv * gv;
                    let mhat = self.m[i][[r, c]] / bc1;
                    let vhat = self.v[i][[r, c]] / bc2;
                    p[[r, c]] -= lr * (mhat / (vhat.sqrt() + eps) + decay * p[[r, c]]);
                }
            }
        }
        Ok(())
    }

    /// One optimizer step over `batch_size × grad_accum_steps` samples.
    pub fn train_step(&mut self) -> Result<StepLog, TrainError> {
        let indices = self.order.take(self.cfg.effective_batch());
        let (report, grads) = self.compute_gradients(&indices)?;
        let lr = lr_at(self.step, &self.cfg);
        self.apply_update(grads, lr)?;
        let log = StepLog {
            step: self.step,
            lr,
            report,
            weights: self.cfg.effective_weights(),
            sample_ids: indices.iter().map(|&i| self.data[i].id.clone()).collect(),
        };
        self.step += 1;
        if let Some(dir) = &self.out_dir {
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join("log.jsonl"))?;
            writeln!(f, "{}", serde_json::to_string(&log)?)?;
        }
        Ok(log)
    }

    /// Trains until `max_steps`, checkpointing per `checkpoint_every` and at the end.
    pub fn run(&mut self) -> Result<Vec<StepLog>, TrainError> {
        let mut logs = Vec::new();
        while self.step < self.cfg.max_steps {
            logs.push(self.train_step()?);
            let due = self.cfg.checkpoint_every.is_some_and(|k| self.step.is_multiple_of(k));
            if self.out_dir.is_some() && (due || self.step == self.cfg.max_steps) {
                let path = self.checkpoint_path(self.step).expect("output dir set");
                self.save(&path)?;
            }
        }
        Ok(logs)
    }

    pub fn checkpoint_path(&self, step: usize) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|d| d.join(format!("ckpt-{step:06}.json")))
    }

    /// Writes an f64 checkpoint with optimizer moments and data cursor.
    pub fn save(&mut self, path: &Path) -> Result<(), TrainError> {
        let mut extra = ParamSet::default();
        for i in 0..self.model.params().len() {
            let name = self.model.params().name(i).to_string();
            extra.insert(format!("adam.m.{name}"), self.m[i].clone());
            extra.insert(format!("adam.v.{name}"), self.v[i].clone());
        }
        let state = TrainState {
            step: self.step,
            cursor: self.order.cursor(),
            train_config: self.cfg.clone(),
        };
        save_checkpoint(path, &self.model, Dtype::F64, &extra, serde_json::to_value(&state)?)?;
        self.last_checkpoint = Some(path.to_path_buf());
        Ok(())
    }
}

/// Trains `model` on `data` and returns it with the step logs.
pub fn train(
    model: LladaModel,
    data: &[TrainSample],
    cfg: TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(LladaModel, Vec<StepLog>), TrainError> {
    let mut t = Trainer::new(model, cfg, data)?;
    if let Some(d) = out_dir {
        t = t.with_output(d)?;
    }
    let logs = t.run()?;
    Ok((t.into_model(), logs))
}

/// Map logits for a sample with `[ATTN]` placed directly after the context. Causal
/// masking makes this identical to the map of any generated answer that starts with
/// `[ATTN]`.
pub fn predict_map_logits(model: &LladaModel, image: &RgbImage, context: &str) -> Result<Array2<f64>, ModelError> {
    let seq = model.training_sequence(context, &[], &[], false);
    let out = model.forward(image, &seq)?;
    Ok(out.map_logits.expect("[ATTN] present"))
}

/// Prediction for one sample: the map always, text via generation when `text` is set.
/// A generation without `[ATTN]` falls back to the forced-`[ATTN]` map and empty text.
pub fn predict(model: &LladaModel, sample: &TrainSample, text: bool, gen: &GenerateOptions) -> Result<Prediction, ModelError> {
    let mut what = Vec::new();
    let mut why = Vec::new();
    let mut logits = None;
    if text {
        match model.generate(&sample.image, &sample.context, gen) {
            Ok(g) => {
                what = g.what;
                why = g.why;
                logits = Some(g.map_logits);
            }
            Err(ModelError::MissingAttnToken | ModelError::MultipleAttnToken(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let logits = match logits {
        Some(l) => l,
        None => predict_map_logits(model, &sample.image, &sample.context)?,
    };
    Ok(Prediction {
        id: sample.id.clone(),
        map: predicted_map(&logits),
        what,
        why,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationScores {
    pub kldiv: f64,
    pub cc: f64,
    /// Corpus CIDEr of `what ; why` against the single reference; `None` without text.
    pub cider: Option<f64>,
    /// Samples whose generated what and why equal the references.
    pub exact_text: usize,
    pub samples: usize,
}

fn joined_tokens(what: &[String], why: &[String]) -> Vec<String> {
    let mut t = tokenize(&what.join(" ; "));
    t.extend(tokenize(&why.join(" ; ")));
    t
}

/// Map KLdiv / CC and, with `text`, greedy-generation CIDEr over `samples`.
pub fn validate(
    model: &LladaModel,
    samples: &[TrainSample],
    text: bool,
    gen: &GenerateOptions,
) -> Result<ValidationScores, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Config("validation set is empty".into()));
    }
    let (mut kl, mut cc, mut exact) = (0.0, 0.0, 0);
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for s in samples {
        let p = predict(model, s, text, gen)?;
        kl += kldiv_metric(&p.map, &s.map)?;
        cc += match cc_metric(&p.map, &s.map) {
            Err(MetricError::ZeroVariance) => 0.0,
            r => r?,
        };
        if text {
            exact += usize::from(p.what == s.what && p.why == s.why);
            cands.push(joined_tokens(&p.what, &p.why));
            refs.push(vec![joined_tokens(&s.what, &s.why)]);
        }
    }
    let n = samples.len() as f64;
    let cider = if text && samples.len() >= 2 {
        Some(cider(&cands, &refs)?.mean)
    } else {
        None
    };
    Ok(ValidationScores {
        kldiv: kl / n,
        cc: cc / n,
        cider,
        exact_text: exact,
        samples: samples.len(),
    })
}
