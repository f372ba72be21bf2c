use ndarray::{Array1, Array2, ArrayView1};

use super::network::{BatchItem, ForwardOptions, LladaModel};
use super::tokenizer::{Segment, TokenSequence, EOS};
use super::ModelError;
use crate::autograd::Tape;
use crate::data_model::RgbImage;

pub const MAX_BEAM_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateOptions {
    pub max_new_tokens: usize,
    /// 1 is greedy decoding.
    pub beam_width: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            max_new_tokens: 48,
            beam_width: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub sequence: TokenSequence,
    /// Generated ids after `[ATTN]`, up to and excluding EOS.
    pub answer_ids: Vec<usize>,
    pub what: Vec<String>,
    pub why: Vec<String>,
    /// `[ATTN]` came first and the what/why markers parsed.
    pub well_formed: bool,
    pub map_logits: Array2<f64>,
    pub attn_embedding: Array1<f64>,
}

fn log_softmax(row: ArrayView1<f64>) -> Vec<f64> {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|&x| x - lse).collect()
}

#[derive(Clone)]
struct Beam {
    seq: TokenSequence,
    score: f64,
    done: bool,
}

impl LladaModel {
    fn next_token_logprobs(&self, image: &RgbImage, seq: &TokenSequence) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let f = self.forward_batch(&mut tape, &[BatchItem { image, seq }], &ForwardOptions::default(), &[])?;
        let logits = tape.value(f.text_logits);
        Ok(log_softmax(logits.row(seq.len() - 1)))
    }

    /// Autoregressive answer for `context`, then the attention map decoded at the
    /// generated `[ATTN]`. Errors when the answer holds no or several `[ATTN]`.
    pub fn generate(&self, image: &RgbImage, context: &str, opts: &GenerateOptions) -> Result<Generation, ModelError> {
        if opts.beam_width == 0 || opts.beam_width > MAX_BEAM_WIDTH {
            return Err(ModelError::Config(format!("beam width must be in 1..={MAX_BEAM_WIDTH}")));
        }
        let prefix = self.vocab().prefix(context, self.num_patches());
        let limit = self.config().max_seq_len.min(prefix.len() + opts.max_new_tokens);
        if prefix.len() >= limit {
            return Err(ModelError::Length {
                len: prefix.len() + 1,
                max: limit,
            });
        }
        let mut beams = vec![Beam {
            seq: prefix,
            score: 0.0,
            done: false,
        }];
        while beams.iter().any(|b| !b.done) {
            let mut next = Vec::new();
            for beam in &beams {
                if beam.done {
                    next.push(beam.clone());
                    continue;
                }
                let lp = self.next_token_logprobs(image, &beam.seq)?;
                let mut order: Vec<usize> = (0..lp.len()).collect();
                order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
                for &tok in order.iter().take(opts.beam_width) {
                    let mut seq = beam.seq.clone();
                    seq.push(tok, Segment::Answer);
                    let done = tok == EOS || seq.len() >= limit;
                    next.push(Beam {
                        seq,
                        score: beam.score + lp[tok],
                        done,
                    });
                }
            }
            next.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.seq.ids.cmp(&b.seq.ids)));
            next.truncate(opts.beam_width);
            beams = next;
        }
        let best = beams.swap_remove(0).seq;
        let attn = self.attn_position(&best)?;
        let first_answer = best.segments.iter().position(|s| *s == Segment::Answer);
        let mut answer_ids: Vec<usize> = best.ids[attn + 1..].to_vec();
        if let Some(p) = answer_ids.iter().position(|&i| i == EOS) {
            answer_ids.truncate(p);
        }
        let parsed = self.vocab().parse_answer(&best.ids[attn + 1..]);
        let well_formed = parsed.is_some() && first_answer == Some(attn);
        let (what, why) = parsed.unwrap_or_default();
        let out = self.forward(image, &best)?;
        Ok(Generation {
            answer_ids,
            what,
            why,
            well_formed,
            map_logits: out.map_logits.expect("[ATTN] present"),
            attn_embedding: out.attn_embedding.expect("[ATTN] present"),
            sequence: best,
        })
    }
}
