//! Toy tokenizer, vocabulary with special tokens, and the model's input layout.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
/// Placeholder id at vision positions; its embedding is replaced by the visual tokens.
pub const IMG: usize = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<img>"];
pub const ATTN_TOKEN: &str = "[ATTN]";

/// Instruction given to the model. Unlike the annotation prompt it carries no
/// sentence about an attention overlay.
pub const MODEL_PROMPT: &str =
    "You are driving. Predict where you look, what you attend to and why.";
pub const WHAT_MARKER: &str = "what";
pub const WHY_MARKER: &str = "why";
pub const FIELD_SEP: &str = ":";
pub const ITEM_SEP: &str = ";";

/// Lowercased words and single punctuation characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Item tokens with the answer-structure separators removed.
fn item_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t != FIELD_SEP && t != ITEM_SEP)
        .collect()
}

/// Sorted base vocabulary covering `texts`, the model prompt and the answer markers.
pub fn build_base_vocab<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut set: BTreeSet<String> = tokenize(MODEL_PROMPT).into_iter().collect();
    for m in [WHAT_MARKER, WHY_MARKER, FIELD_SEP, ITEM_SEP] {
        set.insert(m.to_string());
    }
    for t in texts {
        set.extend(tokenize(t));
    }
    set.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Prompt,
    Vision,
    Context,
    What,
    Why,
    /// Answer position without a span label; rejected by the text loss.
    Answer,
    Pad,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub segments: Vec<Segment>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn push(&mut self, id: usize, seg: Segment) {
        self.ids.push(id);
        self.segments.push(seg);
    }

    /// Positions holding `id` outside the prompt/vision/context prefix.
    pub fn answer_positions_of(&self, id: usize) -> Vec<usize> {
        self.ids
            .iter()
            .zip(&self.segments)
            .enumerate()
            .filter(|(_, (&t, s))| t == id && !matches!(s, Segment::Prompt | Segment::Vision | Segment::Context))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn vision_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.segments[i] == Segment::Vision).collect()
    }

    /// Number of loss-bearing target tokens per span: `(what, why)`.
    pub fn span_counts(&self) -> (usize, usize) {
        let what = self.segments.iter().skip(1).filter(|s| **s == Segment::What).count();
        let why = self.segments.iter().skip(1).filter(|s| **s == Segment::Why).count();
        (what, why)
    }
}

/// Special tokens, base words and the trailing `[ATTN]` token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(base: &[String]) -> Result<Self, ModelError> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(base.iter().cloned());
        tokens.push(ATTN_TOKEN.to_string());
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ModelError::Config(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        for m in [WHAT_MARKER, WHY_MARKER, FIELD_SEP, ITEM_SEP] {
            if !index.contains_key(m) {
                return Err(ModelError::Config(format!("vocabulary lacks answer marker `{m}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn attn_id(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    /// `[BOS] prompt [IMG × n_vision] context`
    pub fn prefix(&self, context: &str, n_vision: usize) -> TokenSequence {
        let mut seq = TokenSequence::default();
        seq.push(BOS, Segment::Prompt);
        for id in self.encode(MODEL_PROMPT) {
            seq.push(id, Segment::Prompt);
        }
        for _ in 0..n_vision {
            seq.push(IMG, Segment::Vision);
        }
        for id in self.encode(context) {
            seq.push(id, Segment::Context);
        }
        seq
    }

    /// Appends `[ATTN] what : a ; b why : c ; d [EOS]`. With `text` false the answer
    /// stops after `[ATTN]`.
    pub fn append_answer(&self, seq: &mut TokenSequence, what: &[String], why: &[String], text: bool) {
        seq.push(self.attn_id(), Segment::What);
        if !text {
            return;
        }
        for (marker, items, seg) in [(WHAT_MARKER, what, Segment::What), (WHY_MARKER, why, Segment::Why)] {
            seq.push(self.id(marker), seg);
            seq.push(self.id(FIELD_SEP), seg);
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    seq.push(self.id(ITEM_SEP), seg);
                }
                for t in item_tokens(item) {
                    seq.push(self.id(&t), seg);
                }
            }
        }
        seq.push(EOS, Segment::Why);
    }

    pub fn training_sequence(&self, context: &str, n_vision: usize, what: &[String], why: &[String], text: bool) -> TokenSequence {
        let mut seq = self.prefix(context, n_vision);
        self.append_answer(&mut seq, what, why, text);
        seq
    }

    /// Splits generated answer ids (starting after `[ATTN]`) into what/why items.
    /// Returns `None` when the marker structure is broken.
    pub fn parse_answer(&self, ids: &[usize]) -> Option<(Vec<String>, Vec<String>)> {
        let ids: Vec<usize> = ids.iter().copied().take_while(|&i| i != EOS).collect();
        let (what_id, why_id, sep) = (self.id(WHAT_MARKER), self.id(WHY_MARKER), self.id(FIELD_SEP));
        if ids.len() < 4 || ids[0] != what_id || ids[1] != sep {
            return None;
        }
        let split = (2..ids.len() - 1).find(|&i| ids[i] == why_id && ids[i + 1] == sep)?;
        let items = |part: &[usize]| -> Vec<String> {
            part.split(|&i| i == self.id(ITEM_SEP))
                .map(|p| self.decode(p))
                .filter(|s| !s.is_empty())
                .collect()
        };
        Some((items(&ids[2..split]), items(&ids[split + 2..])))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Items as the model would reproduce them: tokenized and re-joined with spaces.
pub fn canonical_item(text: &str) -> String {
    item_tokens(text).join(" ")
}
