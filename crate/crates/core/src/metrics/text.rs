//! Caption-style text metrics over a shared tokenizer: BLEU, METEOR (exact-match
//! variant), ROUGE-L and CIDEr.

use std::collections::HashMap;

use super::MetricError;

/// Lowercases and splits on anything that is not alphanumeric; punctuation is dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the candidate's n-gram total.
pub fn modified_precision(candidate: &[String], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let mut max_ref: HashMap<&[String], usize> = HashMap::new();
    for r in references {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Sentence BLEU with brevity penalty (closest reference length, shorter on ties).
/// Orders with zero matches are smoothed by adding one to numerator and denominator.
pub fn bleu(candidate: &[String], references: &[Vec<String>], max_n: usize) -> Result<f64, MetricError> {
    if candidate.is_empty() {
        return Err(MetricError::EmptyCandidate);
    }
    if max_n == 0 {
        return Err(MetricError::InvalidArgument("max_n must be >= 1".into()));
    }
    if references.is_empty() {
        return Err(MetricError::InvalidArgument("at least one reference required".into()));
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (num, den) = modified_precision(candidate, references, n);
        let p = if num == 0 {
            1.0 / (den as f64 + 1.0)
        } else {
            num as f64 / den as f64
        };
        log_sum += p.ln() / max_n as f64;
    }
    let c = candidate.len() as f64;
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| ((len as i64 - candidate.len() as i64).abs(), len))
        .unwrap() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok((bp * log_sum.exp()).clamp(0.0, 1.0))
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS-based F-measure, recall weighted by `ROUGE_BETA`.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    ((1.0 + b2) * p * r / (r + b2 * p)).clamp(0.0, 1.0)
}

/// Alignment statistics behind a METEOR score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeteorAlignment {
    pub matches: usize,
    pub chunks: usize,
}

const METEOR_SEARCH_BUDGET: usize = 200_000;

struct ChunkSearch<'a> {
    cand: &'a [String],
    positions: Vec<Vec<usize>>,
    used: Vec<bool>,
    // Unmatched candidate slots still allowed per word id.
    slack: Vec<usize>,
    word_of: Vec<usize>,
    best: usize,
    nodes: usize,
}

impl ChunkSearch<'_> {
    fn descend(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        if chunks >= self.best {
            return;
        }
        self.nodes += 1;
        if i == self.cand.len() {
            self.best = chunks;
            return;
        }
        if self.nodes > METEOR_SEARCH_BUDGET && self.best != usize::MAX {
            return;
        }
        let w = self.word_of[i];
        // Try a continuation of the current chunk first.
        let mut options: Vec<usize> = self.positions[i]
            .iter()
            .copied()
            .filter(|&j| !self.used[j])
            .collect();
        if let Some(p) = prev {
            if let Some(k) = options.iter().position(|&j| j == p + 1) {
                options.swap(0, k);
            }
        }
        for j in options {
            self.used[j] = true;
            let extends = prev.is_some_and(|p| p + 1 == j);
            self.descend(i + 1, Some(j), chunks + usize::from(!extends));
            self.used[j] = false;
        }
        if self.slack[w] > 0 {
            self.slack[w] -= 1;
            self.descend(i + 1, None, chunks);
            self.slack[w] += 1;
        }
    }
}

/// Exact-match unigram alignment with the maximum number of matches and, among those,
/// the fewest chunks. Branch-and-bound; exact unless the node budget runs out, in
/// which case the best alignment found so far is returned.
pub fn meteor_alignment(candidate: &[String], reference: &[String]) -> MeteorAlignment {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut word_of = Vec::with_capacity(candidate.len());
    for t in candidate {
        let next = ids.len();
        word_of.push(*ids.entry(t.as_str()).or_insert(next));
    }
    let mut cand_count = vec![0usize; ids.len()];
    for &w in &word_of {
        cand_count[w] += 1;
    }
    let mut ref_count = vec![0usize; ids.len()];
    for t in reference {
        if let Some(&w) = ids.get(t.as_str()) {
            ref_count[w] += 1;
        }
    }
    let matches: usize = cand_count.iter().zip(&ref_count).map(|(c, r)| c.min(r)).sum();
    if matches == 0 {
        return MeteorAlignment {
            matches: 0,
            chunks: 0,
        };
    }
    let slack = cand_count
        .iter()
        .zip(&ref_count)
        .map(|(c, r)| c - c.min(r))
        .collect();
    let positions = candidate
        .iter()
        .map(|t| {
            reference
                .iter()
                .enumerate()
                .filter(|(_, r)| *r == t)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    let mut search = ChunkSearch {
        cand: candidate,
        positions,
        used: vec![false; reference.len()],
        slack,
        word_of,
        best: usize::MAX,
        nodes: 0,
    };
    search.descend(0, None, 0);
    MeteorAlignment {
        matches,
        chunks: search.best,
    }
}

/// METEOR from an alignment: `F_mean = 10PR/(R+9P)`, penalty `0.5 (chunks/matches)^3`.
pub fn meteor_from_alignment(al: MeteorAlignment, cand_len: usize, ref_len: usize) -> f64 {
    if al.matches == 0 || cand_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let m = al.matches as f64;
    let p = m / cand_len as f64;
    let r = m / ref_len as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (al.chunks as f64 / m).powi(3);
    (f_mean * (1.0 - penalty)).clamp(0.0, 1.0)
}

/// METEOR restricted to exact unigram matches (no stemming or synonyms).
pub fn meteor_simplified(candidate: &[String], reference: &[String]) -> f64 {
    let al = meteor_alignment(candidate, reference);
    meteor_from_alignment(al, candidate.len(), reference.len())
}

pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SCALE: f64 = 10.0;

/// Corpus-level CIDEr result.
#[derive(Debug, Clone, PartialEq)]
pub struct CiderScores {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

type NgramVec<'a> = HashMap<&'a [String], f64>;

fn tfidf<'a>(tokens: &'a [String], n: usize, df: &HashMap<&[String], f64>, log_docs: f64) -> (NgramVec<'a>, f64) {
    let mut vec: NgramVec = HashMap::new();
    for (g, c) in ngram_counts(tokens, n) {
        let d = df.get(g).copied().unwrap_or(0.0).max(1.0);
        vec.insert(g, c as f64 * (log_docs - d.ln()));
    }
    let norm = vec.values().map(|v| v * v).sum::<f64>().sqrt();
    (vec, norm)
}

/// TF-IDF n-gram cosine similarity averaged over n = 1..4 and references, times 10.
/// Document frequencies come from the reference corpus (one document per sample).
pub fn cider(candidates: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<CiderScores, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::InvalidArgument(format!(
            "{} candidates vs {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.len() < 2 {
        return Err(MetricError::CorpusTooSmall(candidates.len()));
    }
    let log_docs = (references.len() as f64).ln();
    let mut per_sample = vec![0.0; candidates.len()];
    for n in 1..=CIDER_MAX_N {
        let mut df: HashMap<&[String], f64> = HashMap::new();
        for refs in references {
            let mut seen = std::collections::HashSet::new();
            for r in refs {
                for g in ngram_counts(r, n).into_keys() {
                    seen.insert(g);
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        for (i, (cand, refs)) in candidates.iter().zip(references).enumerate() {
            if refs.is_empty() {
                continue;
            }
            let (cv, cn) = tfidf(cand, n, &df, log_docs);
            let mut sim = 0.0;
            for r in refs {
                let (rv, rn) = tfidf(r, n, &df, log_docs);
                if cn > 0.0 && rn > 0.0 {
                    let dot: f64 = cv
                        .iter()
                        .filter_map(|(g, a)| rv.get(g).map(|b| a * b))
                        .sum();
                    sim += dot / (cn * rn);
                }
            }
            per_sample[i] += sim / refs.len() as f64 / CIDER_MAX_N as f64;
        }
    }
    for s in per_sample.iter_mut() {
        *s *= CIDER_SCALE;
    }
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(CiderScores { per_sample, mean })
}
