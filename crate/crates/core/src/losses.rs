//! Training objectives: map loss (soft BCE + KL), per-span text cross-entropy and
//! their weighted total. Every term returns its analytic gradient with respect to
//! the logits.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_model::SaliencyMap;
use crate::model::Segment;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: logits {0}x{1} vs target {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("ground-truth map has no mass")]
    DegenerateMap,
    #[error("answer token at position {0} has no what/why span label")]
    Span(usize),
    #[error("non-finite loss component `{0}`")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_map: f64,
    pub lambda_txt: f64,
    pub lambda_bce: f64,
    pub lambda_kl: f64,
    pub lambda_what: f64,
    pub lambda_why: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_map: 2.0,
            lambda_txt: 1.0,
            lambda_bce: 1.0,
            lambda_kl: 0.1,
            lambda_what: 1.0,
            lambda_why: 1.0,
        }
    }
}

impl LossWeights {
    pub fn bce(&self) -> f64 {
        self.lambda_map * self.lambda_bce
    }

    pub fn kl(&self) -> f64 {
        self.lambda_map * self.lambda_kl
    }

    pub fn what(&self) -> f64 {
        self.lambda_txt * self.lambda_what
    }

    pub fn why(&self) -> f64 {
        self.lambda_txt * self.lambda_why
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub what: usize,
    pub why: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub map_bce: f64,
    pub map_kl: f64,
    pub txt_what: f64,
    pub txt_why: f64,
    pub token_counts: TokenCounts,
}

impl LossReport {
    /// The weighted sum of the components under `w`.
    pub fn recompose(&self, w: &LossWeights) -> f64 {
        w.lambda_map * (w.lambda_bce * self.map_bce + w.lambda_kl * self.map_kl)
            + w.lambda_txt * (w.lambda_what * self.txt_what + w.lambda_why * self.txt_why)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_shape(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<(), LossError> {
    if a.dim() != b.dim() {
        return Err(LossError::ShapeMismatch(a.nrows(), a.ncols(), b.nrows(), b.ncols()));
    }
    Ok(())
}

/// Mean binary cross-entropy between `sigmoid(logits)` and soft `targets`, with its
/// gradient `(sigmoid(x) − t) / n`.
pub fn soft_bce_with_logits(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Array2<f64>), LossError> {
    check_shape(logits, targets)?;
    let n = logits.len().max(1) as f64;
    let mut sum = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    ndarray::Zip::from(&mut grad)
        .and(logits)
        .and(targets)
        .for_each(|g, &x, &t| {
            sum += softplus(x) - t * x;
            *g = (sigmoid(x) - t) / n;
        });
    Ok((sum / n, grad))
}

/// `D(G ‖ softmax(logits))` with `G` the map normalized to a distribution, and its
/// gradient `softmax(logits) − G`.
pub fn kl_with_logits(logits: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<(f64, Array2<f64>), LossError> {
    check_shape(logits, gt)?;
    let mass: f64 = gt.sum();
    if !(mass > 0.0) {
        return Err(LossError::DegenerateMap);
    }
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    let mut kl = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    ndarray::Zip::from(&mut grad)
        .and(logits)
        .and(gt)
        .for_each(|g, &x, &m| {
            let gp = m / mass;
            let log_p = x - lse;
            if gp > 0.0 {
                kl += gp * (gp.ln() - log_p);
            }
            *g = log_p.exp() - gp;
        });
    Ok((kl.max(0.0), grad))
}

#[derive(Debug, Clone)]
pub struct MapLoss {
    pub bce: f64,
    pub kl: f64,
    pub d_bce: Array2<f64>,
    pub d_kl: Array2<f64>,
}

/// Map loss of one sample. The BCE target is the map scaled to unit max.
pub fn map_loss(logits: &Array2<f64>, gt: &SaliencyMap) -> Result<MapLoss, LossError> {
    let g = gt.values();
    check_shape(logits.view(), g.view())?;
    let max = gt.max();
    if !(max > 0.0) {
        return Err(LossError::DegenerateMap);
    }
    let target = g / max;
    let (bce, d_bce) = soft_bce_with_logits(logits.view(), target.view())?;
    let (kl, d_kl) = kl_with_logits(logits.view(), g.view())?;
    Ok(MapLoss { bce, kl, d_bce, d_kl })
}

/// Summed per-span cross-entropy of one or more stacked sequences.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TextLossSums {
    pub what_sum: f64,
    pub why_sum: f64,
    pub counts: TokenCounts,
}

impl TextLossSums {
    pub fn add(&mut self, o: &TextLossSums) {
        self.what_sum += o.what_sum;
        self.why_sum += o.why_sum;
        self.counts.what += o.counts.what;
        self.counts.why += o.counts.why;
    }

    /// Token means per span; an empty span contributes 0.
    pub fn means(&self) -> (f64, f64) {
        let mean = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
        (mean(self.what_sum, self.counts.what), mean(self.why_sum, self.counts.why))
    }
}

/// Cross-entropy sums over target positions. Row `i` of `logits` predicts `ids[i+1]`,
/// which is scored when its segment is `What` or `Why`. Prompt, vision, context and
/// padding targets are skipped; an unlabeled answer target is an error.
///
/// With `coef = Some((cw, cy))` the gradient of `cw · what_sum + cy · why_sum` with
/// respect to the logits is also returned.
pub fn text_loss_sums(
    logits: ArrayView2<f64>,
    ids: &[usize],
    segments: &[Segment],
    coef: Option<(f64, f64)>,
) -> Result<(TextLossSums, Option<Array2<f64>>), LossError> {
    if ids.len() != segments.len() || logits.nrows() != ids.len() {
        return Err(LossError::ShapeMismatch(logits.nrows(), logits.ncols(), ids.len(), segments.len()));
    }
    let mut sums = TextLossSums::default();
    let mut grad = coef.map(|_| Array2::zeros(logits.raw_dim()));
    for t in 1..ids.len() {
        let span_coef = match segments[t] {
            Segment::What => coef.map(|c| c.0),
            Segment::Why => coef.map(|c| c.1),
            Segment::Answer => return Err(LossError::Span(t)),
            _ => continue,
        };
        let row = logits.row(t - 1);
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        let ce = lse - row[ids[t]];
        if segments[t] == Segment::What {
            sums.what_sum += ce;
            sums.counts.what += 1;
        } else {
            sums.why_sum += ce;
            sums.counts.why += 1;
        }
        if let (Some(g), Some(c)) = (grad.as_mut(), span_coef) {
            let mut grow = g.row_mut(t - 1);
            for (gv, &x) in grow.iter_mut().zip(row.iter()) {
                *gv += c * (x - lse).exp();
            }
            grow[ids[t]] -= c;
        }
    }
    Ok((sums, grad))
}

/// Token-mean cross-entropy of the what and why spans of one sequence.
pub fn text_loss(logits: ArrayView2<f64>, ids: &[usize], segments: &[Segment]) -> Result<(f64, f64, TokenCounts), LossError> {
    let (sums, _) = text_loss_sums(logits, ids, segments, None)?;
    let (w, y) = sums.means();
    Ok((w, y, sums.counts))
}

/// Combines components into a [`LossReport`].
pub fn total_loss(
    map: (f64, f64),
    text: (f64, f64),
    token_counts: TokenCounts,
    w: &LossWeights,
) -> Result<LossReport, LossError> {
    for (name, v) in [("map_bce", map.0), ("map_kl", map.1), ("txt_what", text.0), ("txt_why", text.1)] {
        if !v.is_finite() {
            return Err(LossError::NonFinite(name));
        }
    }
    let mut r = LossReport {
        total: 0.0,
        map_bce: map.0,
        map_kl: map.1,
        txt_what: text.0,
        txt_why: text.1,
        token_counts,
    };
    r.total = r.recompose(w);
    if !r.total.is_finite() {
        return Err(LossError::NonFinite("total"));
    }
    Ok(r)
}

/// Row-wise softmax, for inspection and tests.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - max).exp());
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
    out
}
