//! Saliency-map metrics: KLdiv, CC, SIM, NSS, AUC-Judd and AUC-Borji.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MetricError;
use crate::data_model::{FixationSet, SaliencyMap};

pub const KL_EPS: f64 = 1e-12;

fn same_shape(a: &SaliencyMap, b: &SaliencyMap) -> Result<(), MetricError> {
    if a.shape() != b.shape() {
        let ((h1, w1), (h2, w2)) = (a.shape(), b.shape());
        return Err(MetricError::ShapeMismatch(h1, w1, h2, w2));
    }
    Ok(())
}

/// `Σ G log(G / (P + ε))` with both maps normalized to distributions.
pub fn kldiv_metric(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64, MetricError> {
    same_shape(pred, gt)?;
    let p = pred.normalize_to_distribution()?;
    let g = gt.normalize_to_distribution()?;
    Ok(g.values()
        .iter()
        .zip(p.values().iter())
        .filter(|(&g, _)| g > 0.0)
        .map(|(&g, &p)| g * (g / (p + KL_EPS)).ln())
        .sum())
}

fn mean_std(values: &ndarray::Array2<f64>) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.sum() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pearson correlation over all pixels.
pub fn cc_metric(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64, MetricError> {
    same_shape(pred, gt)?;
    let (mp, sp) = mean_std(pred.values());
    let (mg, sg) = mean_std(gt.values());
    if sp == 0.0 || sg == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let n = pred.values().len() as f64;
    let cov = pred
        .values()
        .iter()
        .zip(gt.values().iter())
        .map(|(p, g)| (p - mp) * (g - mg))
        .sum::<f64>()
        / n;
    Ok((cov / (sp * sg)).clamp(-1.0, 1.0))
}

/// Histogram intersection of the two normalized maps.
pub fn sim_metric(pred: &SaliencyMap, gt: &SaliencyMap) -> Result<f64, MetricError> {
    same_shape(pred, gt)?;
    let p = pred.normalize_to_distribution()?;
    let g = gt.normalize_to_distribution()?;
    let s: f64 = p
        .values()
        .iter()
        .zip(g.values().iter())
        .map(|(a, b)| a.min(*b))
        .sum();
    Ok(s.clamp(0.0, 1.0))
}

fn check_fixations(pred: &SaliencyMap, fx: &FixationSet) -> Result<(), MetricError> {
    if fx.is_empty() {
        return Err(MetricError::EmptyFixations);
    }
    fx.check_bounds(pred.height(), pred.width())?;
    Ok(())
}

/// Mean z-scored saliency (population std) at the fixation points.
pub fn nss_metric(pred: &SaliencyMap, fx: &FixationSet) -> Result<f64, MetricError> {
    check_fixations(pred, fx)?;
    let (mean, std) = mean_std(pred.values());
    if std == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let total: f64 = fx
        .points()
        .iter()
        .map(|&(r, c)| (pred.get(r, c) - mean) / std)
        .sum();
    Ok(total / fx.len() as f64)
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// AUC-Judd: positives are the fixated pixels, negatives all other pixels; the ROC is
/// traced at each distinct fixation saliency, counting `score >= threshold` as positive.
pub fn auc_judd(pred: &SaliencyMap, fx: &FixationSet) -> Result<f64, MetricError> {
    check_fixations(pred, fx)?;
    let n_pixels = pred.values().len();
    let n_fix = fx.len();
    if n_fix >= n_pixels {
        return Err(MetricError::NoNegatives);
    }
    let mut all: Vec<f64> = pred.values().iter().copied().collect();
    all.sort_by(|a, b| b.total_cmp(a));
    let mut fix_vals: Vec<f64> = fx.points().iter().map(|&(r, c)| pred.get(r, c)).collect();
    fix_vals.sort_by(|a, b| b.total_cmp(a));
    let mut thresholds = fix_vals.clone();
    thresholds.dedup();

    // Number of entries >= t in a descending-sorted slice.
    let count_ge = |sorted: &[f64], t: f64| sorted.partition_point(|&v| v >= t);

    let negatives = (n_pixels - n_fix) as f64;
    let mut curve = vec![(0.0, 0.0)];
    for &t in &thresholds {
        let tp = count_ge(&fix_vals, t);
        let above = count_ge(&all, t);
        curve.push(((above - tp) as f64 / negatives, tp as f64 / n_fix as f64));
    }
    curve.push((1.0, 1.0));
    Ok(trapezoid(&curve))
}

/// Which pixels AUC-Borji may draw its random negatives from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeSampling {
    /// Uniform over every pixel, fixated ones included.
    #[default]
    AllPixels,
    /// Uniform over pixels that are not fixated.
    NonFixated,
}

/// Exact ROC area between two score sets (ties contribute one half).
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> f64 {
    if positives.is_empty() || negatives.is_empty() {
        return 0.5;
    }
    let mut neg = negatives.to_vec();
    neg.sort_by(|a, b| a.total_cmp(b));
    let mut total = 0.0;
    for &p in positives {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        total += below as f64 + 0.5 * (not_above - below) as f64;
    }
    total / (positives.len() as f64 * neg.len() as f64)
}

/// AUC-Borji: mean ROC area over `n_splits` draws of |fx| uniformly sampled negatives.
pub fn auc_borji(
    pred: &SaliencyMap,
    fx: &FixationSet,
    n_splits: usize,
    seed: u64,
    sampling: NegativeSampling,
) -> Result<f64, MetricError> {
    check_fixations(pred, fx)?;
    if n_splits == 0 {
        return Err(MetricError::InvalidArgument("n_splits must be >= 1".into()));
    }
    let width = pred.width();
    let flat: Vec<f64> = pred.values().iter().copied().collect();
    let positives: Vec<f64> = fx.points().iter().map(|&(r, c)| pred.get(r, c)).collect();
    let pool: Vec<usize> = match sampling {
        NegativeSampling::AllPixels => (0..flat.len()).collect(),
        NegativeSampling::NonFixated => {
            let fixated: std::collections::HashSet<usize> =
                fx.points().iter().map(|&(r, c)| r * width + c).collect();
            (0..flat.len()).filter(|i| !fixated.contains(i)).collect()
        }
    };
    if pool.is_empty() {
        return Err(MetricError::NoNegatives);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut negatives = vec![0.0; positives.len()];
    for _ in 0..n_splits {
        for n in negatives.iter_mut() {
            *n = flat[pool[rng.random_range(0..pool.len())]];
        }
        sum += roc_auc(&positives, &negatives);
    }
    Ok(sum / n_splits as f64)
}
