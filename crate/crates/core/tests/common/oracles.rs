//! Literal reference implementations used as test oracles. Written for clarity,
//! with explicit loops and no shared helpers from the library.

use std::collections::BTreeMap;

pub type Grid = Vec<Vec<f64>>;

fn total(g: &Grid) -> f64 {
    let mut s = 0.0;
    for row in g {
        for &v in row {
            s += v;
        }
    }
    s
}

fn count(g: &Grid) -> f64 {
    (g.len() * g[0].len()) as f64
}

pub fn kldiv(pred: &Grid, gt: &Grid) -> f64 {
    let (sp, sg) = (total(pred), total(gt));
    let mut kl = 0.0;
    for r in 0..gt.len() {
        for c in 0..gt[0].len() {
            let g = gt[r][c] / sg;
            let p = pred[r][c] / sp;
            if g > 0.0 {
                kl += g * (g / (p + 1e-12)).ln();
            }
        }
    }
    kl
}

pub fn cc(pred: &Grid, gt: &Grid) -> f64 {
    let n = count(pred);
    let (mp, mg) = (total(pred) / n, total(gt) / n);
    let (mut cov, mut vp, mut vg) = (0.0, 0.0, 0.0);
    for r in 0..pred.len() {
        for c in 0..pred[0].len() {
            let a = pred[r][c] - mp;
            let b = gt[r][c] - mg;
            cov += a * b;
            vp += a * a;
            vg += b * b;
        }
    }
    cov / (vp.sqrt() * vg.sqrt())
}

pub fn sim(pred: &Grid, gt: &Grid) -> f64 {
    let (sp, sg) = (total(pred), total(gt));
    let mut s = 0.0;
    for r in 0..pred.len() {
        for c in 0..pred[0].len() {
            s += (pred[r][c] / sp).min(gt[r][c] / sg);
        }
    }
    s
}

pub fn nss(pred: &Grid, fix: &[(usize, usize)]) -> f64 {
    let n = count(pred);
    let mean = total(pred) / n;
    let mut var = 0.0;
    for row in pred {
        for &v in row {
            var += (v - mean) * (v - mean);
        }
    }
    let std = (var / n).sqrt();
    let mut s = 0.0;
    for &(r, c) in fix {
        s += (pred[r][c] - mean) / std;
    }
    s / fix.len() as f64
}

/// AUC-Judd by enumerating every threshold and counting every pixel, with the
/// area accumulated in integers and divided once.
pub fn auc_judd(pred: &Grid, fix: &[(usize, usize)]) -> f64 {
    let (h, w) = (pred.len(), pred[0].len());
    let is_fix = |r: usize, c: usize| fix.contains(&(r, c));
    let mut thresholds: Vec<f64> = fix.iter().map(|&(r, c)| pred[r][c]).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut points: Vec<(u64, u64)> = vec![(0, 0)];
    for &t in &thresholds {
        let (mut tp, mut fp) = (0u64, 0u64);
        for r in 0..h {
            for c in 0..w {
                if pred[r][c] >= t {
                    if is_fix(r, c) {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
        }
        points.push((fp, tp));
    }
    let negatives = (h * w - fix.len()) as u64;
    let positives = fix.len() as u64;
    points.push((negatives, positives));
    let mut twice_area: u64 = 0;
    for k in 1..points.len() {
        twice_area += (points[k].0 - points[k - 1].0) * (points[k].1 + points[k - 1].1);
    }
    twice_area as f64 / (2 * negatives * positives) as f64
}

/// Pairwise ROC area: P(pos > neg) + ½ P(pos == neg).
pub fn pairwise_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut s = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                s += 1.0;
            } else if p == n {
                s += 0.5;
            }
        }
    }
    s / (pos.len() * neg.len()) as f64
}

fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            out.push(tokens[i..i + n].to_vec());
        }
    }
    out
}

fn occurrences(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

pub fn bleu(cand: &[String], refs: &[Vec<String>], max_n: usize) -> f64 {
    let mut log_p = 0.0;
    for n in 1..=max_n {
        let cg = ngrams(cand, n);
        let mut seen: Vec<Vec<String>> = Vec::new();
        let mut clipped = 0usize;
        for g in &cg {
            if seen.contains(g) {
                continue;
            }
            seen.push(g.clone());
            let mut max_ref = 0;
            for r in refs {
                max_ref = max_ref.max(occurrences(&ngrams(r, n), g));
            }
            clipped += occurrences(&cg, g).min(max_ref);
        }
        let p = if clipped == 0 {
            1.0 / (cg.len() as f64 + 1.0)
        } else {
            clipped as f64 / cg.len() as f64
        };
        log_p += p.ln();
    }
    let c = cand.len();
    let mut best = refs[0].len();
    for r in refs {
        let d = (r.len() as i64 - c as i64).abs();
        let db = (best as i64 - c as i64).abs();
        if d < db || (d == db && r.len() < best) {
            best = r.len();
        }
    }
    let bp = if c > best { 1.0 } else { (1.0 - best as f64 / c as f64).exp() };
    bp * (log_p / max_n as f64).exp()
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|x| x == *s))
}

/// LCS by trying every subsequence of the candidate (inputs are short).
pub fn lcs_brute(a: &[String], b: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l(cand: &[String], reference: &[String]) -> f64 {
    let l = lcs_brute(cand, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / cand.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = 1.2f64 * 1.2;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Every partial matching of equal tokens; returns (max matches, min chunks).
pub fn meteor_alignment(cand: &[String], reference: &[String]) -> (usize, usize) {
    fn rec(i: usize, cand: &[String], reference: &[String], used: &mut Vec<bool>, map: &mut Vec<Option<usize>>, best: &mut (usize, usize)) {
        if i == cand.len() {
            let matches = map.iter().flatten().count();
            let mut chunks = 0;
            let mut prev: Option<usize> = None;
            for m in map.iter() {
                match (m, prev) {
                    (Some(j), Some(p)) if *j == p + 1 => {}
                    (Some(_), _) => chunks += 1,
                    (None, _) => {}
                }
                prev = *m;
            }
            if matches > best.0 || (matches == best.0 && chunks < best.1) {
                *best = (matches, chunks);
            }
            return;
        }
        map.push(None);
        rec(i + 1, cand, reference, used, map, best);
        map.pop();
        for j in 0..reference.len() {
            if !used[j] && reference[j] == cand[i] {
                used[j] = true;
                map.push(Some(j));
                rec(i + 1, cand, reference, used, map, best);
                map.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, usize::MAX);
    rec(0, cand, reference, &mut vec![false; reference.len()], &mut Vec::new(), &mut best);
    if best.0 == 0 {
        (0, 0)
    } else {
        best
    }
}

pub fn meteor(cand: &[String], reference: &[String]) -> f64 {
    let (m, ch) = meteor_alignment(cand, reference);
    if m == 0 {
        return 0.0;
    }
    let m = m as f64;
    let p = m / cand.len() as f64;
    let r = m / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    f * (1.0 - 0.5 * (ch as f64 / m).powi(3))
}

pub fn cider(cands: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Vec<f64> {
    let docs = refs.len() as f64;
    let mut scores = vec![0.0; cands.len()];
    for n in 1..=4 {
        let df = |g: &[String]| -> f64 {
            refs.iter()
                .filter(|set| set.iter().any(|r| occurrences(&ngrams(r, n), g) > 0))
                .count() as f64
        };
        let vector = |t: &[String]| -> BTreeMap<Vec<String>, f64> {
            let grams = ngrams(t, n);
            let mut v = BTreeMap::new();
            for g in &grams {
                let tf = occurrences(&grams, g) as f64;
                v.insert(g.clone(), tf * (docs / df(g).max(1.0)).ln());
            }
            v
        };
        let norm = |v: &BTreeMap<Vec<String>, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..cands.len() {
            let cv = vector(&cands[i]);
            let mut acc = 0.0;
            for r in &refs[i] {
                let rv = vector(r);
                let (a, b) = (norm(&cv), norm(&rv));
                if a > 0.0 && b > 0.0 {
                    let dot: f64 = cv.iter().map(|(g, x)| x * rv.get(g).copied().unwrap_or(0.0)).sum();
                    acc += dot / (a * b);
                }
            }
            scores[i] += acc / refs[i].len() as f64 / 4.0;
        }
    }
    scores.iter().map(|s| s * 10.0).collect()
}
