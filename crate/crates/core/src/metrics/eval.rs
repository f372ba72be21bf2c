use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::saliency::{auc_borji, auc_judd, cc_metric, kldiv_metric, nss_metric, sim_metric, NegativeSampling};
use super::text::{bleu, cider, meteor_simplified, rouge_l, tokenize};
use super::MetricError;
use crate::data_model::{
    load_dataset, load_saliency_map, FixationSet, SaliencyMap, ScenarioCategory, Split,
};

/// Ground truth for one evaluated sample.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub id: String,
    pub scenario: ScenarioCategory,
    pub map: SaliencyMap,
    pub fixations: Option<FixationSet>,
    pub what: Vec<String>,
    pub why: Vec<String>,
}

/// A model output for one sample.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub id: String,
    pub map: SaliencyMap,
    pub what: Vec<String>,
    pub why: Vec<String>,
}

/// One line of `preds.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub map_path: PathBuf,
    #[serde(default)]
    pub what: Vec<String>,
    #[serde(default)]
    pub why: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    pub auc_b_splits: usize,
    pub seed: u64,
    pub sampling: NegativeSampling,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            auc_b_splits: 100,
            seed: 42,
            sampling: NegativeSampling::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SaliencyScores {
    pub kldiv: f64,
    pub cc: f64,
    pub sim: f64,
    /// `None` when no sample in the group carries fixations.
    pub auc_j: Option<f64>,
    pub auc_b: Option<f64>,
    pub nss: Option<f64>,
    pub fixation_coverage: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TextScores {
    pub bleu: f64,
    #[serde(rename = "meteor_simplified")]
    pub meteor: f64,
    pub rouge_l: f64,
    /// Base TF-IDF CIDEr; `None` when the split is too small for IDF.
    pub cider: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub samples: usize,
    pub with_fixations: usize,
    pub excluded_from_fixation_metrics: usize,
    pub degenerate_predictions: usize,
    pub saliency: SaliencyScores,
    /// what and why concatenated.
    pub text: TextScores,
    pub text_what: TextScores,
    pub text_why: TextScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub groups: Vec<GroupReport>,
}

impl EvalReport {
    pub fn group(&self, name: &str) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.group == name)
    }

    /// Aligned plain-text table, one row per scenario group.
    pub fn to_table(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} | {:>7} {:>9} {:>7} {:>7}",
            "scenario", "n", "KLdiv", "CC", "SIM", "AUC_J", "AUC_B", "NSS", "BLEU-4", "METEOR-s",
            "ROUGE-L", "CIDEr"
        );
        for g in &self.groups {
            let s = &g.saliency;
            let t = &g.text;
            let _ = writeln!(
                out,
                "{:<16} {:>5} {:>7.3} {:>7.3} {:>7.3} {:>7} {:>7} {:>7} | {:>7.3} {:>9.3} {:>7.3} {:>7}",
                g.group,
                g.samples,
                s.kldiv,
                s.cc,
                s.sim,
                fmt_opt(s.auc_j),
                fmt_opt(s.auc_b),
                fmt_opt(s.nss),
                t.bleu,
                t.meteor,
                t.rouge_l,
                fmt_opt(t.cider)
            );
        }
        let _ = writeln!(out, "\nper field (BLEU-4 / METEOR-s / ROUGE-L / CIDEr):");
        for g in &self.groups {
            for (name, t) in [("what", &g.text_what), ("why", &g.text_why)] {
                let _ = writeln!(
                    out,
                    "{:<16} {:<4} {:>7.3} {:>9.3} {:>7.3} {:>7}",
                    g.group,
                    name,
                    t.bleu,
                    t.meteor,
                    t.rouge_l,
                    fmt_opt(t.cider)
                );
            }
        }
        out
    }
}

struct SampleScores {
    kldiv: f64,
    cc: f64,
    sim: f64,
    fixation: Option<(f64, f64, f64)>,
    degenerate: bool,
    text: [(f64, f64, f64); 3],
}

fn text_triplet(pred: &[String], gt: &[String]) -> (f64, f64, f64) {
    if pred.is_empty() || gt.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let b = bleu(pred, &[gt.to_vec()], 4).unwrap_or(0.0);
    (b, meteor_simplified(pred, gt), rouge_l(pred, gt))
}

fn or_zero_on_flat(r: Result<f64, MetricError>) -> Result<f64, MetricError> {
    match r {
        // A constant map carries no information: correlation and NSS are zero.
        Err(MetricError::ZeroVariance) => Ok(0.0),
        other => other,
    }
}

fn score_sample(
    index: usize,
    gt: &GroundTruth,
    pred: &Prediction,
    cfg: &EvalConfig,
) -> Result<SampleScores, MetricError> {
    let mut map = if pred.map.shape() == gt.map.shape() {
        pred.map.clone()
    } else {
        pred.map.resize(gt.map.height(), gt.map.width())
    };
    let degenerate = map.sum() <= 0.0;
    if degenerate {
        map = SaliencyMap::from_fn(gt.map.height(), gt.map.width(), |_, _| 1.0);
    }
    let kldiv = kldiv_metric(&map, &gt.map)?;
    let cc = or_zero_on_flat(cc_metric(&map, &gt.map))?;
    let sim = sim_metric(&map, &gt.map)?;
    let fixation = match &gt.fixations {
        Some(fx) if !fx.is_empty() => {
            let nss = or_zero_on_flat(nss_metric(&map, fx))?;
            let aj = auc_judd(&map, fx)?;
            let seed = cfg.seed.wrapping_add(index as u64);
            let ab = auc_borji(&map, fx, cfg.auc_b_splits, seed, cfg.sampling)?;
            Some((aj, ab, nss))
        }
        _ => None,
    };
    let pw = tokenize(&pred.what.join(" ; "));
    let py = tokenize(&pred.why.join(" ; "));
    let gw = tokenize(&gt.what.join(" ; "));
    let gy = tokenize(&gt.why.join(" ; "));
    let pj: Vec<String> = pw.iter().chain(&py).cloned().collect();
    let gj: Vec<String> = gw.iter().chain(&gy).cloned().collect();
    Ok(SampleScores {
        kldiv,
        cc,
        sim,
        fixation,
        degenerate,
        text: [
            text_triplet(&pj, &gj),
            text_triplet(&pw, &gw),
            text_triplet(&py, &gy),
        ],
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores predictions against a split, grouped by scenario category plus an `all` row.
/// Samples without fixations are excluded from NSS / AUC and counted in the report.
pub fn evaluate_split(
    truth: &[GroundTruth],
    predictions: &[Prediction],
    cfg: &EvalConfig,
) -> Result<EvalReport, MetricError> {
    if truth.is_empty() {
        return Err(MetricError::EmptySplit);
    }
    let by_id: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut paired = Vec::with_capacity(truth.len());
    for gt in truth {
        let pred = by_id
            .get(gt.id.as_str())
            .ok_or_else(|| MetricError::MissingPrediction(gt.id.clone()))?;
        paired.push((gt, *pred));
    }
    // Per-sample scores are independent; reduce in input order for stable output.
    let scores: Vec<SampleScores> = paired
        .iter()
        .enumerate()
        .map(|(i, (gt, pred))| score_sample(i, gt, pred, cfg))
        .collect::<Result<_, _>>()?;

    // CIDEr needs corpus-wide IDF over the whole split before grouping.
    let field_tokens = |f: &dyn Fn(&GroundTruth, &Prediction) -> (Vec<String>, Vec<String>)| {
        let (c, r): (Vec<_>, Vec<_>) = paired
            .iter()
            .map(|(g, p)| {
                let (pc, gr) = f(g, p);
                (pc, vec![gr])
            })
            .unzip();
        cider(&c, &r).ok().map(|s| s.per_sample)
    };
    let joined = |xs: &[String], ys: &[String]| tokenize(&format!("{} {}", xs.join(" ; "), ys.join(" ; ")));
    let cider_fields = [
        field_tokens(&|g, p| (joined(&p.what, &p.why), joined(&g.what, &g.why))),
        field_tokens(&|g, p| (tokenize(&p.what.join(" ; ")), tokenize(&g.what.join(" ; ")))),
        field_tokens(&|g, p| (tokenize(&p.why.join(" ; ")), tokenize(&g.why.join(" ; ")))),
    ];

    let mut groups: Vec<(String, Vec<usize>)> = ScenarioCategory::ALL
        .iter()
        .map(|cat| {
            let idx = paired
                .iter()
                .enumerate()
                .filter(|(_, (g, _))| g.scenario == *cat)
                .map(|(i, _)| i)
                .collect();
            (cat.as_str().to_string(), idx)
        })
        .filter(|(_, idx): &(String, Vec<usize>)| !idx.is_empty())
        .collect();
    groups.push(("all".to_string(), (0..paired.len()).collect()));

    let reports = groups
        .into_iter()
        .map(|(name, idx)| {
            let pick = |f: &dyn Fn(&SampleScores) -> f64| mean(idx.iter().map(|&i| f(&scores[i])));
            let fixated: Vec<usize> = idx
                .iter()
                .copied()
                .filter(|&i| scores[i].fixation.is_some())
                .collect();
            let fix_mean = |k: usize| {
                mean(fixated.iter().map(|&i| {
                    let (a, b, c) = scores[i].fixation.unwrap();
                    [a, b, c][k]
                }))
            };
            let text = |k: usize| TextScores {
                bleu: pick(&|s| s.text[k].0).unwrap_or(0.0),
                meteor: pick(&|s| s.text[k].1).unwrap_or(0.0),
                rouge_l: pick(&|s| s.text[k].2).unwrap_or(0.0),
                cider: cider_fields[k]
                    .as_ref()
                    .and_then(|per| mean(idx.iter().map(|&i| per[i]))),
            };
            GroupReport {
                group: name,
                samples: idx.len(),
                with_fixations: fixated.len(),
                excluded_from_fixation_metrics: idx.len() - fixated.len(),
                degenerate_predictions: idx.iter().filter(|&&i| scores[i].degenerate).count(),
                saliency: SaliencyScores {
                    kldiv: pick(&|s| s.kldiv).unwrap_or(0.0),
                    cc: pick(&|s| s.cc).unwrap_or(0.0),
                    sim: pick(&|s| s.sim).unwrap_or(0.0),
                    auc_j: fix_mean(0),
                    auc_b: fix_mean(1),
                    nss: fix_mean(2),
                    fixation_coverage: fixated.len() as f64 / idx.len() as f64,
                },
                text: text(0),
                text_what: text(1),
                text_why: text(2),
            }
        })
        .collect();
    Ok(EvalReport { groups: reports })
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads `preds.jsonl` and the dataset split from disk and evaluates them.
/// Prediction map paths resolve against the predictions file's directory; record
/// map paths against the dataset file's directory.
pub fn evaluate_files(
    predictions_path: &Path,
    dataset_path: &Path,
    split: Split,
    cfg: &EvalConfig,
) -> Result<EvalReport, MetricError> {
    let records = load_dataset(dataset_path)?;
    let data_root = parent_dir(dataset_path);
    let truth: Vec<GroundTruth> = records
        .into_iter()
        .filter(|r| r.split == split)
        .map(|r| {
            let map = load_saliency_map(data_root.join(&r.map_path))?;
            if let Some(fx) = &r.fixations {
                fx.check_bounds(map.height(), map.width())?;
            }
            Ok(GroundTruth {
                id: r.id,
                scenario: r.context.scenario_category,
                map,
                fixations: r.fixations,
                what: r.what,
                why: r.why,
            })
        })
        .collect::<Result<_, MetricError>>()?;

    let pred_root = parent_dir(predictions_path);
    let file = std::fs::File::open(predictions_path).map_err(crate::data_model::DataError::from)?;
    let mut predictions = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(crate::data_model::DataError::from)?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(&line).map_err(|e| {
            MetricError::InvalidArgument(format!("bad prediction line: {e}"))
        })?;
        predictions.push(Prediction {
            map: load_saliency_map(pred_root.join(&p.map_path))?,
            id: p.id,
            what: p.what,
            why: p.why,
        });
    }
    evaluate_split(&truth, &predictions, cfg)
}
