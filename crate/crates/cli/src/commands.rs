use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use llada_core::annotation::review::{export_split, serve, ReviewStore};
use llada_core::annotation::{
    annotate_records, load_candidates, write_candidates, CandidateCache, OpenAiCompatClient, PipelineConfig,
};
use llada_core::curation::{
    load_sequences, select_key_samples_with, CurationError, EmbeddingProvider, PrecomputedEmbeddings,
    SelectionConfig, ThumbnailEmbedder,
};
use llada_core::data_model::{load_dataset, load_image, save_saliency_map, write_dataset, Split};
use llada_core::metrics::{evaluate_files, EvalConfig, NegativeSampling, PredictionLine};
use llada_core::model::{
    build_base_vocab, load_checkpoint, save_checkpoint, Dtype, GenerateOptions, LladaModel, ModelConfig, ParamSet,
};
use llada_core::synth::{self, SynthConfig};
use llada_core::trainer::{load_samples, predict as predict_one, TrainConfig, Trainer};

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn jsonl_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn curate(
    input: &Path,
    embeddings: Option<&Path>,
    config: Option<&Path>,
    [tau_scene, tau_kl, tau_attn]: [Option<f64>; 3],
    out: &Path,
) -> Result<()> {
    let mut cfg: SelectionConfig = match config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SelectionConfig::default(),
    };
    if let Some(v) = tau_scene {
        cfg.default.tau_scene = v;
    }
    if let Some(v) = tau_kl {
        cfg.default.tau_kl = v;
    }
    if let Some(v) = tau_attn {
        cfg.default.tau_attn = v;
    }
    cfg.default.validate()?;

    let provider: Box<dyn EmbeddingProvider> = match embeddings {
        Some(p) => Box::new(PrecomputedEmbeddings::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => Box::new(ThumbnailEmbedder::default()),
    };
    let root = parent(input);
    let entries = load_sequences(input).with_context(|| format!("reading {}", input.display()))?;
    let mut w = jsonl_writer(out)?;
    let (mut keys, mut total) = (0, 0);
    for entry in &entries {
        let seq = entry.load(&root).with_context(|| format!("scene {}", entry.scene_id))?;
        let paths: HashMap<&str, Option<&PathBuf>> =
            entry.frames.iter().map(|f| (f.id.as_str(), f.frame_path.as_ref())).collect();
        let load = |id: &str| match paths.get(id).copied().flatten() {
            Some(p) if embeddings.is_none() => Ok(Some(load_image(root.join(p)).map_err(CurationError::from)?)),
            _ => Ok(None),
        };
        let th = cfg.for_source(entry.source);
        let decisions = select_key_samples_with(&seq, &th, provider.as_ref(), load)
            .with_context(|| format!("scene {}", entry.scene_id))?;
        for d in decisions {
            keys += usize::from(d.is_key);
            total += 1;
            let mut v = serde_json::to_value(&d)?;
            v["scene_id"] = entry.scene_id.clone().into();
            writeln!(w, "{}", serde_json::to_string(&v)?)?;
        }
    }
    w.flush()?;
    log::info!("{keys} key samples out of {total} frames in {} sequences", entries.len());
    Ok(())
}

pub struct AnnotateArgs {
    pub dataset: PathBuf,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub concurrency: usize,
    pub rate: Option<f64>,
    pub timeout_secs: u64,
    pub out: PathBuf,
}

pub fn annotate(a: &AnnotateArgs) -> Result<()> {
    let records = load_dataset(&a.dataset)?;
    let previous = if a.out.exists() {
        load_candidates(&a.out)?
    } else {
        Vec::new()
    };
    let cache = CandidateCache::from_candidates(previous.iter().cloned());
    let client = OpenAiCompatClient::new(&a.endpoint, &a.model, &a.api_key_env, Duration::from_secs(a.timeout_secs));
    let cfg = PipelineConfig {
        concurrency: a.concurrency.max(1),
        max_requests_per_sec: a.rate,
        ..Default::default()
    };
    let outcomes = annotate_records(&records, &parent(&a.dataset), &client, &cfg, &cache);

    // Keep earlier candidates for records not touched in this run.
    let mut by_id: HashMap<String, _> = previous.into_iter().map(|c| (c.record_id.clone(), c)).collect();
    let mut failed = 0;
    let mut cached = 0;
    for o in outcomes {
        cached += usize::from(o.cached);
        match o.result {
            Ok(c) => {
                by_id.insert(o.record_id, c);
            }
            Err(_) => failed += 1,
        }
    }
    let mut items: Vec<_> = by_id.into_values().collect();
    items.sort_by(|x, y| x.record_id.cmp(&y.record_id));
    write_candidates(&a.out, &items)?;
    log::info!(
        "{} candidates written ({cached} from cache), {failed} of {} records failed",
        items.len(),
        records.len()
    );
    if failed > 0 {
        bail!("{failed} records could not be annotated");
    }
    Ok(())
}

pub fn review_serve(
    dataset: &Path,
    candidates: Option<&Path>,
    host: &str,
    port: u16,
    static_dir: Option<PathBuf>,
    log: Option<PathBuf>,
) -> Result<()> {
    let records = load_dataset(dataset)?;
    let candidates = match candidates {
        Some(p) => load_candidates(p)?,
        None => Vec::new(),
    };
    let log = log.unwrap_or_else(|| parent(dataset).join("review-log.jsonl"));
    let store = ReviewStore::new(records, candidates, parent(dataset)).with_persistence(dataset, log);
    let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host/port")?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(Arc::new(store), addr, static_dir))?;
    Ok(())
}

pub fn export(dataset: &Path, split: Split, out: &Path) -> Result<()> {
    let records = load_dataset(dataset)?;
    let kept = export_split(&records, split);
    write_dataset(out, &kept)?;
    log::info!("exported {} of {} records", kept.len(), records.len());
    Ok(())
}

pub fn export_model(checkpoint: &Path, out: &Path) -> Result<()> {
    let loaded = load_checkpoint(checkpoint, None)?;
    save_checkpoint(out, &loaded.model, Dtype::F32, &ParamSet::default(), serde_json::json!({}))?;
    log::info!("{} parameters written to {}", loaded.model.parameter_count(), out.display());
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    train: TrainConfig,
    /// Fields merged over the toy configuration.
    model: serde_json::Map<String, serde_json::Value>,
}

fn model_config(overrides: &serde_json::Map<String, serde_json::Value>, vocab: Vec<String>) -> Result<ModelConfig> {
    let mut v = serde_json::to_value(ModelConfig::toy(vocab))?;
    for (k, x) in overrides {
        v[k] = x.clone();
    }
    serde_json::from_value(v).context("invalid model config")
}

pub fn train(
    config: Option<&Path>,
    dataset: &Path,
    out: &Path,
    resume: Option<&Path>,
    max_steps: Option<usize>,
) -> Result<()> {
    let run: RunConfig = match config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => RunConfig::default(),
    };
    let records = export_split(&load_dataset(dataset)?, Split::Train);
    if records.is_empty() {
        bail!("{} has no accepted train records", dataset.display());
    }
    let mut texts = Vec::new();
    for r in &records {
        texts.push(r.context.describe());
        texts.extend(r.what.iter().cloned());
        texts.extend(r.why.iter().cloned());
    }
    let mcfg = model_config(&run.model, build_base_vocab(texts.iter().map(String::as_str)))?;
    let data = load_samples(&records, &parent(dataset), mcfg.image_height, mcfg.image_width)?;
    let mut trainer = match resume {
        Some(ckpt) => Trainer::resume(ckpt, &data)?,
        None => Trainer::new(LladaModel::new(mcfg)?, run.train, &data)?,
    }
    .with_output(out)?;
    if let Some(n) = max_steps {
        trainer.set_max_steps(n);
    }
    log::info!(
        "training a {}-parameter model on {} samples",
        trainer.model().parameter_count(),
        data.len()
    );
    let logs = trainer.run()?;
    if let Some(last) = logs.last() {
        log::info!("step {}: loss {:.4}", last.step, last.report.total);
    }
    if let Some(p) = trainer.last_checkpoint() {
        println!("{}", p.display());
    }
    Ok(())
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn predict(checkpoint: &Path, dataset: &Path, split: Split, out: &Path, text: bool, gen: GenerateOptions) -> Result<()> {
    let model = load_checkpoint(checkpoint, None)?.model;
    let records: Vec<_> = load_dataset(dataset)?.into_iter().filter(|r| r.split == split).collect();
    let cfg = model.config();
    let samples = load_samples(&records, &parent(dataset), cfg.image_height, cfg.image_width)?;
    std::fs::create_dir_all(out.join("maps"))?;
    let mut w = jsonl_writer(&out.join("preds.jsonl"))?;
    for s in &samples {
        let p = predict_one(&model, s, text, &gen)?;
        let map_path = PathBuf::from("maps").join(format!("{}.png", file_stem(&p.id)));
        save_saliency_map(&p.map, out.join(&map_path))?;
        let line = PredictionLine {
            id: p.id,
            map_path,
            what: p.what,
            why: p.why,
        };
        writeln!(w, "{}", serde_json::to_string(&line)?)?;
    }
    w.flush()?;
    log::info!("{} predictions written to {}", samples.len(), out.display());
    Ok(())
}

pub fn eval(predictions: &Path, dataset: &Path, split: Split, auc_b_splits: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let cfg = EvalConfig {
        auc_b_splits,
        seed,
        sampling: NegativeSampling::default(),
    };
    let report = evaluate_files(predictions, dataset, split, &cfg)?;
    print!("{}", report.to_table());
    if let Some(p) = out {
        std::fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

pub fn synth(out: &Path, samples: usize, seed: u64, val_fraction: f64) -> Result<()> {
    if !(0.0..1.0).contains(&val_fraction) {
        bail!("val fraction must lie in [0, 1)");
    }
    let all = synth::generate(&SynthConfig {
        samples,
        seed,
        val_fraction,
        ..Default::default()
    });
    let records = synth::write_synthetic(out, &all)?;
    log::info!("{} samples written to {}", records.len(), out.join("dataset.jsonl").display());
    Ok(())
}
