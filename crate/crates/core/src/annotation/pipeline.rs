//! Batch annotation: overlay → prompt → MLLM → parsed candidate, with bounded
//! concurrency, a shared request-rate limit and a fingerprint cache.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::client::{request_annotation, request_fingerprint, CandidateAnnotation, MllmClient, RetryPolicy};
use super::overlay::{render_grayscale_overlay, DEFAULT_DIM_FACTOR};
use super::prompt::{build_annotation_prompt, PromptTemplate};
use super::AnnotationError;
use crate::data_model::{load_image, load_saliency_map, AnnotationRecord};

#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    pub concurrency: usize,
    /// Upper bound on requests started per second across all workers.
    pub max_requests_per_sec: Option<f64>,
    pub retry: RetryPolicy,
    pub dim_factor: f64,
    /// How many 429 responses a single record may wait out before giving up.
    pub max_rate_limit_waits: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            concurrency: 4,
            max_requests_per_sec: None,
            retry: RetryPolicy::default(),
            dim_factor: DEFAULT_DIM_FACTOR,
            max_rate_limit_waits: 5,
        }
    }
}

/// Minimum-interval limiter shared by all workers.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_second(rate: f64) -> Self {
        Self {
            interval: Duration::from_secs_f64(1.0 / rate.max(1e-9)),
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Previously obtained candidates keyed by request fingerprint.
#[derive(Debug, Default)]
pub struct CandidateCache {
    by_fingerprint: Mutex<HashMap<String, CandidateAnnotation>>,
}

impl CandidateCache {
    pub fn from_candidates(items: impl IntoIterator<Item = CandidateAnnotation>) -> Self {
        let map = items
            .into_iter()
            .map(|c| (c.request_fingerprint.clone(), c))
            .collect();
        Self {
            by_fingerprint: Mutex::new(map),
        }
    }

    pub fn get(&self, fingerprint: &str) -> Option<CandidateAnnotation> {
        self.by_fingerprint.lock().unwrap().get(fingerprint).cloned()
    }

    pub fn insert(&self, c: CandidateAnnotation) {
        self.by_fingerprint
            .lock()
            .unwrap()
            .insert(c.request_fingerprint.clone(), c);
    }

    pub fn len(&self) -> usize {
        self.by_fingerprint.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Outcome for one record; `cached` marks results served without a request.
#[derive(Debug)]
pub struct AnnotationOutcome {
    pub record_id: String,
    pub result: Result<CandidateAnnotation, AnnotationError>,
    pub cached: bool,
}

/// Builds the prompt and PNG overlay for a record whose paths resolve under `root`.
pub fn prepare_request(
    record: &AnnotationRecord,
    root: &Path,
    dim_factor: f64,
) -> Result<(String, Vec<u8>), AnnotationError> {
    let image = load_image(root.join(&record.frame_path))?;
    let mut map = load_saliency_map(root.join(&record.map_path))?;
    if map.shape() != (image.height(), image.width()) {
        map = map.resize(image.height(), image.width());
    }
    let overlay = render_grayscale_overlay(&image, &map, dim_factor)?;
    let prompt = build_annotation_prompt(&record.context, &PromptTemplate::for_context(&record.context))?;
    Ok((prompt, overlay.to_png()?))
}

fn annotate_one(
    record: &AnnotationRecord,
    root: &Path,
    client: &dyn MllmClient,
    cfg: &PipelineConfig,
    limiter: Option<&RateLimiter>,
    cache: &CandidateCache,
) -> (Result<CandidateAnnotation, AnnotationError>, bool) {
    let (prompt, png) = match prepare_request(record, root, cfg.dim_factor) {
        Ok(x) => x,
        Err(e) => return (Err(e), false),
    };
    let fp = request_fingerprint(&prompt, &png);
    if let Some(mut hit) = cache.get(&fp) {
        hit.record_id = record.id.clone();
        return (Ok(hit), true);
    }
    let mut waits = 0;
    loop {
        if let Some(l) = limiter {
            l.acquire();
        }
        match request_annotation(client, &record.id, &prompt, &png, &cfg.retry) {
            Err(AnnotationError::RateLimited { retry_after }) if waits < cfg.max_rate_limit_waits => {
                std::thread::sleep(retry_after.unwrap_or_else(|| cfg.retry.delay(waits)));
                waits += 1;
            }
            Ok(c) => {
                cache.insert(c.clone());
                return (Ok(c), false);
            }
            Err(e) => return (Err(e), false),
        }
    }
}

/// Annotates records with at most `cfg.concurrency` requests in flight. Results come
/// back in input order regardless of completion order.
pub fn annotate_records(
    records: &[AnnotationRecord],
    root: &Path,
    client: &dyn MllmClient,
    cfg: &PipelineConfig,
    cache: &CandidateCache,
) -> Vec<AnnotationOutcome> {
    let limiter = cfg.max_requests_per_sec.map(RateLimiter::per_second);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<AnnotationOutcome>>> = records.iter().map(|_| Mutex::new(None)).collect();
    let workers = cfg.concurrency.clamp(1, records.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(record) = records.get(i) else { break };
                let (result, cached) = annotate_one(record, root, client, cfg, limiter.as_ref(), cache);
                if let Err(e) = &result {
                    log::warn!("annotation of {} failed: {e}", record.id);
                }
                *slots[i].lock().unwrap() = Some(AnnotationOutcome {
                    record_id: record.id.clone(),
                    result,
                    cached,
                });
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}

pub fn load_candidates(path: impl AsRef<Path>) -> Result<Vec<CandidateAnnotation>, AnnotationError> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| AnnotationError::Validation(format!("candidates line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_candidates(path: impl AsRef<Path>, items: &[CandidateAnnotation]) -> Result<(), AnnotationError> {
    let path = path.as_ref();
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        for c in items {
            writeln!(f, "{}", serde_json::to_string(c).expect("candidate serializes"))?;
        }
        f.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}
