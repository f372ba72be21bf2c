//! Review state: records, their MLLM candidates and the verdict log.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::client::CandidateAnnotation;
use crate::data_model::{write_dataset, AnnotationRecord, ScenarioCategory, Source, Split, Verification};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictAction {
    Accept,
    Edit,
    Reject,
}

/// Verification principles a reviewer can cite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipleTag {
    ValidityCompleteness,
    ContextualCausality,
    IntuitionRules,
}

/// Body of `POST /api/samples/{id}/verdict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRequest {
    pub action: VerdictAction,
    /// Version of the record the reviewer looked at.
    pub version: u64,
    #[serde(default)]
    pub edited_what: Option<Vec<String>>,
    #[serde(default)]
    pub edited_why: Option<Vec<String>>,
    #[serde(default)]
    pub principle_tags: Vec<PrincipleTag>,
    #[serde(default)]
    pub editor_note: Option<String>,
    /// Used when no `x-reviewer` header is sent.
    #[serde(default)]
    pub reviewer: Option<String>,
}

/// A stored, attributable verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub record_id: String,
    /// `None` marks a reopen entry.
    pub action: Option<VerdictAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_what: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_why: Option<Vec<String>>,
    pub reviewer: String,
    pub principle_tags: Vec<PrincipleTag>,
    pub timestamp: String,
    pub from_version: u64,
    pub to_version: u64,
    pub from_status: Verification,
    pub to_status: Verification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("record `{0}` not found")]
    NotFound(String),
    #[error("version conflict: request is based on v{requested}, record is at v{current}")]
    VersionConflict { requested: u64, current: u64 },
    #[error("cannot {action} a record in state {from}")]
    InvalidTransition { from: Verification, action: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("persisting review state failed: {0}")]
    Persist(String),
}

impl ReviewError {
    pub fn code(&self) -> &'static str {
        match self {
            ReviewError::NotFound(_) => "not_found",
            ReviewError::VersionConflict { .. } => "version_conflict",
            ReviewError::InvalidTransition { .. } => "invalid_transition",
            ReviewError::Validation(_) => "validation_error",
            ReviewError::Persist(_) => "internal_error",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleFilter {
    pub status: Option<Verification>,
    pub scenario: Option<ScenarioCategory>,
    pub source: Option<Source>,
}

impl SampleFilter {
    fn matches(&self, r: &AnnotationRecord) -> bool {
        self.status.is_none_or(|s| r.verification == s)
            && self.scenario.is_none_or(|s| r.context.scenario_category == s)
            && self.source.is_none_or(|s| r.source == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleView {
    pub record: AnnotationRecord,
    pub candidate: Option<CandidateAnnotation>,
    pub overlay_url: String,
    pub frame_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePage {
    pub items: Vec<SampleView>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewStats {
    pub total: usize,
    pub by_status: BTreeMap<Verification, usize>,
    pub by_scenario: BTreeMap<ScenarioCategory, usize>,
    pub verdicts: usize,
    pub reopened: usize,
}

pub const MAX_PAGE_SIZE: usize = 200;

struct Inner {
    records: Vec<AnnotationRecord>,
    index: HashMap<String, usize>,
    candidates: HashMap<String, CandidateAnnotation>,
    log: Vec<Verdict>,
}

/// Thread-safe review state. All writes go through one mutex, so version checks and
/// the following update are atomic.
pub struct ReviewStore {
    inner: Mutex<Inner>,
    data_root: PathBuf,
    dataset_path: Option<PathBuf>,
    log_path: Option<PathBuf>,
}

impl ReviewStore {
    pub fn new(records: Vec<AnnotationRecord>, candidates: Vec<CandidateAnnotation>, data_root: impl Into<PathBuf>) -> Self {
        let index = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), i))
            .collect();
        Self {
            inner: Mutex::new(Inner {
                records,
                index,
                candidates: candidates.into_iter().map(|c| (c.record_id.clone(), c)).collect(),
                log: Vec::new(),
            }),
            data_root: data_root.into(),
            dataset_path: None,
            log_path: None,
        }
    }

    /// Persist the dataset (atomic rewrite) and append verdicts to `log_path` after each write.
    pub fn with_persistence(mut self, dataset_path: impl Into<PathBuf>, log_path: impl Into<PathBuf>) -> Self {
        self.dataset_path = Some(dataset_path.into());
        self.log_path = Some(log_path.into());
        self
    }

    pub fn data_root(&self) -> &Path {
        &self.data_root
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn view(inner: &Inner, r: &AnnotationRecord) -> SampleView {
        SampleView {
            record: r.clone(),
            candidate: inner.candidates.get(&r.id).cloned(),
            overlay_url: format!("/api/samples/{}/overlay.png", r.id),
            frame_url: format!("/api/samples/{}/frame.png", r.id),
        }
    }

    /// `page` is 1-based.
    pub fn list(&self, filter: &SampleFilter, page: usize, page_size: usize) -> SamplePage {
        let page = page.max(1);
        let page_size = page_size.clamp(1, MAX_PAGE_SIZE);
        let inner = self.lock();
        let matching: Vec<&AnnotationRecord> = inner.records.iter().filter(|r| filter.matches(r)).collect();
        let items = matching
            .iter()
            .skip((page - 1) * page_size)
            .take(page_size)
            .map(|r| Self::view(&inner, r))
            .collect();
        SamplePage {
            items,
            page,
            page_size,
            total: matching.len(),
        }
    }

    pub fn get(&self, id: &str) -> Result<SampleView, ReviewError> {
        let inner = self.lock();
        let i = *inner.index.get(id).ok_or_else(|| ReviewError::NotFound(id.into()))?;
        Ok(Self::view(&inner, &inner.records[i]))
    }

    pub fn record(&self, id: &str) -> Result<AnnotationRecord, ReviewError> {
        self.get(id).map(|v| v.record)
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.lock().records.clone()
    }

    pub fn verdict_log(&self) -> Vec<Verdict> {
        self.lock().log.clone()
    }

    pub fn stats(&self) -> ReviewStats {
        let inner = self.lock();
        let mut s = ReviewStats {
            total: inner.records.len(),
            ..Default::default()
        };
        for r in &inner.records {
            *s.by_status.entry(r.verification).or_default() += 1;
            *s.by_scenario.entry(r.context.scenario_category).or_default() += 1;
        }
        s.verdicts = inner.log.iter().filter(|v| v.action.is_some()).count();
        s.reopened = inner.log.len() - s.verdicts;
        s
    }

    fn persist(&self, updated: &[AnnotationRecord], entry: &Verdict) -> Result<(), ReviewError> {
        if let Some(p) = &self.dataset_path {
            write_dataset(p, updated).map_err(|e| ReviewError::Persist(e.to_string()))?;
        }
        if let Some(p) = &self.log_path {
            let line = serde_json::to_string(entry).expect("verdict serializes");
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .and_then(|mut f| writeln!(f, "{line}"))
                .map_err(|e| ReviewError::Persist(e.to_string()))?;
        }
        Ok(())
    }

    /// Applies a verdict under optimistic concurrency.
    pub fn submit(&self, id: &str, req: &VerdictRequest, reviewer: &str) -> Result<AnnotationRecord, ReviewError> {
        let reviewer = reviewer.trim();
        if reviewer.is_empty() {
            return Err(ReviewError::Validation("reviewer name is required".into()));
        }
        let mut inner = self.lock();
        let i = *inner.index.get(id).ok_or_else(|| ReviewError::NotFound(id.into()))?;
        let current = &inner.records[i];
        if req.version != current.version {
            return Err(ReviewError::VersionConflict {
                requested: req.version,
                current: current.version,
            });
        }
        let from = current.verification;
        let allowed = matches!(
            (from, req.action),
            (Verification::Candidate, _) | (Verification::Edited, VerdictAction::Edit)
        );
        if !allowed {
            return Err(ReviewError::InvalidTransition {
                from,
                action: format!("{:?}", req.action).to_lowercase(),
            });
        }

        let mut next = current.clone();
        match req.action {
            VerdictAction::Accept => {
                if let Some(c) = inner.candidates.get(id) {
                    next.what = c.what.clone();
                    next.why = c.why.clone();
                }
                if next.what.is_empty() || next.why.is_empty() {
                    return Err(ReviewError::Validation(
                        "accept needs a candidate with at least one what and one why".into(),
                    ));
                }
                next.verification = Verification::Accepted;
            }
            VerdictAction::Edit => {
                let clean = |v: &Option<Vec<String>>, name: &str| -> Result<Vec<String>, ReviewError> {
                    let list: Vec<String> = v.iter().flatten().map(|s| s.trim().to_string()).collect();
                    if list.is_empty() || list.iter().any(String::is_empty) {
                        return Err(ReviewError::Validation(format!("edit requires a non-empty {name} list")));
                    }
                    Ok(list)
                };
                next.what = clean(&req.edited_what, "edited_what")?;
                next.why = clean(&req.edited_why, "edited_why")?;
                next.verification = Verification::Edited;
            }
            VerdictAction::Reject => next.verification = Verification::Rejected,
        }
        if req.editor_note.is_some() {
            next.editor_note = req.editor_note.clone();
        }
        next.version += 1;

        let entry = Verdict {
            record_id: id.to_string(),
            action: Some(req.action),
            edited_what: req.edited_what.clone(),
            edited_why: req.edited_why.clone(),
            reviewer: reviewer.to_string(),
            principle_tags: req.principle_tags.clone(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            from_version: current.version,
            to_version: next.version,
            from_status: from,
            to_status: next.verification,
            note: req.editor_note.clone(),
        };
        self.commit(&mut inner, i, next, entry)
    }

    /// Returns a reviewed record to `candidate`; the only way back from `rejected`.
    pub fn reopen(&self, id: &str, version: u64, reviewer: &str, reason: Option<String>) -> Result<AnnotationRecord, ReviewError> {
        let reviewer = reviewer.trim();
        if reviewer.is_empty() {
            return Err(ReviewError::Validation("reviewer name is required".into()));
        }
        let mut inner = self.lock();
        let i = *inner.index.get(id).ok_or_else(|| ReviewError::NotFound(id.into()))?;
        let current = &inner.records[i];
        if version != current.version {
            return Err(ReviewError::VersionConflict {
                requested: version,
                current: current.version,
            });
        }
        if current.verification == Verification::Candidate {
            return Err(ReviewError::InvalidTransition {
                from: Verification::Candidate,
                action: "reopen".into(),
            });
        }
        let mut next = current.clone();
        next.verification = Verification::Candidate;
        next.version += 1;
        let entry = Verdict {
            record_id: id.to_string(),
            action: None,
            edited_what: None,
            edited_why: None,
            reviewer: reviewer.to_string(),
            principle_tags: vec![],
            timestamp: chrono::Utc::now().to_rfc3339(),
            from_version: current.version,
            to_version: next.version,
            from_status: current.verification,
            to_status: Verification::Candidate,
            note: reason,
        };
        log::info!("record {id} reopened by {reviewer}");
        self.commit(&mut inner, i, next, entry)
    }

    fn commit(&self, inner: &mut Inner, i: usize, next: AnnotationRecord, entry: Verdict) -> Result<AnnotationRecord, ReviewError> {
        // Nothing changes in memory unless the write to disk succeeded.
        let previous = std::mem::replace(&mut inner.records[i], next.clone());
        if let Err(e) = self.persist(&inner.records, &entry) {
            inner.records[i] = previous;
            return Err(e);
        }
        inner.log.push(entry);
        Ok(next)
    }

    /// Records of `split` that passed review.
    pub fn export(&self, split: Split) -> Vec<AnnotationRecord> {
        export_split(&self.lock().records, split)
    }
}

/// Accepted or edited records of one split with at least one what and one why.
pub fn export_split(records: &[AnnotationRecord], split: Split) -> Vec<AnnotationRecord> {
    records
        .iter()
        .filter(|r| r.split == split && r.is_exportable())
        .cloned()
        .collect()
}
