use std::path::Path;
use std::sync::{Arc, Barrier};

use llada_core::annotation::review::{export_split, ReviewStore, ServerHandle};
use llada_core::annotation::CandidateAnnotation;
use llada_core::data_model::{
    load_dataset, save_png_rgb, save_saliency_map, AnnotationRecord, Location, RgbImage, SaliencyMap,
    ScenarioCategory, SceneContext, Source, Split, TimePeriod, Verification, Weather,
};
use serde_json::{json, Value};

fn record(i: usize, cat: ScenarioCategory) -> AnnotationRecord {
    AnnotationRecord {
        id: format!("s{i}"),
        frame_path: format!("f{i}.png").into(),
        map_path: format!("m{i}.png").into(),
        fixations: None,
        context: SceneContext::new(Weather::Cloudy, TimePeriod::Evening, Location::Urban, cat),
        what: vec![],
        why: vec![],
        source: if i.is_multiple_of(2) { Source::Bdda } else { Source::Dada },
        split: Split::Train,
        verification: Verification::Candidate,
        editor_note: None,
        version: 0,
        extra: Default::default(),
    }
}

fn candidate(i: usize) -> CandidateAnnotation {
    CandidateAnnotation {
        record_id: format!("s{i}"),
        raw_response: String::new(),
        region_count: 1,
        what: vec![format!("car {i}")],
        why: vec!["braking ahead".into()],
        model_name: "stub".into(),
        request_fingerprint: format!("{i:064x}"),
        retries: 0,
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    dataset: std::path::PathBuf,
    log: std::path::PathBuf,
    server: ServerHandle,
    store: Arc<ReviewStore>,
}

fn fixture(n: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cats = [ScenarioCategory::Normal, ScenarioCategory::Accident, ScenarioCategory::SafetyCritical];
    let records: Vec<_> = (0..n).map(|i| record(i, cats[i % 3])).collect();
    for i in 0..n {
        save_png_rgb(&RgbImage::filled(6, 6, [120, 60, 30]), root.join(format!("f{i}.png"))).unwrap();
        let m = SaliencyMap::from_fn(6, 6, |r, c| if r == 2 && c == 3 { 1.0 } else { 0.0 });
        save_saliency_map(&m, root.join(format!("m{i}.png"))).unwrap();
    }
    let dataset = root.join("dataset.jsonl");
    let log = root.join("verdicts.jsonl");
    llada_core::data_model::write_dataset(&dataset, &records).unwrap();
    let store = Arc::new(
        ReviewStore::new(records, (0..n).map(candidate).collect(), root).with_persistence(&dataset, &log),
    );
    let server = ServerHandle::start(store.clone(), None).unwrap();
    Fixture {
        _dir: dir,
        dataset,
        log,
        server,
        store,
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

fn get(f: &Fixture, path: &str) -> (u16, Value) {
    let mut r = agent().get(&f.server.url(path)).call().unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_json().unwrap_or(Value::Null))
}

fn post(f: &Fixture, path: &str, reviewer: &str, body: Value) -> (u16, Value) {
    let mut r = agent()
        .post(&f.server.url(path))
        .header("x-reviewer", reviewer)
        .send_json(&body)
        .unwrap();
    let status = r.status().as_u16();
    (status, r.body_mut().read_json().unwrap_or(Value::Null))
}

pub fn list_filters_and_pages() {
    let f = fixture(7);
    let (s, page) = get(&f, "/api/samples?status=candidate&page=1&page_size=3");
    assert_eq!(s, 200);
    assert_eq!(page["total"], 7);
    assert_eq!(page["items"].as_array().unwrap().len(), 3);
    let (_, p3) = get(&f, "/api/samples?status=candidate&page=3&page_size=3");
    assert_eq!(p3["items"].as_array().unwrap().len(), 1);
    let (_, acc) = get(&f, "/api/samples?scenario=accident");
    assert!(acc["items"]
        .as_array()
        .unwrap()
        .iter()
        .all(|it| it["record"]["context"]["scenario_category"] == "accident"));
    assert_eq!(acc["total"], 2);
    let (_, dada) = get(&f, "/api/samples?source=dada");
    assert_eq!(dada["total"], 3);
    let (s, err) = get(&f, "/api/samples?status=bogus");
    assert_eq!(s, 422);
    assert_eq!(err["code"], "validation_error");
}

pub fn sample_detail_and_images() {
    let f = fixture(2);
    let (s, v) = get(&f, "/api/samples/s1");
    assert_eq!(s, 200);
    assert_eq!(v["overlay_url"], "/api/samples/s1/overlay.png");
    assert_eq!(v["candidate"]["what"][0], "car 1");
    for path in ["/api/samples/s1/overlay.png", "/api/samples/s1/frame.png"] {
        let mut r = agent().get(&f.server.url(path)).call().unwrap();
        assert_eq!(r.status().as_u16(), 200);
        assert_eq!(r.headers()["content-type"], "image/png");
        let bytes = r.body_mut().read_to_vec().unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
    let (s, e) = get(&f, "/api/samples/nope");
    assert_eq!((s, e["code"].as_str()), (404, Some("not_found")));
}

pub fn accept_moves_to_v1_and_copies_candidate() {
    let f = fixture(2);
    let (s, r) = post(&f, "/api/samples/s0/verdict", "ana", json!({"action": "accept", "version": 0}));
    assert_eq!(s, 200, "{r}");
    assert_eq!(r["version"], 1);
    assert_eq!(r["verification"], "accepted");
    assert_eq!(r["what"][0], "car 0");
    // persisted
    let on_disk = load_dataset(&f.dataset).unwrap();
    assert_eq!(on_disk[0].verification, Verification::Accepted);
    let log = std::fs::read_to_string(&f.log).unwrap();
    let entry: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(entry["reviewer"], "ana");
    assert!(!entry["timestamp"].as_str().unwrap().is_empty());
}

pub fn concurrent_edits_one_wins() {
    let f = Arc::new(fixture(1));
    let barrier = Arc::new(Barrier::new(2));
    let handles: Vec<_> = ["a", "b"]
        .into_iter()
        .map(|who| {
            let f = f.clone();
            let barrier = barrier.clone();
            std::thread::spawn(move || {
                barrier.wait();
                post(
                    &f,
                    "/api/samples/s0/verdict",
                    who,
                    json!({"action": "edit", "version": 0, "edited_what": [format!("by {who}")], "edited_why": ["x"]}),
                )
            })
        })
        .collect();
    let mut results: Vec<(u16, Value)> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    results.sort_by_key(|r| r.0);
    assert_eq!(results[0].0, 200);
    assert_eq!(results[1].0, 409);
    assert_eq!(results[1].1["code"], "version_conflict");
    let winner = results[0].1["what"][0].as_str().unwrap().to_string();
    assert_eq!(f.store.record("s0").unwrap().what, [winner]);
    assert_eq!(f.store.record("s0").unwrap().version, 1);
}

pub fn stale_version_and_validation() {
    let f = fixture(1);
    let (s, e) = post(&f, "/api/samples/s0/verdict", "a", json!({"action": "reject", "version": 3}));
    assert_eq!((s, e["code"].as_str()), (409, Some("version_conflict")));
    let (s, e) = post(
        &f,
        "/api/samples/s0/verdict",
        "a",
        json!({"action": "edit", "version": 0, "edited_what": [], "edited_why": ["x"]}),
    );
    assert_eq!((s, e["code"].as_str()), (422, Some("validation_error")));
    let (s, _) = post(&f, "/api/samples/s0/verdict", "a", json!({"action": "approve", "version": 0}));
    assert_eq!(s, 422);
    let (s, _) = post(&f, "/api/samples/s0/verdict", "", json!({"action": "reject", "version": 0}));
    assert_eq!(s, 422);
    let (s, _) = post(&f, "/api/samples/zz/verdict", "a", json!({"action": "reject", "version": 0}));
    assert_eq!(s, 404);
    assert_eq!(f.store.record("s0").unwrap().version, 0);
}

pub fn state_machine_and_reopen() {
    let f = fixture(3);
    let edit = |v: u64| json!({"action": "edit", "version": v, "edited_what": ["bus"], "edited_why": ["stops"], "principle_tags": ["contextual_causality"]});
    // edited -> edited is allowed
    assert_eq!(post(&f, "/api/samples/s0/verdict", "a", edit(0)).0, 200);
    assert_eq!(post(&f, "/api/samples/s0/verdict", "a", edit(1)).0, 200);
    let (s, e) = post(&f, "/api/samples/s0/verdict", "a", json!({"action": "accept", "version": 2}));
    assert_eq!((s, e["code"].as_str()), (409, Some("invalid_transition")));
    // accepted is final until reopened
    assert_eq!(post(&f, "/api/samples/s1/verdict", "a", json!({"action": "accept", "version": 0})).0, 200);
    assert_eq!(post(&f, "/api/samples/s1/verdict", "a", edit(1)).0, 409);
    // rejected cannot come back except via reopen
    assert_eq!(post(&f, "/api/samples/s2/verdict", "a", json!({"action": "reject", "version": 0})).0, 200);
    assert_eq!(post(&f, "/api/samples/s2/verdict", "a", json!({"action": "accept", "version": 1})).0, 409);
    let (s, r) = post(&f, "/api/samples/s2/reopen", "lead", json!({"version": 1, "reason": "second look"}));
    assert_eq!(s, 200);
    assert_eq!((r["verification"].as_str(), r["version"].as_u64()), (Some("candidate"), Some(2)));
    assert_eq!(post(&f, "/api/samples/s2/reopen", "lead", json!({"version": 2})).0, 409);

    let (_, stats) = get(&f, "/api/stats");
    assert_eq!(stats["total"], 3);
    assert_eq!(stats["by_status"]["candidate"], 1);
    assert_eq!(stats["reopened"], 1);
    assert_eq!(stats["verdicts"], 4);
    let log = f.store.verdict_log();
    assert!(log.iter().all(|v| !v.reviewer.is_empty() && !v.timestamp.is_empty()));
    assert!(log.iter().any(|v| v.action.is_none() && v.reviewer == "lead"));
}

pub fn export_excludes_rejected() {
    let f = fixture(3);
    post(&f, "/api/samples/s0/verdict", "a", json!({"action": "accept", "version": 0}));
    post(&f, "/api/samples/s1/verdict", "a", json!({"action": "reject", "version": 0}));
    let exported = f.store.export(Split::Train);
    let ids: Vec<&str> = exported.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["s0"]);
    assert!(exported.iter().all(|r| !r.what.is_empty() && !r.why.is_empty()));
    let all = load_dataset(&f.dataset).unwrap();
    assert_eq!(export_split(&all, Split::Train).len(), 1);
    assert!(export_split(&all, Split::Test).is_empty());
}

pub fn static_dir_is_optional() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>review</h1>").unwrap();
    let store = Arc::new(ReviewStore::new(vec![record(0, ScenarioCategory::Normal)], vec![], Path::new(".")));
    let server = ServerHandle::start(store, Some(dir.path().to_path_buf())).unwrap();
    let mut r = agent().get(&server.url("/index.html")).call().unwrap();
    assert_eq!(r.body_mut().read_to_string().unwrap(), "<h1>review</h1>");
    let mut r = agent().get(&server.url("/api/unknown")).call().unwrap();
    assert_eq!(r.status().as_u16(), 404);
    let v: Value = r.body_mut().read_json().unwrap();
    assert_eq!(v["code"], "not_found");
}

pub fn review_suite() -> String {
    list_filters_and_pages();
    sample_detail_and_images();
    accept_moves_to_v1_and_copies_candidate();
    concurrent_edits_one_wins();
    stale_version_and_validation();
    state_machine_and_reopen();
    export_excludes_rejected();
    static_dir_is_optional();
    "8 HTTP scenarios incl. version-conflict race and export filter".into()
}
