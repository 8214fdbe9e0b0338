use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use patternscope::arch::GridLists;
use patternscope::cppn::ImageRgb;
use patternscope::pipeline::{
    generate_dataset, Manifest, RecordFilter, RenderOptions, SetKind, MANIFEST_FILE,
};
use patternscope_tagserve::store::{read_events, EVENT_FILE};
use patternscope_tagserve::{
    router, AppState, Clock, ManualClock, ServeConfig, SessionView, TagStore,
};
use serde_json::{json, Value};
use tower::ServiceExt;

const T0: u64 = 1_700_000_000_000;

/// `8 * seeds` tiny images.
fn dataset(dir: &Path, seeds: u64) -> Manifest {
    let grid = GridLists {
        layers: vec![2, 3],
        neurons: vec![10, 14],
        mu: vec![0.0],
        omega: vec![0.0, 1.0],
        alpha: vec![2.0],
    };
    let seeds: Vec<u64> = (1..=seeds).collect();
    let opts = RenderOptions {
        width: 8,
        height: 8,
        workers: 1,
    };
    generate_dataset(&grid, &seeds, dir, opts).unwrap()
}

struct Harness {
    _dir: tempfile::TempDir,
    app: Router,
    state: AppState,
    clock: ManualClock,
    config: ServeConfig,
}

fn harness(seeds: u64) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), seeds);
    let config = ServeConfig {
        manifest: dir.path().join(MANIFEST_FILE),
        data_dir: dir.path().join("tags"),
        snapshot_every: 5,
        ..Default::default()
    };
    let clock = ManualClock::new(T0);
    let state = AppState::open(&config, Arc::new(clock.clone())).unwrap();
    Harness {
        app: router(state.clone(), None),
        state,
        clock,
        config,
        _dir: dir,
    }
}

impl Harness {
    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    async fn json(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.call(method, uri, body).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    async fn open_session(&self, participant: &str, kind: &str, size: usize) -> SessionView {
        let (status, bytes) = self
            .call(
                "POST",
                "/sessions",
                Some(json!({ "participant_id": participant, "set_kind": kind, "size": size })),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&bytes));
        serde_json::from_slice(&bytes).unwrap()
    }

    async fn tag(&self, session: &str, record: &str, tagged: bool) -> StatusCode {
        self.call(
            "PUT",
            &format!("/sessions/{session}/tags/{record}"),
            Some(json!({ "tagged": tagged })),
        )
        .await
        .0
    }

    async fn export(&self, query: &str) -> (StatusCode, String) {
        let (status, bytes) = self.call("GET", &format!("/export{query}"), None).await;
        (status, String::from_utf8(bytes).unwrap())
    }

    fn manifest(&self) -> Manifest {
        Manifest::load(&self.config.manifest).unwrap()
    }
}

#[tokio::test]
async fn default_session_has_200_images() {
    let h = harness(25);
    let (status, body) = h
        .json(
            "POST",
            "/sessions",
            Some(json!({ "participant_id": "p1", "set_kind": "colour" })),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    let ids = body["record_ids"].as_array().unwrap();
    assert_eq!(ids.len(), 200);
    assert_eq!(body["time_limit_secs"], 600.0);
    assert_eq!(body["remaining_secs"], 600.0);
    assert_eq!(body["finalized"], false);
}

#[tokio::test]
async fn conflicting_and_invalid_sessions() {
    let h = harness(2);
    let first = h.open_session("p1", "colour", 5).await;

    let (status, body) = h
        .json("POST", "/sessions", Some(json!({ "participant_id": "p1", "set_kind": "colour", "size": 5 })))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "active_session");
    let (status, _) = h
        .json("POST", "/sessions", Some(json!({ "participant_id": "p1", "set_kind": "grayscale", "size": 5 })))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    // Another participant is unaffected.
    h.open_session("p2", "colour", 5).await;

    for bad in [
        json!({ "participant_id": "p3", "set_kind": "colour", "size": 17 }),
        json!({ "participant_id": "p3", "set_kind": "colour", "size": 0 }),
        json!({ "participant_id": "  ", "set_kind": "colour", "size": 2 }),
        json!({ "participant_id": "p3", "set_kind": "sepia", "size": 2 }),
        json!({ "participant_id": "p3", "set_kind": "colour", "size": -1 }),
        json!({ "participant_id": "p3", "set_kind": "colour", "time_limit_secs": 0 }),
        json!({ "set_kind": "colour" }),
    ] {
        let (status, body) = h.json("POST", "/sessions", Some(bad.clone())).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
        assert_eq!(body["error"], "invalid_request");
    }

    // Once finalized, the participant may start the next set.
    let (status, _) = h.json("POST", &format!("/sessions/{}/finalize", first.session_id), None).await;
    assert_eq!(status, StatusCode::OK);
    h.open_session("p1", "grayscale", 5).await;
}

#[tokio::test]
async fn sessions_are_seeded_per_participant() {
    let h = harness(2);
    let a = h.open_session("alice", "colour", 6).await;
    let b = h.open_session("bob", "colour", 6).await;
    assert_ne!(a.sample_seed, b.sample_seed);
    assert_ne!(a.record_ids, b.record_ids);

    let h2 = harness(2);
    let again = h2.open_session("alice", "colour", 6).await;
    assert_eq!(again.record_ids, a.record_ids);

    let (status, body) = h2
        .json(
            "POST",
            "/sessions",
            Some(json!({ "participant_id": "carol", "set_kind": "colour", "size": 6, "seed": a.sample_seed })),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["record_ids"], json!(a.record_ids));
}

#[tokio::test]
async fn images_are_served_from_the_manifest() {
    let h = harness(2);
    let s = h.open_session("p1", "colour", 4).await;
    let manifest = h.manifest();
    let base = h.config.manifest.parent().unwrap();
    for id in &s.record_ids {
        let (status, bytes) = h.call("GET", &format!("/sessions/{}/images/{id}", s.session_id), None).await;
        assert_eq!(status, StatusCode::OK);
        let expected = std::fs::read(manifest.resolve(base, manifest.get(id).unwrap())).unwrap();
        assert_eq!(bytes, expected);
    }
    let foreign = manifest
        .generated_colour()
        .find(|r| !s.record_ids.contains(&r.id))
        .unwrap();
    let (status, _) = h
        .call("GET", &format!("/sessions/{}/images/{}", s.session_id, foreign.id), None)
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = h.call("GET", &format!("/sessions/nope/images/{}", s.record_ids[0]), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = h.call("DELETE", &format!("/sessions/{}", s.session_id), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = h
        .call("GET", &format!("/sessions/{}/images/{}", s.session_id, s.record_ids[0]), None)
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = h.call("DELETE", &format!("/sessions/{}", s.session_id), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn grayscale_sessions_serve_twins() {
    let h = harness(2);
    let s = h.open_session("p1", "grayscale", 3).await;
    let manifest = h.manifest();
    for id in &s.record_ids {
        let record = manifest.get(id).expect("twin recorded in the saved manifest");
        assert_eq!(record.set_kind, SetKind::Grayscale);
        let (status, bytes) = h.call("GET", &format!("/sessions/{}/images/{id}", s.session_id), None).await;
        assert_eq!(status, StatusCode::OK);
        let img = ImageRgb::decode(&bytes).unwrap();
        assert!(img.data.chunks(3).all(|p| p[0] == p[1] && p[1] == p[2]));
    }
}

#[tokio::test]
async fn tag_edits_follow_last_write() {
    let h = harness(2);
    let s = h.open_session("p1", "colour", 4).await;
    let rid = &s.record_ids[1];
    for tagged in [true, false, true] {
        assert_eq!(h.tag(&s.session_id, rid, tagged).await, StatusCode::OK);
    }
    let applied = h.state.snapshot().applied;
    // Repeating the current state appends nothing.
    let (status, body) = h
        .json("PUT", &format!("/sessions/{}/tags/{rid}", s.session_id), Some(json!({ "tagged": true })))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["tagged"], true);
    assert_eq!(h.state.snapshot().applied, applied);
    assert_eq!(h.tag(&s.session_id, &s.record_ids[2], false).await, StatusCode::OK);
    assert_eq!(h.state.snapshot().applied, applied);

    let (_, view) = h.json("GET", &format!("/sessions/{}", s.session_id), None).await;
    assert_eq!(view["tagged"], json!([rid]));

    assert_eq!(h.tag("nope", rid, true).await, StatusCode::NOT_FOUND);
    let foreign = h
        .manifest()
        .generated_colour()
        .find(|r| !s.record_ids.contains(&r.id))
        .unwrap()
        .id
        .clone();
    assert_eq!(h.tag(&s.session_id, &foreign, true).await, StatusCode::FORBIDDEN);
    let (status, _) = h
        .call("PUT", &format!("/sessions/{}/tags/{rid}", s.session_id), Some(json!({ "tagged": "yes" })))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn time_limit_is_strict() {
    let h = harness(2);
    let s = h.open_session("p1", "colour", 3).await;
    let rid = &s.record_ids[0];
    h.clock.set_ms(T0 + 599_999);
    assert_eq!(h.tag(&s.session_id, rid, true).await, StatusCode::OK);
    h.clock.set_ms(T0 + 600_000);
    assert_eq!(h.tag(&s.session_id, rid, false).await, StatusCode::GONE);
    h.clock.set_ms(T0 + 601_000);
    assert_eq!(h.tag(&s.session_id, rid, false).await, StatusCode::GONE);

    // Expired sessions no longer block the participant and their tags count.
    h.open_session("p1", "grayscale", 3).await;
    let (_, csv) = h.export("").await;
    assert_eq!(csv.lines().count(), 2);

    let short = h
        .json(
            "POST",
            "/sessions",
            Some(json!({ "participant_id": "p2", "set_kind": "colour", "size": 2, "time_limit_secs": 2 })),
        )
        .await
        .1;
    let sid = short["session_id"].as_str().unwrap();
    let rid = short["record_ids"][0].as_str().unwrap();
    assert_eq!(h.tag(sid, rid, true).await, StatusCode::OK);
    h.clock.advance_ms(2_001);
    assert_eq!(h.tag(sid, rid, false).await, StatusCode::GONE);
}

#[tokio::test]
async fn finalize_freezes_tags() {
    let h = harness(2);
    let s = h.open_session("p1", "colour", 5).await;
    h.tag(&s.session_id, &s.record_ids[0], true).await;
    h.tag(&s.session_id, &s.record_ids[3], true).await;
    let (status, first) = h.json("POST", &format!("/sessions/{}/finalize", s.session_id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first["n_tagged"], 2);
    assert_eq!(first["n_images"], 5);
    let (status, second) = h.json("POST", &format!("/sessions/{}/finalize", s.session_id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first, second);
    assert_eq!(h.tag(&s.session_id, &s.record_ids[1], true).await, StatusCode::GONE);
    let (status, _) = h.json("POST", "/sessions/nope/finalize", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (_, view) = h.json("GET", &format!("/sessions/{}", s.session_id), None).await;
    assert_eq!(view["finalized"], true);
    assert_eq!(view["remaining_secs"], 0.0);
}

#[tokio::test]
async fn export_pools_closed_sessions() {
    let h = harness(2);
    let (status, csv) = h.export("").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(csv, "record_id,participant_id,set_kind,tagged\n");

    let b = h.open_session("bob", "colour", 8).await;
    let a = h.open_session("alice", "colour", 8).await;
    let picks_a: Vec<&String> = a.record_ids.iter().take(3).collect();
    let picks_b: Vec<&String> = b.record_ids.iter().filter(|r| !picks_a.contains(r)).take(2).collect();
    for r in &picks_a {
        h.tag(&a.session_id, r, true).await;
    }
    for r in &picks_b {
        h.tag(&b.session_id, r, true).await;
    }
    // Open sessions are not exported yet.
    assert_eq!(h.export("").await.1.lines().count(), 1);
    for s in [&a, &b] {
        h.call("POST", &format!("/sessions/{}/finalize", s.session_id), None).await;
    }
    let (_, csv) = h.export("").await;
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), picks_a.len() + picks_b.len());
    let keys: Vec<(String, String)> = rows
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f[2], "colour");
            assert_eq!(f[3], "true");
            (f[1].to_string(), f[0].to_string())
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(keys[0].0, "alice");

    assert_eq!(h.export("?set_kind=colour").await.1, csv);
    assert_eq!(h.export("?set_kind=grayscale").await.1.lines().count(), 1);
    assert_eq!(h.export("?set_kind=sepia").await.0, StatusCode::UNPROCESSABLE_ENTITY);

    // The export merges back into the manifest and drives record filters.
    let mut manifest = h.manifest();
    assert_eq!(manifest.apply_tag_export(csv.as_bytes()).unwrap(), 5);
    let by_alice: RecordFilter = "tagged_by=alice".parse().unwrap();
    let tagged: RecordFilter = "tagged=true".parse().unwrap();
    assert_eq!(manifest.records.iter().filter(|r| by_alice.matches(r)).count(), 3);
    assert_eq!(manifest.records.iter().filter(|r| tagged.matches(r)).count(), 5);
}

#[tokio::test]
async fn event_log_replay_reconstructs_export() {
    let h = harness(3);
    let mut sessions = Vec::new();
    for (i, p) in ["p1", "p2", "p3", "p4"].iter().enumerate() {
        let kind = if i % 2 == 0 { "colour" } else { "grayscale" };
        sessions.push(h.open_session(p, kind, 6).await);
    }
    // A deterministic mix of edits, including redundant ones.
    let mut x: u64 = 0x9e37_79b9_7f4a_7c15;
    for _ in 0..120 {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        let s = &sessions[(x % 4) as usize];
        let rid = &s.record_ids[((x >> 8) % 6) as usize];
        h.tag(&s.session_id, rid, !(x >> 20).is_multiple_of(3)).await;
        h.clock.advance_ms(1_000);
    }
    h.call("POST", &format!("/sessions/{}/finalize", sessions[0].session_id), None).await;
    h.call("POST", &format!("/sessions/{}/finalize", sessions[1].session_id), None).await;
    h.call("DELETE", &format!("/sessions/{}", sessions[2].session_id), None).await;
    // sessions[3] expires.
    h.clock.advance_ms(600_000);
    let (_, exported) = h.export("").await;
    assert!(exported.lines().count() > 1);

    let now = h.clock.now_ms();
    let events = read_events(&h.config.data_dir.join(EVENT_FILE)).unwrap();
    let replayed = TagStore::replay(&events).unwrap();
    assert_eq!(&replayed, h.state.snapshot().as_ref());
    assert_eq!(patternscope_tagserve::export_csv(&replayed.export_rows(None, now)), exported);

    // A restarted server over the same data dir exports the same CSV.
    let restarted = AppState::open(&h.config, Arc::new(h.clock.clone())).unwrap();
    let app = router(restarted, None);
    let resp = app
        .oneshot(Request::get("/export").body(Body::empty()).unwrap())
        .await
        .unwrap();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(bytes, exported.as_bytes());
}

#[tokio::test]
async fn static_assets_and_health() {
    let h = harness(1);
    let assets = tempfile::tempdir().unwrap();
    std::fs::write(assets.path().join("index.html"), "<html>ui</html>").unwrap();
    let app = router(h.state.clone(), Some(assets.path()));
    let resp = app
        .clone()
        .oneshot(Request::get("/index.html").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let resp = app
        .oneshot(Request::get("/health").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}
