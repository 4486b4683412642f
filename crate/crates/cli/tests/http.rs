#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use dataforge::registry::Registry;
use dataforge::schema::render_row;
use dataforge_cli::server::{router, AppState, MAX_LIMIT};

use common::fixtures::{fixture_tags, jsonl_def, register_dataset, source, write_jsonl};

struct Fixture {
    _tmp: tempfile::TempDir,
    root: std::path::PathBuf,
    state: Arc<AppState>,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let reg = Registry::open(root.join("registry"));
    register_dataset(
        &reg,
        &root.join("data"),
        "corpus/news",
        &[("train", 250), ("test", 31)],
        &fixture_tags(0),
        1,
    );
    register_dataset(
        &reg,
        &root.join("data"),
        "corpus/reviews",
        &[("train", 12)],
        &fixture_tags(1),
        2,
    );
    // registered without a card
    let data = root.join("data/bare.jsonl");
    write_jsonl(&data, 0, 3, 3);
    let def = jsonl_def("bare", [("train".to_owned(), vec![source(&data)])].into());
    reg.add_entry(&def, None, Vec::new()).unwrap();
    let state = Arc::new(AppState::load(&root.join("registry"), &root.join("cache")).unwrap());
    Fixture { _tmp: tmp, root, state }
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let resp = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn lists_and_describes_datasets() {
    let f = fixture();
    let app = router(Arc::clone(&f.state));
    let (s, list) = get(&app, "/api/datasets").await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = list
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["bare", "corpus/news", "corpus/reviews"]);
    assert_eq!(list[1]["num_rows"], 281);

    let (s, info) = get(&app, "/api/datasets/corpus/news").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(info["splits"]["test"]["num_rows"], 31);
    assert_eq!(info["schema"]["columns"][1]["name"], "text");
    assert_eq!(info["tags"]["languages"], serde_json::json!(["en"]));
}

#[tokio::test]
async fn paging_covers_every_row_once() {
    let f = fixture();
    let app = router(Arc::clone(&f.state));
    let table = &f.state.datasets["corpus/news"].splits["train"];
    let want: Vec<Value> = table
        .read_all()
        .unwrap()
        .iter()
        .map(|r| render_row(table.schema(), r))
        .collect();
    for limit in [1u64, 7, 100] {
        let mut got = Vec::new();
        let mut offset = 0;
        loop {
            let (s, page) = get(
                &app,
                &format!("/api/datasets/corpus/news/rows?split=train&offset={offset}&limit={limit}"),
            )
            .await;
            assert_eq!(s, StatusCode::OK);
            let total = page["total"].as_u64().unwrap();
            let rows = page["rows"].as_array().unwrap();
            assert_eq!(rows.len() as u64, limit.min(total - offset));
            got.extend(rows.iter().cloned());
            offset += rows.len() as u64;
            if offset == total {
                break;
            }
        }
        assert_eq!(got, want, "limit {limit}");
    }
    let (_, page) = get(&app, "/api/datasets/corpus/news/rows?split=train&offset=250").await;
    assert_eq!(page["rows"], serde_json::json!([]));
    let (_, page) = get(&app, "/api/datasets/corpus/news/rows?split=train&limit=999999").await;
    assert_eq!(page["limit"], MAX_LIMIT);
    assert_eq!(page["rows"].as_array().unwrap().len(), 250);
}

#[tokio::test]
async fn error_responses() {
    let f = fixture();
    let app = router(Arc::clone(&f.state));
    let cases = [
        ("/api/datasets/nope", StatusCode::NOT_FOUND, "unknown_dataset"),
        (
            "/api/datasets/nope/rows?split=train",
            StatusCode::NOT_FOUND,
            "unknown_dataset",
        ),
        (
            "/api/datasets/corpus/news/rows?split=dev",
            StatusCode::NOT_FOUND,
            "unknown_split",
        ),
        ("/api/datasets/bare/card", StatusCode::NOT_FOUND, "no_card"),
        ("/api/datasets/corpus/news/rows", StatusCode::BAD_REQUEST, "bad_request"),
        (
            "/api/datasets/corpus/news/rows?split=train&limit=0",
            StatusCode::BAD_REQUEST,
            "bad_request",
        ),
        (
            "/api/datasets/corpus/news/rows?split=train&offset=251",
            StatusCode::BAD_REQUEST,
            "bad_request",
        ),
        (
            "/api/datasets/corpus/news/rows?split=train&offset=-1",
            StatusCode::BAD_REQUEST,
            "bad_request",
        ),
        (
            "/api/datasets/corpus/news/rows?split=train&page=2",
            StatusCode::BAD_REQUEST,
            "bad_request",
        ),
        (
            "/api/search?lang=klingon",
            StatusCode::BAD_REQUEST,
            "unknown_vocabulary_value",
        ),
        ("/api/search?colour=red", StatusCode::BAD_REQUEST, "bad_request"),
        ("/api/elsewhere", StatusCode::NOT_FOUND, "not_found"),
    ];
    for (uri, status, code) in cases {
        let (s, body) = get(&app, uri).await;
        assert_eq!((s, body["error"].as_str()), (status, Some(code)), "{uri}");
    }
}

#[tokio::test]
async fn card_and_search() {
    let f = fixture();
    let app = router(Arc::clone(&f.state));
    let (s, card) = get(&app, "/api/datasets/corpus/reviews/card").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(card["revision"], 1);
    assert!(card["markdown"].as_str().unwrap().contains("## Dataset Structure"));

    let (_, hits) = get(&app, "/api/search?lang=es").await;
    let ids: Vec<&str> = hits
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["corpus/reviews"]);
    let (_, hits) = get(&app, "/api/search?lang=en,es&license=mit").await;
    let ids: Vec<&str> = hits
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["corpus/news"]);
    let (_, hits) = get(&app, "/api/search").await;
    assert_eq!(hits.as_array().unwrap().len(), 3);
}

fn tree_digest(dir: &Path) -> Vec<(String, Vec<u8>, std::time::SystemTime)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            let meta = std::fs::metadata(&p).unwrap();
            if meta.is_dir() {
                stack.push(p.clone());
                out.push((p.display().to_string(), Vec::new(), meta.modified().unwrap()));
            } else {
                out.push((
                    p.display().to_string(),
                    std::fs::read(&p).unwrap(),
                    meta.modified().unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[tokio::test]
async fn requests_never_write() {
    let f = fixture();
    let app = router(Arc::clone(&f.state));
    let before = tree_digest(&f.root);
    for uri in [
        "/api/datasets",
        "/api/datasets/corpus/news",
        "/api/datasets/corpus/news/rows?split=test&offset=3&limit=9",
        "/api/datasets/corpus/news/card",
        "/api/datasets/bare/card",
        "/api/datasets/nope/rows",
        "/api/search?task=translation",
        "/api/search?lang=klingon",
    ] {
        get(&app, uri).await;
    }
    let resp = app
        .clone()
        .oneshot(Request::post("/api/datasets").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::METHOD_NOT_ALLOWED);
    assert_eq!(tree_digest(&f.root), before);
}
