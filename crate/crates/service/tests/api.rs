use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use gridlab_core::fixtures::{bar_chart, Canvas, BLACK};
use gridlab_core::{annotation_mask, Annotation, GridSpec, ImportanceMap, Raster};
use gridlab_service::{router, Store, StoreConfig, TOKEN_HEADER};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct App {
    router: Router,
    _dir: tempfile::TempDir,
}

fn app() -> App {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(StoreConfig::new(dir.path())).unwrap();
    App {
        router: router(Arc::new(store)),
        _dir: dir,
    }
}

struct Reply {
    status: StatusCode,
    content_type: Option<String>,
    bytes: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }
}

impl App {
    async fn send(&self, req: Request<Body>) -> Reply {
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let content_type = resp
            .headers()
            .get("content-type")
            .map(|v| v.to_str().unwrap().to_owned());
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply {
            status,
            content_type,
            bytes,
        }
    }

    async fn get(&self, uri: &str) -> Reply {
        self.send(Request::get(uri).body(Body::empty()).unwrap()).await
    }

    async fn post(&self, uri: &str, body: Value, token: Option<&str>) -> Reply {
        let mut req = Request::post(uri).header("content-type", "application/json");
        if let Some(t) = token {
            req = req.header(TOKEN_HEADER, t);
        }
        self.send(req.body(Body::from(body.to_string())).unwrap()).await
    }

    async fn upload(&self, image: &Raster, extra: Value) -> Reply {
        let mut body = json!({
            "image_png_base64": base64::engine::general_purpose::STANDARD.encode(image.encode_png().unwrap()),
            "task_prompt": "Annotate the areas you need to answer the question.",
            "question": "Which category is largest?",
        });
        for (k, v) in extra.as_object().unwrap() {
            body[k] = v.clone();
        }
        self.post("/api/stimuli", body, None).await
    }

    async fn session(&self, participant: &str, mode: &str) -> (String, String) {
        let r = self
            .post("/api/sessions", json!({ "participant_id": participant, "mode": mode, "seed": 7 }), None)
            .await;
        assert_eq!(r.status, StatusCode::CREATED);
        let v = r.json();
        (v["session_id"].as_str().unwrap().into(), v["token"].as_str().unwrap().into())
    }
}

fn blank(w: u32, h: u32) -> Raster {
    Canvas::new(w, h).into_raster()
}

fn square(w: u32, h: u32, offset: i64) -> Raster {
    let mut c = Canvas::new(w, h);
    c.fill_rect(offset, offset, 40, 40, BLACK);
    c.into_raster()
}

fn annotation(participant: &str, spec: &GridSpec, blocks: &[&str]) -> Annotation {
    Annotation {
        participant_id: participant.into(),
        stimulus_id: spec.stimulus_id.clone(),
        grid_mode: spec.mode,
        selected_block_ids: blocks.iter().map(|b| b.to_string()).collect(),
        duration_ms: 4200,
        click_count: blocks.len() as i64,
        mouse_travel_px: 0.0,
        events: vec![],
    }
}

fn spec_of(v: &Value, mode: &str) -> GridSpec {
    serde_json::from_value(v["grid_specs"][mode].clone()).unwrap()
}

#[tokio::test]
async fn blank_upload_builds_both_grids_and_is_idempotent() {
    let app = app();
    let first = app.upload(&blank(256, 256), json!({})).await;
    assert_eq!(first.status, StatusCode::CREATED);
    let v = first.json();
    assert_eq!(v["grid_specs"]["static"]["blocks"].as_array().unwrap().len(), 64);
    assert_eq!(v["grid_specs"]["adaptive"]["blocks"].as_array().unwrap().len(), 1);
    assert_eq!(v["grid_specs"]["adaptive"]["blocks"][0]["region"], "background");
    assert_eq!(v["solver_timed_out"], false);

    let again = app.upload(&blank(256, 256), json!({})).await;
    assert_eq!(again.status, StatusCode::OK);
    assert_eq!(again.json()["id"], v["id"]);
    let list = app.get("/api/stimuli").await.json();
    assert_eq!(list["stimuli"].as_array().unwrap().len(), 1);

    let id = v["id"].as_str().unwrap();
    let grid = app.get(&format!("/api/stimuli/{id}/grid?mode=adaptive")).await;
    assert_eq!(grid.status, StatusCode::OK);
    assert_eq!(grid.json(), v["grid_specs"]["adaptive"]);
    let fetched = app.get(&format!("/api/stimuli/{id}")).await;
    assert_eq!(fetched.json(), v);
    let image = app.get(&format!("/api/stimuli/{id}/image")).await;
    assert_eq!(image.content_type.as_deref(), Some("image/png"));
    assert_eq!(Raster::decode_png(&image.bytes).unwrap(), blank(256, 256));
}

#[tokio::test]
async fn upload_errors_are_client_errors() {
    let app = app();
    let tiny = app.upload(&blank(10, 10), json!({ "tile_size": 32 })).await;
    assert_eq!(tiny.status, StatusCode::BAD_REQUEST);
    let msg = tiny.json()["error"]["message"].as_str().unwrap().to_owned();
    assert!(msg.contains("..=10"), "{msg}");

    let garbage = app
        .post("/api/stimuli", json!({ "image_png_base64": "aGVsbG8=", "task_prompt": "x" }), None)
        .await;
    assert_eq!(garbage.status, StatusCode::BAD_REQUEST);
    let empty_prompt = app.upload(&blank(64, 64), json!({ "task_prompt": "  " })).await;
    assert_eq!(empty_prompt.status, StatusCode::BAD_REQUEST);
    let zero_cap = app.upload(&blank(64, 64), json!({ "max_block_w": 0 })).await;
    assert_eq!(zero_cap.status, StatusCode::BAD_REQUEST);
    assert_eq!(app.get("/api/stimuli/nope").await.status, StatusCode::NOT_FOUND);
    assert_eq!(app.get("/api/stimuli/nope/grid").await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn chart_upload_gets_a_coarser_adaptive_grid() {
    let app = app();
    let v = app.upload(&bar_chart(), json!({})).await.json();
    let adaptive = spec_of(&v, "adaptive");
    adaptive.validate_cover(v["width"].as_u64().unwrap() as u32, v["height"].as_u64().unwrap() as u32).unwrap();
    assert!(adaptive.blocks.len() < 64, "{}", adaptive.blocks.len());
}

#[tokio::test]
async fn submission_lifecycle() {
    let app = app();
    let a = app.upload(&square(128, 128, 10), json!({ "static_n": 4 })).await.json();
    let b = app.upload(&square(128, 128, 50), json!({ "static_n": 4 })).await.json();
    let (spec_a, spec_b) = (spec_of(&a, "static"), spec_of(&b, "static"));
    let (session, token) = app.session("p-1", "static").await;

    let next = app.get_with_token(&format!("/api/sessions/{session}/next"), &token).await;
    assert_eq!(next.status, StatusCode::OK);
    let next = next.json();
    assert_eq!(next["session"]["progress"], 0);
    assert_eq!(next["session"]["assigned_mode"], "static");
    let first_id = next["next"]["stimulus_id"].as_str().unwrap().to_owned();
    assert_eq!(next["next"]["grid_spec"]["mode"], "static");

    // Missing or wrong token.
    let ann = annotation("p-1", &spec_a, &["s-0-0"]);
    let body = serde_json::to_value(&ann).unwrap();
    assert_eq!(app.post("/api/annotations", body.clone(), None).await.status, StatusCode::UNAUTHORIZED);
    assert_eq!(app.post("/api/annotations", body.clone(), Some("bogus")).await.status, StatusCode::UNAUTHORIZED);

    // Block id from the adaptive grid.
    let wrong = annotation("p-1", &spec_a, &["s-0-0", "a-background-0"]);
    let r = app.post("/api/annotations", serde_json::to_value(&wrong).unwrap(), Some(&token)).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["error"]["offenders"], json!(["a-background-0"]));

    // Mode mismatch with the session.
    let mut adaptive = annotation("p-1", &spec_of(&a, "adaptive"), &[]);
    adaptive.selected_block_ids = spec_of(&a, "adaptive").blocks.iter().take(1).map(|b| b.id.clone()).collect();
    adaptive.click_count = 1;
    let r = app.post("/api/annotations", serde_json::to_value(&adaptive).unwrap(), Some(&token)).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    // Telemetry that disagrees with the event log.
    let mut lying = annotation("p-1", &spec_a, &["s-0-0"]);
    lying.events = vec![gridlab_core::InteractionEvent {
        t_ms: 10,
        kind: gridlab_core::EventKind::ToggleOn,
        x: 5,
        y: 5,
    }];
    lying.click_count = 3;
    let r = app.post("/api/annotations", serde_json::to_value(&lying).unwrap(), Some(&token)).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    // Valid submission, retrievable by id.
    let r = app.post("/api/annotations", body.clone(), Some(&token)).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let receipt = r.json();
    assert_eq!(receipt["resubmitted"], false);
    let id = receipt["annotation_id"].as_str().unwrap();
    let stored = app.get(&format!("/api/annotations/{id}")).await.json();
    assert_eq!(stored["annotation"], body);

    // Identical retry is acknowledged with the same receipt.
    let retry = app.post("/api/annotations", body.clone(), Some(&token)).await;
    assert_eq!(retry.status, StatusCode::OK);
    assert_eq!(retry.json()["annotation_id"], receipt["annotation_id"]);

    // Resubmission replaces.
    let changed = serde_json::to_value(annotation("p-1", &spec_a, &["s-1-1", "s-1-2"])).unwrap();
    let r = app.post("/api/annotations", changed.clone(), Some(&token)).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let resub = r.json();
    assert_eq!(resub["resubmitted"], true);
    assert_eq!(app.get(&format!("/api/annotations/{id}")).await.status, StatusCode::NOT_FOUND);
    let imp = app.get(&format!("/api/stimuli/{}/importance?mode=static", spec_a.stimulus_id)).await.json();
    assert_eq!(imp["participants"], 1);

    let next = app.get_with_token(&format!("/api/sessions/{session}/next"), &token).await.json();
    assert_eq!(next["session"]["progress"], 1);
    assert_ne!(next["next"]["stimulus_id"].as_str().unwrap(), "");
    assert!(first_id == spec_a.stimulus_id || first_id == spec_b.stimulus_id);

    // Completing the last stimulus closes the session.
    let last = serde_json::to_value(annotation("p-1", &spec_b, &["s-2-2"])).unwrap();
    assert_eq!(app.post("/api/annotations", last, Some(&token)).await.status, StatusCode::CREATED);
    let done = app.get_with_token(&format!("/api/sessions/{session}/next"), &token).await.json();
    assert_eq!(done["session"]["completed"], true);
    assert!(done["next"].is_null());
    let late = app.post("/api/annotations", body, Some(&token)).await;
    assert_eq!(late.status, StatusCode::CONFLICT);
    assert_eq!(late.json()["error"]["code"], "conflict");
}

impl App {
    async fn get_with_token(&self, uri: &str, token: &str) -> Reply {
        self.send(Request::get(uri).header(TOKEN_HEADER, token).body(Body::empty()).unwrap())
            .await
    }
}

#[tokio::test]
async fn importance_and_convergence_endpoints() {
    let app = app();
    let v = app.upload(&square(128, 128, 10), json!({ "static_n": 4 })).await.json();
    let spec = spec_of(&v, "static");
    let id = spec.stimulus_id.clone();

    let none = app.get(&format!("/api/stimuli/{id}/importance?mode=static")).await;
    assert_eq!(none.status, StatusCode::CONFLICT);
    let err = none.json();
    assert_eq!(err["error"]["code"], "not_enough_annotations");
    assert_eq!(err["error"]["count"], 0);

    let (_, token) = app.session("p-1", "static").await;
    let first = annotation("p-1", &spec, &["s-0-0", "s-3-1"]);
    app.post("/api/annotations", serde_json::to_value(&first).unwrap(), Some(&token)).await;

    let one = app.get(&format!("/api/stimuli/{id}/importance?mode=static")).await.json();
    let mask = ImportanceMap::from_mask(&annotation_mask(&first, &spec).unwrap());
    let values: Vec<f64> = serde_json::from_value(one["values"].clone()).unwrap();
    assert_eq!(values, mask.values);
    assert_eq!(one["participants"], 1);

    let png = app
        .send(
            Request::get(format!("/api/stimuli/{id}/importance?mode=static"))
                .header("accept", "image/png")
                .body(Body::empty())
                .unwrap(),
        )
        .await;
    assert_eq!(png.content_type.as_deref(), Some("image/png"));
    assert_eq!(ImportanceMap::decode_png(&png.bytes).unwrap().values, mask.values);

    let conv = app.get(&format!("/api/stimuli/{id}/convergence?mode=static&metric=ssim")).await;
    assert_eq!(conv.status, StatusCode::CONFLICT);
    assert_eq!(conv.json()["error"]["required"], 2);

    for (k, blocks) in [["s-0-0", "s-3-2"], ["s-0-0", "s-3-1"], ["s-0-1", "s-3-1"]].iter().enumerate() {
        let pid = format!("q-{k}");
        let (_, token) = app.session(&pid, "static").await;
        let ann = annotation(&pid, &spec, blocks);
        let r = app.post("/api/annotations", serde_json::to_value(&ann).unwrap(), Some(&token)).await;
        assert_eq!(r.status, StatusCode::CREATED);
    }
    let single = app
        .get(&format!("/api/stimuli/{id}/convergence?mode=static&metric=dice&orders=4&threshold=0.8&seed=3"))
        .await;
    assert_eq!(single.status, StatusCode::OK);
    let report = single.json();
    assert_eq!(report["metric"], "dice");
    assert_eq!(report["participants"], 4);
    assert_eq!(report["orders"], 4);
    assert_eq!(report["per_order_n"].as_array().unwrap().len(), 4);
    let again = app
        .get(&format!("/api/stimuli/{id}/convergence?mode=static&metric=dice&orders=4&threshold=0.8&seed=3"))
        .await;
    assert_eq!(again.bytes, single.bytes);

    let all = app.get(&format!("/api/stimuli/{id}/convergence?mode=static")).await.json();
    assert_eq!(all.as_array().unwrap().len(), 5);
    let bad = app.get(&format!("/api/stimuli/{id}/convergence?mode=static&metric=cosine")).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    let bad = app.get(&format!("/api/stimuli/{id}/convergence?mode=static&threshold=1.5")).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
    let adaptive = app.get(&format!("/api/stimuli/{id}/importance?mode=adaptive")).await;
    assert_eq!(adaptive.status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn sessions_alternate_modes_and_reproduce_orders() {
    let app = app();
    for offset in [4, 20, 36] {
        app.upload(&square(128, 128, offset), json!({})).await;
    }
    let mut modes = Vec::new();
    let mut orders = Vec::new();
    for k in 0..4 {
        let r = app
            .post("/api/sessions", json!({ "participant_id": format!("p{k}"), "seed": 99 }), None)
            .await
            .json();
        modes.push(r["assigned_mode"].as_str().unwrap().to_owned());
        orders.push(r["stimulus_order"].clone());
    }
    assert_eq!(modes, ["static", "adaptive", "static", "adaptive"]);
    assert!(orders.windows(2).all(|w| w[0] == w[1]));
    let mut ids: Vec<String> = serde_json::from_value(orders[0].clone()).unwrap();
    ids.sort();
    let mut all: Vec<String> = serde_json::from_value(app.get("/api/stimuli").await.json()["stimuli"].clone()).unwrap();
    all.sort();
    assert_eq!(ids, all);

    let anon = app.post("/api/sessions", json!({}), None).await;
    assert_eq!(anon.status, StatusCode::CREATED);
    let (sid, _) = app.session("p9", "adaptive").await;
    let r = app.get(&format!("/api/sessions/{sid}/next")).await;
    assert_eq!(r.status, StatusCode::UNAUTHORIZED);
    let bad = app.post("/api/sessions", json!({ "mode": "dynamic" }), None).await;
    assert_eq!(bad.status, StatusCode::BAD_REQUEST);
}
