//! End-to-end tests against a live server on an ephemeral port.

use std::net::SocketAddr;
use std::time::Instant;

use deformkit::editing::EditConfig;
use deformkit::mesh::parse_obj;
use deformkit::net::{Ljn, NetworkConfig};
use deformkit::shapes::{self, CreatureParams};
use deformkit::TriMesh;
use deformkit_service::{bind, serve, AppState};
use serde_json::{json, Value};

struct Server {
    base: String,
    client: reqwest::Client,
    _stop: tokio::sync::oneshot::Sender<()>,
}

async fn start() -> Server {
    start_with(None).await
}

async fn start_with(net: Option<Ljn>) -> Server {
    let listener = bind(SocketAddr::from(([127, 0, 0, 1], 0))).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(serve(listener, AppState::new(net, EditConfig::default()), async {
        let _ = rx.await;
    }));
    Server {
        base: format!("http://{addr}"),
        client: reqwest::Client::new(),
        _stop: tx,
    }
}

impl Server {
    async fn post_text(&self, path: &str, body: String) -> (u16, Value) {
        let r = self.client.post(format!("{}{path}", self.base)).body(body).send().await.unwrap();
        let status = r.status().as_u16();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn post_json(&self, path: &str, body: Value) -> (u16, Value) {
        self.post_text(path, body.to_string()).await
    }

    async fn get_text(&self, path: &str) -> (u16, String) {
        let r = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (r.status().as_u16(), r.text().await.unwrap())
    }

    async fn session(&self, mesh: &TriMesh) -> String {
        let (status, body) = self.post_text("/session", mesh.to_obj_string()).await;
        assert_eq!(status, 200, "{body}");
        body["id"].as_str().unwrap().to_string()
    }
}

fn bar() -> TriMesh {
    shapes::creature(&CreatureParams::bar(10, 16))
}

fn ends(m: &TriMesh) -> (Vec<usize>, Vec<usize>) {
    let (lo, hi) = m.bounding_box();
    let len = hi.x - lo.x;
    let v = m.vertices();
    (
        (0..v.len()).filter(|&i| v[i].x < lo.x + 0.1 * len).collect(),
        (0..v.len()).filter(|&i| v[i].x > hi.x - 0.1 * len).collect(),
    )
}

const IDENTITY: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

fn flat(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

fn max_dev(flat: &[f64], m: &TriMesh) -> f64 {
    m.vertices()
        .iter()
        .enumerate()
        .map(|(i, p)| ((flat[3 * i] - p.x).powi(2) + (flat[3 * i + 1] - p.y).powi(2) + (flat[3 * i + 2] - p.z).powi(2)).sqrt())
        .fold(0.0, f64::max)
}

fn bend(indices: &[usize]) -> Value {
    let (c, s) = (0.6f64.cos(), 0.6f64.sin());
    json!({ "transforms": [{
        "indices": indices,
        "rotation": [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0],
        "translation": [0.5, 1.0, 0.0],
    }]})
}

#[tokio::test]
async fn health_answers() {
    let s = start().await;
    let (status, body) = s.get_text("/health").await;
    assert_eq!(status, 200);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn session_creation_errors() {
    let s = start().await;
    let (status, body) = s.post_text("/session", "v 0 0 0\nv 1 0 zero\n".into()).await;
    assert_eq!(status, 400);
    assert_eq!(body["code"], "parse_error");
    assert_eq!(body["detail"]["line"], 2);
    assert!(body["message"].as_str().unwrap().contains("line 2"));

    let (status, body) = s.post_text("/session", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n".into()).await;
    assert_eq!(status, 400, "{body}");

    let (status, body) = s.post_text("/session", "v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n".into()).await;
    assert_eq!(status, 422, "{body}");
    assert_eq!(body["code"], "invalid_mesh");
}

#[tokio::test]
async fn handles_are_validated() {
    let s = start().await;
    let m = bar();
    let id = s.session(&m).await;
    let n = m.num_vertices();
    let (status, body) = s.post_json(&format!("/session/{id}/handles"), json!({ "indices": [] })).await;
    assert_eq!((status, body["indices"].clone()), (200, json!([])));
    let (status, body) = s.post_json(&format!("/session/{id}/handles"), json!({ "indices": [4, 2, 4] })).await;
    assert_eq!((status, body["indices"].clone()), (200, json!([2, 4])));
    let (status, body) = s
        .post_json(&format!("/session/{id}/handles"), json!({ "indices": [1, n, n + 5] }))
        .await;
    assert_eq!(status, 422);
    assert_eq!(body["code"], "invalid_handles");
    assert_eq!(body["detail"]["indices"], json!([n, n + 5]));
    let (status, _) = s.post_json(&format!("/session/{id}/handles"), json!({ "wrong": [] })).await;
    assert_eq!(status, 400);
}

#[tokio::test]
async fn edit_round_trip() {
    let s = start().await;
    let m = bar();
    let id = s.session(&m).await;

    // Fresh session serves the original mesh.
    let (status, obj) = s.get_text(&format!("/session/{id}/mesh")).await;
    assert_eq!(status, 200);
    assert_eq!(obj, m.to_obj_string());

    // Editing before handles are set is a state conflict.
    let identity = json!({ "transforms": [{ "all": true, "rotation": IDENTITY, "translation": [0.0, 0.0, 0.0] }] });
    let (status, body) = s.post_json(&format!("/session/{id}/edit"), identity.clone()).await;
    assert_eq!((status, body["code"].clone()), (409, json!("no_handles")));

    let (l, r) = ends(&m);
    let all: Vec<usize> = [l.clone(), r.clone()].concat();
    s.post_json(&format!("/session/{id}/handles"), json!({ "indices": all })).await;
    let (status, body) = s.post_json(&format!("/session/{id}/edit"), identity).await;
    assert_eq!(status, 200, "{body}");
    assert!(max_dev(&flat(&body["vertices"]), &m) < 1e-6);
    assert_eq!(body["faceEnergy"].as_array().unwrap().len(), m.num_faces());

    let (status, first) = s.post_json(&format!("/session/{id}/edit"), bend(&r)).await;
    assert_eq!(status, 200);
    let (_, second) = s.post_json(&format!("/session/{id}/edit"), bend(&r)).await;
    assert_eq!(first, second, "edits are idempotent");

    // The mesh endpoint reflects the last result exactly.
    let (_, obj) = s.get_text(&format!("/session/{id}/mesh")).await;
    let served = parse_obj(&obj).unwrap();
    assert_eq!(max_dev(&flat(&first["vertices"]), &served), 0.0);
    assert_eq!(served.faces(), m.faces());
}

#[tokio::test]
async fn edit_errors() {
    let s = start().await;
    let m = bar();
    let id = s.session(&m).await;
    let (l, r) = ends(&m);
    s.post_json(&format!("/session/{id}/handles"), json!({ "indices": ([l, r.clone()].concat()) })).await;

    let shear = json!({ "transforms": [{ "all": true, "rotation": [1.0, 0.3, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], "translation": [0.0, 0.0, 0.0] }] });
    let (status, body) = s.post_json(&format!("/session/{id}/edit"), shear).await;
    assert_eq!((status, body["code"].clone()), (422, json!("invalid_argument")));

    let neither = json!({ "transforms": [{ "rotation": IDENTITY, "translation": [0.0, 0.0, 0.0] }] });
    assert_eq!(s.post_json(&format!("/session/{id}/edit"), neither).await.0, 422);
    let not_handle = json!({ "transforms": [{ "indices": [m.num_vertices() / 2], "rotation": IDENTITY, "translation": [0.0, 0.0, 0.0] }] });
    assert_eq!(s.post_json(&format!("/session/{id}/edit"), not_handle).await.0, 422);

    assert_eq!(s.post_json("/session/nope/edit", bend(&r)).await.0, 404);
    assert_eq!(s.get_text("/session/nope/mesh").await.0, 404);
    let (status, body) = s.post_json("/session/nope/handles", json!({ "indices": [] })).await;
    assert_eq!((status, body["code"].clone()), (404, json!("not_found")));
}

#[tokio::test]
async fn fully_handled_rigid_motion() {
    let s = start().await;
    let m = bar();
    let id = s.session(&m).await;
    let all: Vec<usize> = (0..m.num_vertices()).collect();
    s.post_json(&format!("/session/{id}/handles"), json!({ "indices": all })).await;
    let rot = nalgebra::Rotation3::from_euler_angles(0.4, 0.1, -0.7).into_inner();
    let t = nalgebra::Vector3::new(-1.0, 0.5, 2.0);
    let req = json!({ "transforms": [{ "all": true, "rotation": rot.transpose().as_slice(), "translation": t.as_slice() }] });
    let (status, body) = s.post_json(&format!("/session/{id}/edit"), req).await;
    assert_eq!(status, 200, "{body}");
    let moved = m.with_vertices(m.vertices().iter().map(|p| rot * p + t).collect()).unwrap();
    assert!(max_dev(&flat(&body["vertices"]), &moved) < 1e-6);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let s = start().await;
    let m = bar();
    let (a, b) = (s.session(&m).await, s.session(&m).await);
    assert_ne!(a, b);
    let (l, r) = ends(&m);
    for id in [&a, &b] {
        s.post_json(&format!("/session/{id}/handles"), json!({ "indices": ([l.clone(), r.clone()].concat()) })).await;
    }
    let (_, ea) = s.post_json(&format!("/session/{a}/edit"), bend(&r)).await;
    // b is untouched by a's edit.
    assert_eq!(s.get_text(&format!("/session/{b}/mesh")).await.1, m.to_obj_string());
    let small = json!({ "transforms": [{ "indices": r, "rotation": IDENTITY, "translation": [0.0, 0.3, 0.0] }] });
    let (_, eb) = s.post_json(&format!("/session/{b}/edit"), small).await;
    assert_ne!(ea["vertices"], eb["vertices"]);
    let (_, obj_a) = s.get_text(&format!("/session/{a}/mesh")).await;
    assert_eq!(max_dev(&flat(&ea["vertices"]), &parse_obj(&obj_a).unwrap()), 0.0);

    // Concurrent edits on both sessions complete with their own results.
    let (pa, pb) = (format!("/session/{a}/edit"), format!("/session/{b}/edit"));
    let (ra, rb) = tokio::join!(s.post_json(&pa, bend(&r)), s.post_json(&pb, bend(&r)));
    assert_eq!(ra.1, ea);
    assert_eq!(ra.1, rb.1);
}

#[tokio::test]
async fn interactive_budget_on_5k_vertices() {
    budget(start().await, "no network").await;
    // Full-size network: 5×256 hidden, 128 projection eigenfunctions.
    let net = Ljn::new(NetworkConfig::default()).unwrap();
    budget(start_with(Some(net)).await, "default network").await;
}

async fn budget(s: Server, label: &str) {
    let m = shapes::creature(&CreatureParams {
        around: 64,
        along: 78,
        ..Default::default()
    });
    assert!(m.num_vertices() >= 4900);
    let t0 = Instant::now();
    let id = s.session(&m).await;
    let create = t0.elapsed().as_secs_f64();
    let (l, r) = ends(&m);
    s.post_json(&format!("/session/{id}/handles"), json!({ "indices": ([l, r.clone()].concat()) })).await;
    let t1 = Instant::now();
    let (status, _) = s.post_json(&format!("/session/{id}/edit"), bend(&r)).await;
    let edit = t1.elapsed().as_secs_f64();
    assert_eq!(status, 200);
    eprintln!("5k vertices, {label}: session {create:.3}s, edit {edit:.3}s");
    // Creation pays for the eigenbasis and factorizations once; only the
    // edit has an interactive budget.
    assert!(create <= 60.0);
    assert!(edit <= 1.0);
}
