use std::path::Path;
use std::sync::Arc;

use prefopt::acquisition::AcquisitionConfig;
use prefopt::fractal::RenderSpec;
use prefopt::optimizer::{OptimizerConfig, Strategy};
use prefopt::vinfer::FitConfig;
use prefopt_service::api::*;
use prefopt_service::{router, AppState, ServiceConfig, GALLERY_SIZE};
use reqwest::{Client, StatusCode};
use serde_json::json;

const LADDER: usize = 20;

fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: dir.to_path_buf(),
        render: RenderSpec::with_size(24, 24),
        seed: 5,
        optimizer: OptimizerConfig {
            fit: FitConfig { steps: 150, warm_steps: 40, ..Default::default() },
            acquisition: AcquisitionConfig { candidate_count: 128, posterior_samples: 8, refine_steps: 5, ..Default::default() },
        },
    }
}

struct Server {
    base: String,
    client: Client,
    task: tokio::task::JoinHandle<()>,
}

impl Server {
    async fn start(dir: &Path) -> Server {
        let state: Arc<AppState> = AppState::open(config(dir)).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let task = tokio::spawn(async move {
            axum::serve(listener, router(state)).await.unwrap();
        });
        Server { base, client: Client::new(), task }
    }

    async fn post(&self, path: &str, body: serde_json::Value) -> reqwest::Response {
        self.client.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap()
    }

    async fn get(&self, path: &str) -> reqwest::Response {
        self.client.get(format!("{}{path}", self.base)).send().await.unwrap()
    }

    async fn create(&self, body: serde_json::Value) -> CreatedSession {
        let r = self.post("/sessions", body).await;
        assert_eq!(r.status(), StatusCode::CREATED);
        r.json().await.unwrap()
    }

    async fn answer(&self, id: &str, iteration: usize, verdict: &str) -> SubmitResponse {
        let r = self
            .post(&format!("/sessions/{id}/preference"), json!({"iteration": iteration, "verdict": verdict}))
            .await;
        assert_eq!(r.status(), StatusCode::OK, "{}", r.text().await.unwrap());
        r.json().await.unwrap()
    }

    async fn summary(&self, id: &str) -> SessionSummary {
        self.get(&format!("/sessions/{id}")).await.json().await.unwrap()
    }

    /// Answer until finished, alternating verdicts; returns the summary.
    async fn drive(&self, created: &CreatedSession) -> SessionSummary {
        let mut pair = created.pair.clone();
        let verdicts = ["left", "right", "tie"];
        loop {
            let r = self.answer(&created.id, pair.iteration, verdicts[pair.iteration % 3]).await;
            match (r.pair, r.summary) {
                (Some(p), None) => pair = p,
                (None, Some(s)) => return s,
                other => panic!("unexpected response {other:?}"),
            }
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.task.abort();
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn random_session_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path()).await;
    let created = srv.create(json!({"budget": 3, "strategy": "random", "seed": 11})).await;
    assert_eq!(created.strategy, Some(Strategy::Random));
    assert_eq!(created.pair.iteration, 1);
    assert_eq!(created.pair.initial, LADDER);
    assert!(!created.pair.can_finish);

    let s = srv.drive(&created).await;
    assert_eq!(s.phase, "finished");
    assert_eq!(s.iteration, 3);
    assert_eq!(s.answered, LADDER + 3);
    assert_eq!(s.strategy, Some(Strategy::Random));
    assert_eq!(s.incumbent.len(), 10);

    let transcript = std::fs::read_to_string(dir.path().join("sessions").join(&created.id).join("transcript.jsonl")).unwrap();
    assert_eq!(transcript.lines().count(), LADDER + 3 + 1);

    assert_eq!(srv.get(&format!("/sessions/{}/pair", created.id)).await.status(), StatusCode::CONFLICT);
    let r = srv
        .post(&format!("/sessions/{}/preference", created.id), json!({"iteration": LADDER + 4, "verdict": "tie"}))
        .await;
    assert_eq!(r.status(), StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread")]
async fn rejects_bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path()).await;
    assert_eq!(srv.get("/sessions/nope").await.status(), StatusCode::NOT_FOUND);
    assert_eq!(srv.post("/sessions", json!({"budget": 0})).await.status(), StatusCode::BAD_REQUEST);
    assert!(srv.post("/sessions", json!({"budget": "x"})).await.status().is_client_error());

    let c = srv.create(json!({"budget": 2, "strategy": "random"})).await;
    // stale and future iterations
    for it in [0, 2] {
        let r = srv.post(&format!("/sessions/{}/preference", c.id), json!({"iteration": it, "verdict": "left"})).await;
        assert_eq!(r.status(), StatusCode::CONFLICT);
    }
    let r = srv.post(&format!("/sessions/{}/preference", c.id), json!({"iteration": 1, "verdict": "maybe"})).await;
    assert!(r.status().is_client_error());
    // cannot stop during the initial comparisons
    assert_eq!(srv.post(&format!("/sessions/{}/finish", c.id), json!({})).await.status(), StatusCode::CONFLICT);
    assert_eq!(srv.summary(&c.id).await.answered, 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn verdict_maps_to_slots() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path()).await;
    let c = srv.create(json!({"budget": 1, "strategy": "random", "seed": 3})).await;
    let start = srv.summary(&c.id).await.incumbent;
    // incumbent is on the right by default
    srv.answer(&c.id, 1, "right").await;
    assert_eq!(srv.summary(&c.id).await.incumbent, start);
    srv.answer(&c.id, 2, "tie").await;
    assert_eq!(srv.summary(&c.id).await.incumbent, start);
    srv.answer(&c.id, 3, "left").await;
    assert_ne!(srv.summary(&c.id).await.incumbent, start);
}

#[tokio::test(flavor = "multi_thread")]
async fn images_and_gallery() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path()).await;
    let c = srv.create(json!({"budget": 1})).await;
    for url in [&c.pair.left, &c.pair.right] {
        let r = srv.get(url).await;
        assert_eq!(r.status(), StatusCode::OK);
        assert_eq!(r.headers()["content-type"], "image/png");
        let bytes = r.bytes().await.unwrap();
        assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
    }
    let g: GalleryView = srv.get(&format!("/sessions/{}/gallery", c.id)).await.json().await.unwrap();
    assert_eq!(g.images.len(), GALLERY_SIZE);
    let a = srv.get(&g.images[3]).await.bytes().await.unwrap();
    let b = srv.get(&g.images[3]).await.bytes().await.unwrap();
    assert_eq!(a, b);
    assert_eq!(srv.get(&format!("/images/{}/gallery/{GALLERY_SIZE}", c.id)).await.status(), StatusCode::NOT_FOUND);
    assert_eq!(srv.get(&format!("/images/{}/5/left", c.id)).await.status(), StatusCode::NOT_FOUND);
    assert_eq!(srv.get(&format!("/images/{}/1/top", c.id)).await.status(), StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread")]
async fn blinded_session_reveals_when_finished() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path()).await;
    let c = srv.create(json!({"budget": 1, "seed": 2, "randomize_slots": true})).await;
    assert_eq!(c.strategy, None);
    assert_eq!(srv.summary(&c.id).await.strategy, None);
    let s = srv.drive(&c).await;
    assert!(s.strategy.is_some());
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before, pair) = {
        let srv = Server::start(dir.path()).await;
        let c = srv.create(json!({"budget": 2, "strategy": "preference", "seed": 9})).await;
        let mut pair = c.pair.clone();
        for _ in 0..LADDER + 1 {
            pair = srv.answer(&c.id, pair.iteration, ["left", "right"][pair.iteration % 2]).await.pair.unwrap();
        }
        (c.id.clone(), srv.summary(&c.id).await, pair)
    };
    let srv = Server::start(dir.path()).await;
    assert_eq!(srv.summary(&id).await, before);
    let again: PairView = srv.get(&format!("/sessions/{id}/pair")).await.json().await.unwrap();
    assert_eq!(again, pair);
    let left_before = srv.get(&pair.left).await.bytes().await.unwrap();
    let s = srv.answer(&id, pair.iteration, "tie").await.summary.unwrap();
    assert_eq!(s.iteration, 2);
    assert!(!left_before.is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn plan_final_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let srv = Server::start(dir.path()).await;
    let r = srv.post("/plans", json!({"budget": 1, "seed": 4})).await;
    assert_eq!(r.status(), StatusCode::CREATED);
    let plan: PlanView = r.json().await.unwrap();
    assert_eq!(plan.sessions.len(), 2);
    assert!(plan.strategies.is_none());

    let final_url = format!("/plans/{}/final", plan.id);
    assert_eq!(srv.get(&final_url).await.status(), StatusCode::CONFLICT);

    for id in &plan.sessions {
        let pair: PairView = srv.get(&format!("/sessions/{id}/pair")).await.json().await.unwrap();
        let c = CreatedSession { id: id.clone(), budget: 1, strategy: None, pair };
        let s = srv.drive(&c).await;
        // plan sessions stay blinded until the final verdict
        assert_eq!(s.strategy, None);
    }
    let view: FinalView = srv.get(&final_url).await.json().await.unwrap();
    assert!(view.verdict.is_none() && view.reveal.is_none());
    assert_eq!(srv.get(&view.left).await.status(), StatusCode::OK);

    let r = srv.post(&final_url, json!({"verdict": "right"})).await;
    assert_eq!(r.status(), StatusCode::OK);
    let done: FinalView = r.json().await.unwrap();
    assert_eq!(done.verdict, Some(Verdict::Right));
    let reveal = done.reveal.unwrap();
    assert_ne!(reveal.left, reveal.right);

    assert_eq!(srv.post(&final_url, json!({"verdict": "left"})).await.status(), StatusCode::CONFLICT);
    let stored: FinalView = srv.get(&final_url).await.json().await.unwrap();
    assert_eq!(stored.verdict, Some(Verdict::Right));
    for id in &plan.sessions {
        assert!(srv.summary(id).await.strategy.is_some());
    }
}
