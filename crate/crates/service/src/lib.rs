//! HTTP service running blinded preference sessions over fractal colorings.
//!
//! Each session is an optimizer [`Session`] over the 10-D coloring box. The
//! client is shown two renders, answers left / right / tie, and the server
//! refits and proposes the next pair. Requests on one session serialize on its
//! lock; model fitting and rendering run on the blocking pool.

pub mod api;
pub mod error;
pub mod store;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use prefopt::fractal::{self, ColoringParams, RenderSpec};
use prefopt::optimizer::{now_ms, OptimizerConfig, Phase, Session, SessionHeader, Strategy, TranscriptLine};
use prefopt::{PreferenceOutcome, RandomStream};
use rand::RngCore;
use tokio::sync::Mutex as AsyncMutex;

use api::*;
pub use error::ServiceError;
use store::{PlanRecord, SessionMeta, Store};

pub const GALLERY_SIZE: usize = 12;

const BLIND_STREAM: u64 = 7 << 32;
const SLOT_STREAM: u64 = 8 << 32;
const GALLERY_STREAM: u64 = 9 << 32;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub render: RenderSpec,
    /// Seeds session ids and the seeds of sessions created without one.
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

struct Entry {
    meta: SessionMeta,
    session: Session,
    /// Strategy may be shown (unblinded, or revealed by a final verdict).
    revealed: bool,
}

type Shared<T> = Arc<AsyncMutex<T>>;

pub struct AppState {
    config: ServiceConfig,
    store: Store,
    sessions: Mutex<HashMap<String, Shared<Entry>>>,
    plans: Mutex<HashMap<String, Shared<PlanRecord>>>,
    rng: Mutex<RandomStream>,
}

impl AppState {
    /// Open the data directory and rebuild every stored session by replay.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        let store = Store::open(&config.data_dir)?;
        let plans = store.load_plans()?;
        let mut sessions = HashMap::new();
        for (meta, lines) in store.load_sessions()? {
            let session = Session::replay(meta.header.clone(), &lines)?;
            let revealed = !meta.blinded
                || plans
                    .iter()
                    .any(|p| p.verdict.is_some() && p.sessions.iter().any(|(id, _)| *id == meta.id))
                || (meta.plan.is_none() && session.phase() == Phase::Finished);
            tracing::info!(id = %meta.id, answered = session.answered(), "restored session");
            sessions.insert(meta.id.clone(), Arc::new(AsyncMutex::new(Entry { meta, session, revealed })));
        }
        let plans = plans.into_iter().map(|p| (p.id.clone(), Arc::new(AsyncMutex::new(p)))).collect();
        let rng = RandomStream::new(config.seed ^ now_ms().rotate_left(17));
        Ok(Arc::new(AppState {
            config,
            store,
            sessions: Mutex::new(sessions),
            plans: Mutex::new(plans),
            rng: Mutex::new(rng),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn next_u64(&self) -> u64 {
        self.rng.lock().expect("rng lock").next_u64()
    }

    fn fresh_id(&self) -> String {
        loop {
            let id = format!("{:016x}", self.next_u64());
            if !self.sessions.lock().expect("sessions lock").contains_key(&id)
                && !self.plans.lock().expect("plans lock").contains_key(&id)
            {
                return id;
            }
        }
    }

    fn entry(&self, id: &str) -> Result<Shared<Entry>, ServiceError> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }

    fn plan(&self, id: &str) -> Result<Shared<PlanRecord>, ServiceError> {
        self.plans
            .lock()
            .expect("plans lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("plan {id}")))
    }

    fn new_session(
        &self,
        budget: usize,
        strategy: Strategy,
        blinded: bool,
        randomize_slots: bool,
        seed: u64,
        plan: Option<String>,
    ) -> Result<String, ServiceError> {
        if budget == 0 {
            return Err(ServiceError::BadRequest("budget must be at least 1".into()));
        }
        let header = SessionHeader {
            domain: ColoringParams::domain(),
            strategy,
            budget,
            seed,
            config: self.config.optimizer.clone(),
        };
        let mut session = Session::new(header.clone())?;
        session.pending_pair()?; // a ladder pair, no fitting
        let meta = SessionMeta { id: self.fresh_id(), header, blinded, randomize_slots, plan, created_ms: now_ms() };
        self.store.create_session(&meta)?;
        let id = meta.id.clone();
        let entry = Entry { meta, session, revealed: !blinded };
        self.sessions
            .lock()
            .expect("sessions lock")
            .insert(id.clone(), Arc::new(AsyncMutex::new(entry)));
        Ok(id)
    }
}

/// Run `f` on the session under its lock, on the blocking pool.
async fn with_entry<R, F>(entry: Shared<Entry>, f: F) -> Result<R, ServiceError>
where
    R: Send + 'static,
    F: FnOnce(&mut Entry) -> Result<R, ServiceError> + Send + 'static,
{
    let mut guard = entry.lock_owned().await;
    tokio::task::spawn_blocking(move || f(&mut guard))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

fn incumbent_on_left(meta: &SessionMeta, iteration: usize) -> bool {
    meta.randomize_slots && RandomStream::substream(meta.header.seed, SLOT_STREAM + iteration as u64).uniform() < 0.5
}

fn image_url(id: &str, iteration: usize, side: &str) -> String {
    format!("/images/{id}/{iteration}/{side}")
}

fn pair_view(e: &Entry) -> Result<PairView, ServiceError> {
    if e.session.peek_pair().is_none() {
        return Err(ServiceError::Internal("no pending pair".into()));
    }
    let id = &e.meta.id;
    let iteration = e.session.answered() + 1;
    Ok(PairView {
        session: id.clone(),
        iteration,
        budget: e.session.budget(),
        initial: e.session.ladder().len() - 1,
        left: image_url(id, iteration, "left"),
        right: image_url(id, iteration, "right"),
        can_finish: e.session.phase() == Phase::Running,
    })
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Initializing => "initializing",
        Phase::Running => "running",
        Phase::Finished => "finished",
    }
}

fn summary(e: &Entry) -> SessionSummary {
    let s = &e.session;
    let updated_ms = s
        .transcript()
        .iter()
        .map(|l| match l {
            TranscriptLine::Answer(a) => a.timestamp_ms,
            TranscriptLine::Completion(c) => c.timestamp_ms,
        })
        .max()
        .unwrap_or(e.meta.created_ms);
    SessionSummary {
        id: e.meta.id.clone(),
        phase: phase_name(s.phase()).into(),
        iteration: s.iteration(),
        budget: s.budget(),
        answered: s.answered(),
        completion: s.completion(),
        incumbent: s.incumbent().to_vec(),
        incumbent_image: image_url(&e.meta.id, s.answered() + 1, "incumbent"),
        strategy: e.revealed.then_some(s.strategy()),
        created_ms: e.meta.created_ms,
        updated_ms,
    }
}

/// Append transcript lines produced since `before`.
fn persist(store: &Store, e: &Entry, before: usize) -> Result<(), ServiceError> {
    store.append(&e.meta.id, &e.session.transcript()[before..])
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<CreatedSession>), ServiceError> {
    let seed = req.seed.unwrap_or_else(|| state.next_u64());
    let (strategy, blinded) = match req.strategy {
        StrategyRequest::Preference => (Strategy::Preference, false),
        StrategyRequest::Random => (Strategy::Random, false),
        StrategyRequest::Blinded => {
            let coin = RandomStream::substream(seed, BLIND_STREAM).uniform() < 0.5;
            (if coin { Strategy::Preference } else { Strategy::Random }, true)
        }
    };
    let id = state.new_session(req.budget, strategy, blinded, req.randomize_slots, seed, None)?;
    let entry = state.entry(&id)?;
    let e = entry.lock().await;
    let body = CreatedSession {
        id: id.clone(),
        budget: req.budget,
        strategy: (!blinded).then_some(strategy),
        pair: pair_view(&e)?,
    };
    tracing::info!(%id, blinded, "created session");
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionSummary>, ServiceError> {
    let entry = state.entry(&id)?;
    let e = entry.lock().await;
    Ok(Json(summary(&e)))
}

async fn get_pair(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<PairView>, ServiceError> {
    let entry = state.entry(&id)?;
    with_entry(entry, |e| {
        if e.session.phase() == Phase::Finished {
            return Err(ServiceError::Conflict("session is finished".into()));
        }
        e.session.pending_pair()?;
        pair_view(e)
    })
    .await
    .map(Json)
}

async fn submit_preference(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<SubmitPreference>,
) -> Result<Json<SubmitResponse>, ServiceError> {
    let entry = state.entry(&id)?;
    let st = state.clone();
    with_entry(entry, move |e| {
        if e.session.phase() == Phase::Finished {
            return Err(ServiceError::Conflict("session is finished".into()));
        }
        let current = e.session.answered() + 1;
        if req.iteration != current {
            return Err(ServiceError::Conflict(format!(
                "iteration {} is not the open comparison ({current})",
                req.iteration
            )));
        }
        e.session.pending_pair()?;
        let left_is_incumbent = incumbent_on_left(&e.meta, current);
        let outcome = match (req.verdict, left_is_incumbent) {
            (Verdict::Tie, _) => PreferenceOutcome::Equivalent,
            (Verdict::Left, true) | (Verdict::Right, false) => PreferenceOutcome::FirstGreater,
            (Verdict::Left, false) | (Verdict::Right, true) => PreferenceOutcome::FirstLess,
        };
        let before = e.session.transcript().len();
        e.session.answer(outcome)?;
        persist(&st.store, e, before)?;
        if e.session.phase() == Phase::Finished {
            if e.meta.plan.is_none() {
                e.revealed = true;
            }
            return Ok(SubmitResponse { pair: None, summary: Some(summary(e)) });
        }
        e.session.pending_pair()?;
        Ok(SubmitResponse { pair: Some(pair_view(e)?), summary: None })
    })
    .await
    .map(Json)
}

async fn finish_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionSummary>, ServiceError> {
    let entry = state.entry(&id)?;
    let st = state.clone();
    with_entry(entry, move |e| {
        let before = e.session.transcript().len();
        e.session.finish()?;
        persist(&st.store, e, before)?;
        if e.meta.plan.is_none() {
            e.revealed = true;
        }
        Ok(summary(e))
    })
    .await
    .map(Json)
}

async fn gallery(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<GalleryView>, ServiceError> {
    state.entry(&id)?;
    Ok(Json(GalleryView {
        images: (0..GALLERY_SIZE).map(|k| format!("/images/{id}/gallery/{k}")).collect(),
    }))
}

/// Parameters of gallery image `k`, fixed by the session seed.
pub fn gallery_params(seed: u64, k: usize) -> Vec<f64> {
    let domain = ColoringParams::domain();
    let mut rng = RandomStream::substream(seed, GALLERY_STREAM + k as u64);
    (0..domain.dims())
        .map(|d| rng.uniform_in(domain.lower()[d], domain.upper()[d]))
        .collect()
}

async fn image(
    State(state): State<Arc<AppState>>,
    Path((id, iteration, side)): Path<(String, String, String)>,
) -> Result<Response, ServiceError> {
    let entry = state.entry(&id)?;
    let point = if iteration == "gallery" {
        let k: usize = side.parse().map_err(|_| ServiceError::NotFound(format!("gallery image {side}")))?;
        if k >= GALLERY_SIZE {
            return Err(ServiceError::NotFound(format!("gallery image {k}")));
        }
        let seed = entry.lock().await.meta.header.seed;
        gallery_params(seed, k)
    } else {
        let k: usize = iteration
            .parse()
            .map_err(|_| ServiceError::NotFound(format!("iteration {iteration}")))?;
        with_entry(entry, move |e| point_at(e, k, &side)).await?
    };
    let spec = state.config.render.clone();
    let png = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, ServiceError> {
        let params = ColoringParams::from_slice(&point)?;
        Ok(fractal::render(&params, &spec)?.to_png()?)
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "max-age=31536000, immutable")], png).into_response())
}

/// Point shown on `side` at comparison `k` (1-based). `incumbent` is the
/// incumbent going into comparison `k`, so `answered + 1` gives the current one.
fn point_at(e: &mut Entry, k: usize, side: &str) -> Result<Vec<f64>, ServiceError> {
    let answered = e.session.answered();
    let missing = || ServiceError::NotFound(format!("image {k}/{side}"));
    if k == 0 || k > answered + 1 {
        return Err(missing());
    }
    let (incumbent, challenger) = if k <= answered {
        let r = &e.session.dataset().records()[k - 1];
        (r.first.clone(), r.second.clone())
    } else if side == "incumbent" {
        return Ok(e.session.incumbent().to_vec());
    } else {
        e.session.pending_pair()?.ok_or_else(missing)?
    };
    let left_inc = incumbent_on_left(&e.meta, k);
    match side {
        "incumbent" => Ok(incumbent),
        "left" => Ok(if left_inc { incumbent } else { challenger }),
        "right" => Ok(if left_inc { challenger } else { incumbent }),
        _ => Err(missing()),
    }
}

async fn create_plan(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreatePlan>,
) -> Result<(StatusCode, Json<PlanView>), ServiceError> {
    if req.sessions_per_strategy == 0 {
        return Err(ServiceError::BadRequest("sessions_per_strategy must be at least 1".into()));
    }
    if req.budget == 0 {
        return Err(ServiceError::BadRequest("budget must be at least 1".into()));
    }
    let seed = req.seed.unwrap_or_else(|| state.next_u64());
    let mut rng = RandomStream::new(seed);
    let plan_id = state.fresh_id();
    let mut sessions = Vec::new();
    for strategy in [Strategy::Preference, Strategy::Random] {
        for _ in 0..req.sessions_per_strategy {
            let s = rng.next_u64();
            let id = state.new_session(req.budget, strategy, req.blinded, false, s, Some(plan_id.clone()))?;
            sessions.push((id, strategy));
        }
    }
    rng.shuffle(&mut sessions);
    let first = |st: Strategy| sessions.iter().find(|(_, s)| *s == st).map(|(id, _)| id.clone()).expect("both strategies");
    let (a, b) = (first(Strategy::Preference), first(Strategy::Random));
    let final_order = if rng.uniform() < 0.5 { (a, b) } else { (b, a) };
    let plan = PlanRecord { id: plan_id.clone(), budget: req.budget, blinded: req.blinded, seed, sessions, final_order, verdict: None, verdict_ms: None };
    state.store.save_plan(&plan)?;
    let view = PlanView {
        id: plan_id.clone(),
        budget: plan.budget,
        blinded: plan.blinded,
        sessions: plan.sessions.iter().map(|(id, _)| id.clone()).collect(),
        strategies: (!plan.blinded).then(|| plan.sessions.iter().map(|(_, s)| *s).collect()),
    };
    state.plans.lock().expect("plans lock").insert(plan_id, Arc::new(AsyncMutex::new(plan)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn final_view(state: &AppState, plan: &PlanRecord) -> Result<FinalView, ServiceError> {
    let mut urls = Vec::new();
    for id in [&plan.final_order.0, &plan.final_order.1] {
        let entry = state.entry(id)?;
        let e = entry.lock().await;
        if e.session.phase() != Phase::Finished {
            return Err(ServiceError::Conflict(format!("session {id} is not finished")));
        }
        urls.push((image_url(id, e.session.answered() + 1, "incumbent"), e.session.strategy()));
    }
    let (left, right) = (urls[0].clone(), urls[1].clone());
    Ok(FinalView {
        plan: plan.id.clone(),
        left: left.0,
        right: right.0,
        verdict: plan.verdict,
        reveal: plan.verdict.map(|_| Reveal { left: left.1, right: right.1 }),
    })
}

async fn get_final(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<FinalView>, ServiceError> {
    let plan = state.plan(&id)?;
    let p = plan.lock().await;
    final_view(&state, &p).await.map(Json)
}

async fn post_final(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<FinalVerdict>,
) -> Result<Json<FinalView>, ServiceError> {
    let plan = state.plan(&id)?;
    let mut p = plan.lock().await;
    if p.verdict.is_some() {
        return Err(ServiceError::Conflict("final verdict already recorded".into()));
    }
    final_view(&state, &p).await?;
    p.verdict = Some(req.verdict);
    p.verdict_ms = Some(now_ms());
    state.store.save_plan(&p)?;
    for (sid, _) in &p.sessions {
        state.entry(sid)?.lock().await.revealed = true;
    }
    final_view(&state, &p).await.map(Json)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/pair", get(get_pair))
        .route("/sessions/{id}/preference", post(submit_preference))
        .route("/sessions/{id}/finish", post(finish_session))
        .route("/sessions/{id}/gallery", get(gallery))
        .route("/plans", post(create_plan))
        .route("/plans/{id}/final", get(get_final).post(post_final))
        .route("/images/{session}/{iteration}/{side}", get(image))
        .with_state(state)
}

/// Serve until the listener fails or ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
