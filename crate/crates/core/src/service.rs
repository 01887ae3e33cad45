//! JSON-over-HTTP sessions: upload a panel, put views per user, solve, read
//! prior/posterior statistics, histograms and the option frontier.
//!
//! Every response carries the session `revision`. Mutations bump it and drop
//! whatever was derived from the old state; reads never touch it. Mutations on
//! one session are serialized by its lock, and solves run on the blocking pool
//! so other sessions keep going.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;

use crate::error::Error;
use crate::options::{
    build_pnl_panel, current_prices, mean_cvar_frontier, ButterflyContract, FrontierPoint,
    FrontierSpec, LinearPositionConstraints,
};
use crate::scenario::{
    weighted_statistics, ColumnStatistics, ProbabilityVector, ScenarioPanel, ViewPanel,
};
use crate::solver::{relative_entropy, SolverConfig};
use crate::views::{CompileOptions, UserViews, View};
use crate::workflow::{solve_and_pool, PooledPosterior, WorkflowOptions};

pub const DEFAULT_BINS: usize = 50;
pub const MAX_BINS: usize = 10_000;
pub const STAT_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    revision: Option<u64>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            revision: None,
        }
    }

    fn at(mut self, revision: u64) -> Self {
        self.revision = Some(revision);
        self
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let status = match err {
            Error::Infeasible(_) | Error::NotConverged { .. } | Error::InfeasiblePortfolio(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, err.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rej: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, rej.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "revision": self.revision });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

struct Solved {
    pooled: PooledPosterior,
}

struct Frontier {
    spec: FrontierSpec,
    instrument_ids: Vec<String>,
    points: Vec<FrontierPoint>,
}

struct Session {
    id: String,
    revision: u64,
    panel: Arc<ScenarioPanel>,
    prior: Arc<ProbabilityVector>,
    users: BTreeMap<String, UserViews>,
    solver: SolverConfig,
    solved: Option<Arc<Solved>>,
    frontier: Option<Frontier>,
}

impl Session {
    fn check_revision(&self, expected: Option<u64>) -> ApiResult<()> {
        match expected {
            Some(r) if r != self.revision => Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("stale revision {r}, session is at {}", self.revision),
            )
            .at(self.revision)),
            _ => Ok(()),
        }
    }

    /// A change to the inputs: everything derived from them goes.
    fn invalidate(&mut self) {
        self.revision += 1;
        self.solved = None;
        self.frontier = None;
    }

    fn posterior(&self) -> Option<&ProbabilityVector> {
        self.solved.as_ref().map(|s| &s.pooled.pooled)
    }
}

/// Shared service state. Cloning is cheap.
#[derive(Clone, Default)]
pub struct AppState {
    inner: Arc<Inner>,
}

#[derive(Default)]
struct Inner {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    snapshot_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Snapshots are also written as `<dir>/<session>-r<revision>.json`.
    pub fn with_snapshot_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            inner: Arc::new(Inner {
                snapshot_dir: Some(dir.into()),
                ..Inner::default()
            }),
        }
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.inner
            .sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(&format!("session {id}")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/prior", put(put_prior))
        .route(
            "/sessions/{id}/users/{user}/views",
            put(put_views).get(get_views).delete(delete_views),
        )
        .route("/sessions/{id}/solve", post(solve_session))
        .route("/sessions/{id}/stats", get(stats))
        .route("/sessions/{id}/histogram/{column}", get(histogram))
        .route(
            "/sessions/{id}/frontier",
            post(post_frontier).get(get_frontier),
        )
        .route("/sessions/{id}/snapshot", post(snapshot))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: &str, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub factor_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    #[serde(default)]
    pub prior: Option<Vec<f64>>,
    #[serde(default)]
    pub dual_tolerance: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
}

async fn create_session(
    State(state): State<AppState>,
    body: std::result::Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let Json(req) = body?;
    let panel = ScenarioPanel::from_rows(req.factor_names, &req.rows)?;
    let prior = match req.prior {
        Some(p) => ProbabilityVector::new(p)?,
        None => ProbabilityVector::uniform(panel.num_scenarios()),
    };
    prior.check_len(panel.num_scenarios())?;
    let mut solver = SolverConfig::default();
    if let Some(t) = req.dual_tolerance {
        solver.dual_tolerance = t;
    }
    if let Some(m) = req.max_iterations {
        solver.max_iterations = m;
    }
    solver.validate()?;
    let id = format!(
        "s{}",
        state.inner.next_id.fetch_add(1, Ordering::Relaxed) + 1
    );
    let body = json!({
        "session_id": id,
        "revision": 1,
        "num_scenarios": panel.num_scenarios(),
        "factor_names": panel.factor_names(),
    });
    let session = Session {
        id: id.clone(),
        revision: 1,
        panel: Arc::new(panel),
        prior: Arc::new(prior),
        users: BTreeMap::new(),
        solver,
        solved: None,
        frontier: None,
    };
    state
        .inner
        .sessions
        .write()
        .expect("session map poisoned")
        .insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn session_summary(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    Ok(Json(json!({
        "session_id": s.id,
        "revision": s.revision,
        "num_scenarios": s.panel.num_scenarios(),
        "factor_names": s.panel.factor_names(),
        "users": s.users.keys().collect::<Vec<_>>(),
        "solved": s.solved.is_some(),
        "has_frontier": s.frontier.is_some(),
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PutPrior {
    pub prior: Vec<f64>,
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

async fn put_prior(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: std::result::Result<Json<PutPrior>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let mut s = session.lock().await;
    let Json(req) = body.map_err(|e| ApiError::from(e).at(s.revision))?;
    s.check_revision(req.expected_revision)?;
    let prior = ProbabilityVector::new(req.prior).map_err(|e| ApiError::from(e).at(s.revision))?;
    prior
        .check_len(s.panel.num_scenarios())
        .map_err(|e| ApiError::from(e).at(s.revision))?;
    s.prior = Arc::new(prior);
    s.invalidate();
    Ok(Json(json!({ "revision": s.revision })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PutViews {
    pub views: Vec<View>,
    #[serde(default = "one")]
    pub overall_confidence: f64,
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

fn one() -> f64 {
    1.0
}

/// Structural checks plus a dry compile against the session's panel, so a
/// view naming an unknown factor is refused here rather than at solve time.
fn check_views(
    panel: &ScenarioPanel,
    prior: &ProbabilityVector,
    views: &[View],
    confidence: f64,
) -> crate::Result<()> {
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::InvalidConfidence(confidence));
    }
    for v in views {
        v.validate()?;
    }
    crate::views::compile_on_panel(views, panel, prior, &CompileOptions::default())?;
    Ok(())
}

async fn put_views(
    State(state): State<AppState>,
    Path((id, user)): Path<(String, String)>,
    body: std::result::Result<Json<PutViews>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let mut s = session.lock().await;
    let Json(req) = body.map_err(|e| ApiError::from(e).at(s.revision))?;
    s.check_revision(req.expected_revision)?;
    check_views(&s.panel, &s.prior, &req.views, req.overall_confidence)
        .map_err(|e| ApiError::from(e).at(s.revision))?;
    let others: f64 = s
        .users
        .iter()
        .filter(|(k, _)| **k != user)
        .map(|(_, u)| u.overall_confidence)
        .sum();
    if others + req.overall_confidence > 1.0 + 1e-12 {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!(
                "overall confidences would sum to {}",
                others + req.overall_confidence
            ),
        )
        .at(s.revision));
    }
    let entry = UserViews {
        user_id: user.clone(),
        overall_confidence: req.overall_confidence,
        views: req.views,
    };
    s.users.insert(user.clone(), entry);
    s.invalidate();
    Ok(Json(json!({ "revision": s.revision, "user_id": user })))
}

async fn get_views(
    State(state): State<AppState>,
    Path((id, user)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    let u = s
        .users
        .get(&user)
        .ok_or_else(|| ApiError::not_found(&format!("user {user}")).at(s.revision))?;
    Ok(Json(
        json!({ "revision": s.revision, "user_id": user, "overall_confidence": u.overall_confidence, "views": u.views }),
    ))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevisionQuery {
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

async fn delete_views(
    State(state): State<AppState>,
    Path((id, user)): Path<(String, String)>,
    Query(q): Query<RevisionQuery>,
) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let mut s = session.lock().await;
    s.check_revision(q.expected_revision)?;
    if s.users.remove(&user).is_none() {
        return Err(ApiError::not_found(&format!("user {user}")).at(s.revision));
    }
    s.invalidate();
    Ok(Json(json!({ "revision": s.revision })))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveRequest {
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

async fn solve_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let mut s = session.lock().await;
    // the body is optional here
    let req: SolveRequest = if body.iter().all(u8::is_ascii_whitespace) {
        SolveRequest::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()).at(s.revision))?
    };
    s.check_revision(req.expected_revision)?;
    let panel = Arc::clone(&s.panel);
    let prior = Arc::clone(&s.prior);
    let users: Vec<UserViews> = s.users.values().cloned().collect();
    let options = WorkflowOptions {
        compile: CompileOptions::default(),
        solver: s.solver.clone(),
    };
    let revision = s.revision;
    let pooled =
        tokio::task::spawn_blocking(move || solve_and_pool(&panel, &prior, &users, &options))
            .await
            .map_err(|e| {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).at(revision)
            })?
            .map_err(|e| ApiError::from(e).at(revision))?;
    let kl =
        relative_entropy(&pooled.pooled, &s.prior).map_err(|e| ApiError::from(e).at(revision))?;
    let body = json!({
        "revision": revision + 1,
        "users": pooled.users,
        "pooled": { "relative_entropy": kl, "effective_size": pooled.pooled.effective_size() },
    });
    s.revision += 1;
    s.frontier = None;
    s.solved = Some(Arc::new(Solved { pooled }));
    Ok(Json(body))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsQuery {
    /// Comma-separated column expressions; all factors when absent.
    #[serde(default)]
    pub columns: Option<String>,
}

fn requested_columns(panel: &ScenarioPanel, columns: Option<&str>) -> crate::Result<ViewPanel> {
    match columns {
        Some(list) => {
            let exprs: Vec<&str> = list
                .split(',')
                .map(str::trim)
                .filter(|e| !e.is_empty())
                .collect();
            if exprs.is_empty() {
                return Err(Error::Parse("empty column list".into()));
            }
            panel.view_panel(&exprs)
        }
        None => {
            let names: Vec<&str> = panel.factor_names().iter().map(String::as_str).collect();
            panel.view_panel(&names)
        }
    }
}

fn column_stats(vp: &ViewPanel, p: &ProbabilityVector) -> crate::Result<Vec<ColumnStatistics>> {
    Ok(weighted_statistics(vp, p, &STAT_QUANTILES, &[])?.columns)
}

async fn stats(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StatsQuery>,
) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    let at = |e: Error| ApiError::from(e).at(s.revision);
    let vp = requested_columns(&s.panel, q.columns.as_deref()).map_err(at)?;
    let prior = column_stats(&vp, &s.prior).map_err(at)?;
    let posterior = s
        .posterior()
        .map(|p| column_stats(&vp, p))
        .transpose()
        .map_err(at)?;
    Ok(Json(json!({
        "revision": s.revision,
        "solved": s.solved.is_some(),
        "prior": prior,
        "posterior": posterior,
    })))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramQuery {
    #[serde(default)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

/// Equal-width bins over `[min, max]` of `column`; the last bin is closed.
/// A constant column gets a unit-width range centred on its value.
pub fn histogram_edges(column: &[f64], bins: usize) -> Vec<f64> {
    let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    (0..=bins)
        .map(|b| if b == bins { hi } else { lo + width * b as f64 })
        .collect()
}

pub fn histogram_masses(column: &[f64], p: &ProbabilityVector, edges: &[f64]) -> Vec<f64> {
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let width = (hi - lo) / bins as f64;
    let mut masses = vec![0.0; bins];
    for (x, w) in column.iter().zip(p.as_slice()) {
        let mut b = (((x - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        // floating point can put a value one bin off its edges
        while b > 0 && *x < edges[b] {
            b -= 1;
        }
        while b + 1 < bins && *x >= edges[b + 1] {
            b += 1;
        }
        masses[b] += w;
    }
    masses
}

async fn histogram(
    State(state): State<AppState>,
    Path((id, column)): Path<(String, String)>,
    Query(q): Query<HistogramQuery>,
) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    let bins = q.bins.unwrap_or(DEFAULT_BINS);
    if bins == 0 || bins > MAX_BINS {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("bins must be in 1..={MAX_BINS}"),
        )
        .at(s.revision));
    }
    let vp = s
        .panel
        .view_panel(&[column.as_str()])
        .map_err(|e| ApiError::from(e).at(s.revision))?;
    let col = vp.column(0);
    let edges = histogram_edges(col, bins);
    let prior = histogram_masses(col, &s.prior, &edges);
    let posterior = s.posterior().map(|p| histogram_masses(col, p, &edges));
    Ok(Json(json!({
        "revision": s.revision,
        "column": column,
        "edges": edges,
        "prior": prior,
        "posterior": posterior,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontierRequest {
    pub book: Vec<ButterflyContract>,
    pub lambdas: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Caps each position at `notional / current price`. Ignored when
    /// `position_bounds` is given.
    #[serde(default)]
    pub notional: Option<f64>,
    #[serde(default)]
    pub position_bounds: Option<Vec<f64>>,
    /// Defaults to zero delta per underlying and zero budget.
    #[serde(default)]
    pub linear_constraints: Option<LinearPositionConstraints>,
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

fn default_gamma() -> f64 {
    0.95
}

fn frontier_inputs(req: FrontierRequest) -> crate::Result<(Vec<ButterflyContract>, FrontierSpec)> {
    if req.book.is_empty() {
        return Err(Error::InvalidPricing("empty book".into()));
    }
    let prices = current_prices(&req.book)?;
    let bounds = match (req.position_bounds, req.notional) {
        (Some(b), _) => b,
        (None, Some(n)) if n > 0.0 && n.is_finite() => prices.iter().map(|p| n / p).collect(),
        (None, Some(n)) => return Err(Error::Parse(format!("notional must be positive, got {n}"))),
        (None, None) => return Err(Error::Parse("need position_bounds or notional".into())),
    };
    let lc = match req.linear_constraints {
        Some(lc) => lc,
        None => LinearPositionConstraints::delta_and_budget(&req.book)?,
    };
    Ok((
        req.book,
        FrontierSpec::new(req.gamma, req.lambdas, bounds, lc),
    ))
}

fn frontier_body(revision: u64, f: &Frontier) -> Value {
    json!({
        "revision": revision,
        "instrument_ids": f.instrument_ids,
        "gamma": f.spec.gamma,
        "points": f.points,
    })
}

async fn post_frontier(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: std::result::Result<Json<FrontierRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let mut s = session.lock().await;
    let revision = s.revision;
    let Json(req) = body.map_err(|e| ApiError::from(e).at(revision))?;
    s.check_revision(req.expected_revision)?;
    let solved = s.solved.clone().ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "no posterior at the current revision; solve first",
        )
        .at(revision)
    })?;
    let (book, spec) = frontier_inputs(req).map_err(|e| ApiError::from(e).at(revision))?;
    let panel = Arc::clone(&s.panel);
    let job = move || -> crate::Result<Frontier> {
        let pnl = build_pnl_panel(&panel, &book, &current_prices(&book)?)?;
        let points = mean_cvar_frontier(&pnl, &solved.pooled.pooled, &spec)?;
        Ok(Frontier {
            spec,
            instrument_ids: pnl.instrument_ids().to_vec(),
            points,
        })
    };
    let frontier = tokio::task::spawn_blocking(job)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).at(revision))?
        .map_err(|e| ApiError::from(e).at(revision))?;
    s.revision += 1;
    let body = frontier_body(s.revision, &frontier);
    s.frontier = Some(frontier);
    Ok(Json(body))
}

async fn get_frontier(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    let f = s
        .frontier
        .as_ref()
        .ok_or_else(|| ApiError::not_found("frontier").at(s.revision))?;
    Ok(Json(frontier_body(s.revision, f)))
}

/// Everything needed to rebuild a session offline.
#[derive(Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub revision: u64,
    pub factor_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub prior: Vec<f64>,
    pub users: Vec<UserViews>,
    pub posterior: Option<Vec<f64>>,
    pub frontier: Option<Vec<FrontierPoint>>,
}

async fn snapshot(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    let snap = Snapshot {
        session_id: s.id.clone(),
        revision: s.revision,
        factor_names: s.panel.factor_names().to_vec(),
        rows: s.panel.rows().map(<[f64]>::to_vec).collect(),
        prior: s.prior.as_slice().to_vec(),
        users: s.users.values().cloned().collect(),
        posterior: s.posterior().map(|p| p.as_slice().to_vec()),
        frontier: s.frontier.as_ref().map(|f| f.points.clone()),
    };
    let path = match &state.inner.snapshot_dir {
        Some(dir) => {
            let path = dir.join(format!("{}-r{}.json", s.id, s.revision));
            let text = serde_json::to_string(&snap).map_err(|e| ApiError::from(Error::from(e)))?;
            std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::write(&path, text))
                .map_err(|e| ApiError::from(Error::from(e)).at(s.revision))?;
            Some(path.display().to_string())
        }
        None => None,
    };
    Ok(Json(
        json!({ "revision": s.revision, "path": path, "snapshot": snap }),
    ))
}
