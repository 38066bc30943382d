use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use uiloc_core::codeloc::{
    baseline_ranking, load_external_for, run_pipeline, screen_rankings, CodeLocConfig,
    CodeLocContext, PipelineResult,
};
use uiloc_core::eval::{CorrelationMode, StratifyAxis};
use uiloc_core::experiment::{evaluate, EvalOutcome, LocalizationTask};
use uiloc_core::ingest::CorpusStats;
use uiloc_core::model::{Bounds, BugType, RankedList, ScreenSource, UIScreen};
use uiloc_core::retrieval::{localize_components, localize_screens, ObQuery, ScorerSpec};

use crate::error::ApiError;
use crate::state::{now_secs, AppState, LoadedProject, Session};

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{p}/bugs", get(list_bugs))
        .route("/projects/{p}/bugs/{b}", get(get_bug))
        .route("/projects/{p}/bugs/{b}/sessions", post(create_session))
        .route("/projects/{p}/bugs/{b}/codeloc", post(codeloc))
        .route("/projects/{p}/screens", get(list_screens))
        .route("/projects/{p}/screens/{s}/screenshot", get(screenshot))
        .route("/projects/{p}/screens/{s}/components", get(components))
        .route("/projects/{p}/evaluate", post(evaluate_project))
        .route("/sessions/{s}", get(get_session))
        .route("/sessions/{s}/select", post(select_screens))
        .with_state(state)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    if body.is_empty() {
        return serde_json::from_str("{}").map_err(|e| ApiError::InvalidRequest(e.to_string()));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::InvalidRequest(e.to_string()))
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateProject {
    path: PathBuf,
}

#[derive(Serialize, Deserialize)]
pub struct ProjectInfo {
    pub project_id: String,
    pub root: PathBuf,
    pub stats: CorpusStats,
    pub duplicates_dropped: usize,
    pub issues: usize,
    pub invalid_bugs: Vec<String>,
}

fn project_info(p: &LoadedProject) -> ProjectInfo {
    ProjectInfo {
        project_id: p.id.clone(),
        root: p.root().to_path_buf(),
        stats: p.project.stats(),
        duplicates_dropped: p.project.duplicates_dropped,
        issues: p.project.issues.len(),
        invalid_bugs: p.project.violations.keys().cloned().collect(),
    }
}

async fn create_project(State(state): Shared, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateProject = parse_body(&body)?;
    let loaded = blocking(move || state.register(&req.path)).await?;
    Ok((StatusCode::CREATED, Json(project_info(&loaded))))
}

async fn list_projects(State(state): Shared, Query(page): Query<Page>) -> Json<Vec<ProjectInfo>> {
    Json(
        state
            .projects()
            .iter()
            .skip(page.offset)
            .take(page.limit.unwrap_or(DEFAULT_PAGE))
            .map(|p| project_info(p))
            .collect(),
    )
}

#[derive(Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

#[derive(Serialize, Deserialize)]
pub struct BugSummary {
    pub bug_id: String,
    pub app_id: String,
    pub title: String,
    pub n_obs: usize,
    pub bug_type: BugType,
    pub valid: bool,
}

#[derive(Serialize, Deserialize)]
pub struct BugPage {
    pub total: usize,
    pub offset: usize,
    pub bugs: Vec<BugSummary>,
}

const DEFAULT_PAGE: usize = 50;

async fn list_bugs(
    State(state): Shared,
    Path(p): Path<String>,
    Query(page): Query<Page>,
) -> ApiResult<Json<BugPage>> {
    let project = state.project(&p)?;
    let bugs = &project.project.bugs;
    let limit = page.limit.unwrap_or(DEFAULT_PAGE);
    Ok(Json(BugPage {
        total: bugs.len(),
        offset: page.offset,
        bugs: bugs
            .iter()
            .skip(page.offset)
            .take(limit)
            .map(|b| BugSummary {
                bug_id: b.bug_id.clone(),
                app_id: b.app_id.clone(),
                title: b.title.clone(),
                n_obs: b.obs.len(),
                bug_type: b.bug_type,
                valid: !project.project.violations.contains_key(&b.bug_id),
            })
            .collect(),
    }))
}

#[derive(Deserialize)]
struct Reveal {
    #[serde(default)]
    reveal: bool,
}

const GROUND_TRUTH_FIELDS: [&str; 3] = ["gt_screens", "gt_components", "gt_files"];

async fn get_bug(
    State(state): Shared,
    Path((p, b)): Path<(String, String)>,
    Query(q): Query<Reveal>,
) -> ApiResult<Json<serde_json::Value>> {
    let project = state.project(&p)?;
    let bug = project
        .project
        .bug(&b)
        .ok_or_else(|| ApiError::BugNotFound(b.clone()))?;
    let mut value = serde_json::to_value(bug).map_err(|e| ApiError::Internal(e.to_string()))?;
    let obj = value.as_object_mut().expect("bug serializes to an object");
    if !q.reveal {
        for f in GROUND_TRUTH_FIELDS {
            obj.remove(f);
        }
    }
    if let Some(v) = project.project.violations.get(&b) {
        obj.insert("violations".into(), serde_json::json!(v));
    }
    Ok(Json(value))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    ob_id: Option<String>,
    custom_ob_text: Option<String>,
    #[serde(default)]
    scorer: ScorerSpec,
}

fn ob_query(session: &Session) -> ObQuery<'_> {
    match &session.ob_id {
        Some(id) => ObQuery::new(id, &session.ob_text),
        None => ObQuery::text(&session.ob_text),
    }
}

async fn create_session(
    State(state): Shared,
    Path((p, b)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: CreateSession = parse_body(&body)?;
    let project = state.project(&p)?;
    let bug = project
        .project
        .bug(&b)
        .ok_or_else(|| ApiError::BugNotFound(b.clone()))?
        .clone();
    let (ob_id, ob_text) = match (req.ob_id, req.custom_ob_text) {
        (Some(id), None) => {
            let ob = bug
                .ob(&id)
                .ok_or_else(|| ApiError::ObNotFound(id.clone()))?;
            (Some(id), ob.text.clone())
        }
        (None, Some(text)) if !text.trim().is_empty() => (None, text),
        (None, Some(_)) => return Err(ApiError::InvalidRequest("custom_ob_text is empty".into())),
        _ => {
            return Err(ApiError::InvalidRequest(
                "exactly one of ob_id and custom_ob_text is required".into(),
            ))
        }
    };
    let session = blocking(move || {
        let scorer = project.scorer(&req.scorer)?;
        let screens = project.project.app_screens(&bug.app_id);
        let mut session = Session {
            session_id: uuid::Uuid::new_v4().to_string(),
            project_id: project.id.clone(),
            bug_id: bug.bug_id.clone(),
            ob_id,
            ob_text,
            scorer: req.scorer,
            screen_ranking: RankedList::empty(""),
            selected_screens: Vec::new(),
            component_rankings: BTreeMap::new(),
            created_at: now_secs(),
        };
        session.screen_ranking = localize_screens(&ob_query(&session), &screens, &scorer)?;
        project.sessions.put(session.clone())?;
        Ok(session)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(State(state): Shared, Path(s): Path<String>) -> ApiResult<Json<Session>> {
    Ok(Json(state.find_session(&s)?.1))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Select {
    screen_ids: Vec<String>,
}

async fn select_screens(
    State(state): Shared,
    Path(s): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Session>> {
    let req: Select = parse_body(&body)?;
    if req.screen_ids.is_empty() {
        return Err(ApiError::InvalidRequest("screen_ids is empty".into()));
    }
    let (project, _) = state.find_session(&s)?;
    let lock = project.sessions.lock_for(&s);
    let _guard = lock.lock().await;
    // re-read under the lock so concurrent selections compose
    let session = project
        .sessions
        .get(&s)
        .ok_or_else(|| ApiError::SessionNotFound(s.clone()))?;
    let missing: Vec<String> = req
        .screen_ids
        .iter()
        .filter(|id| session.screen_ranking.score_of(id).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(ApiError::ScreenNotInRanking(missing));
    }
    let updated = blocking(move || {
        let mut session = session;
        let scorer = project.scorer(&session.scorer)?;
        let app_id = project
            .project
            .bug(&session.bug_id)
            .map(|b| b.app_id.clone())
            .ok_or_else(|| ApiError::BugNotFound(session.bug_id.clone()))?;
        for id in &req.screen_ids {
            if session.component_rankings.contains_key(id) {
                continue;
            }
            let screen = project
                .project
                .screen(&app_id, id)
                .ok_or_else(|| ApiError::ScreenNotFound(id.clone()))?;
            let ranked = if screen.leaf_components.is_empty() {
                RankedList::empty(session.ob_id.clone().unwrap_or_default())
            } else {
                localize_components(&ob_query(&session), screen, &scorer)?
            };
            session.component_rankings.insert(id.clone(), ranked);
        }
        for id in req.screen_ids {
            if !session.selected_screens.contains(&id) {
                session.selected_screens.push(id);
            }
        }
        project.sessions.put(session.clone())?;
        Ok(session)
    })
    .await?;
    Ok(Json(updated))
}

#[derive(Deserialize)]
struct ScreenFilter {
    app_id: Option<String>,
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
}

#[derive(Serialize, Deserialize)]
pub struct ScreenSummary {
    pub screen_id: String,
    pub app_id: String,
    pub activity_name: String,
    pub source: ScreenSource,
    pub n_components: usize,
    pub has_screenshot: bool,
    pub frame: Bounds,
}

async fn list_screens(
    State(state): Shared,
    Path(p): Path<String>,
    Query(f): Query<ScreenFilter>,
) -> ApiResult<Json<Vec<ScreenSummary>>> {
    let project = state.project(&p)?;
    Ok(Json(
        project
            .project
            .screens
            .iter()
            .filter(|s| f.app_id.as_ref().is_none_or(|a| *a == s.app_id))
            .skip(f.offset)
            .take(f.limit.unwrap_or(DEFAULT_PAGE))
            .map(|s| ScreenSummary {
                screen_id: s.screen_id.clone(),
                app_id: s.app_id.clone(),
                activity_name: s.activity_name.clone(),
                source: s.source,
                n_components: s.leaf_components.len(),
                has_screenshot: s.screenshot_path.is_some(),
                frame: s.frame(),
            })
            .collect(),
    ))
}

fn find_screen<'a>(
    project: &'a LoadedProject,
    screen_id: &str,
    app_id: Option<&str>,
) -> ApiResult<&'a UIScreen> {
    project
        .project
        .screens
        .iter()
        .find(|s| s.screen_id == screen_id && app_id.is_none_or(|a| a == s.app_id))
        .ok_or_else(|| ApiError::ScreenNotFound(screen_id.to_string()))
}

async fn screenshot(
    State(state): Shared,
    Path((p, s)): Path<(String, String)>,
    Query(f): Query<ScreenFilter>,
) -> ApiResult<Response> {
    let project = state.project(&p)?;
    let screen = find_screen(&project, &s, f.app_id.as_deref())?;
    let path = screen
        .screenshot_path
        .clone()
        .ok_or_else(|| ApiError::ScreenshotNotFound(s.clone()))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::ScreenshotNotFound(s.clone()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Serialize, Deserialize)]
pub struct ComponentView {
    pub index: usize,
    pub component_id: String,
    pub label: String,
    pub description: String,
    pub comp_type: String,
    pub bounds: Bounds,
    pub clickable: bool,
}

#[derive(Serialize, Deserialize)]
pub struct ScreenComponents {
    pub screen_id: String,
    pub frame: Bounds,
    pub components: Vec<ComponentView>,
}

async fn components(
    State(state): Shared,
    Path((p, s)): Path<(String, String)>,
    Query(f): Query<ScreenFilter>,
) -> ApiResult<Json<ScreenComponents>> {
    let project = state.project(&p)?;
    let screen = find_screen(&project, &s, f.app_id.as_deref())?;
    Ok(Json(ScreenComponents {
        screen_id: screen.screen_id.clone(),
        frame: screen.frame(),
        components: screen
            .leaf_components
            .iter()
            .enumerate()
            .skip(f.offset)
            .take(f.limit.unwrap_or(usize::MAX))
            .map(|(index, c)| ComponentView {
                index,
                component_id: c.component_id.clone(),
                label: c.label.clone(),
                description: c.description.clone(),
                comp_type: c.comp_type.clone(),
                bounds: c.bounds,
                clickable: c.clickable,
            })
            .collect(),
    }))
}

#[derive(Serialize, Deserialize)]
pub struct CodeLocResponse {
    pub bug_id: String,
    pub config: CodeLocConfig,
    #[serde(flatten)]
    pub result: PipelineResult,
    pub baseline: RankedList,
}

async fn codeloc(
    State(state): Shared,
    Path((p, b)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<CodeLocResponse>> {
    let cfg: CodeLocConfig = parse_body(&body)?;
    cfg.validate()?;
    let project = state.project(&p)?;
    let bug = project
        .project
        .bug(&b)
        .ok_or_else(|| ApiError::BugNotFound(b.clone()))?
        .clone();
    let resp = blocking(move || {
        let scorer = project.scorer(&cfg.sl_scorer)?;
        let screens = project.project.app_screens(&bug.app_id);
        let external = load_external_for(project.root(), &cfg)?;
        let ctx = CodeLocContext {
            files: &project.project.code_files,
            index: &project.code_index,
            external: external.as_ref(),
        };
        let sl = screen_rankings(&bug, &screens, &scorer, cfg.ob_strategy)?;
        let result = run_pipeline(&bug, &sl, &screens, &ctx, &cfg)?;
        let baseline = baseline_ranking(&bug, &ctx, cfg.localizer)?;
        Ok(CodeLocResponse {
            bug_id: bug.bug_id.clone(),
            config: cfg,
            result,
            baseline,
        })
    })
    .await?;
    Ok(Json(resp))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateRequest {
    task: LocalizationTask,
    #[serde(default)]
    scorer: ScorerSpec,
    #[serde(default = "default_ks")]
    ks: Vec<usize>,
    stratify: Option<StratifyAxis>,
    #[serde(default)]
    correlation: CorrelationMode,
}

fn default_ks() -> Vec<usize> {
    vec![1, 2, 3]
}

async fn evaluate_project(
    State(state): Shared,
    Path(p): Path<String>,
    body: Bytes,
) -> ApiResult<Json<EvalOutcome>> {
    let req: EvaluateRequest = parse_body(&body)?;
    let project = state.project(&p)?;
    let outcome = blocking(move || {
        let scorer = project.scorer(&req.scorer)?;
        Ok(evaluate(
            &project.project,
            req.task,
            &scorer,
            &req.ks,
            req.stratify,
            req.correlation,
        )?)
    })
    .await?;
    Ok(Json(outcome))
}
