use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use uiloc_core::codeloc::CodeIndex;
use uiloc_core::ingest::{load_project, ProjectLayout};
use uiloc_core::model::RankedList;
use uiloc_core::retrieval::{ChainEncoder, Scorer, ScorerSpec};
use uiloc_core::Project;

use crate::embed::HttpEncoder;
use crate::error::ApiError;

/// A triage session: one OB localized over the app's screens, plus the
/// component rankings of the screens the user picked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub project_id: String,
    pub bug_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ob_id: Option<String>,
    pub ob_text: String,
    pub scorer: ScorerSpec,
    pub screen_ranking: RankedList,
    #[serde(default)]
    pub selected_screens: Vec<String>,
    #[serde(default)]
    pub component_rankings: BTreeMap<String, RankedList>,
    pub created_at: u64,
}

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Default, Serialize, Deserialize)]
struct SessionFile {
    sessions: BTreeMap<String, Session>,
}

/// Sessions of one project, mirrored to `<root>/.uiloc/sessions.json`.
pub struct SessionStore {
    path: PathBuf,
    sessions: Mutex<BTreeMap<String, Session>>,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl SessionStore {
    pub fn open(project_root: &Path) -> Result<Self, ApiError> {
        let path = project_root.join(".uiloc").join("sessions.json");
        let sessions = match std::fs::read_to_string(&path) {
            Ok(raw) => {
                serde_json::from_str::<SessionFile>(&raw)
                    .map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))?
                    .sessions
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(ApiError::Internal(format!("{}: {e}", path.display()))),
        };
        Ok(Self {
            path,
            sessions: Mutex::new(sessions),
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, id: &str) -> Option<Session> {
        self.sessions.lock().unwrap().get(id).cloned()
    }

    /// Lock serializing mutations of one session.
    pub fn lock_for(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.locks
            .lock()
            .unwrap()
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    /// Inserts or replaces a session and rewrites the file atomically.
    pub fn put(&self, session: Session) -> Result<(), ApiError> {
        let mut sessions = self.sessions.lock().unwrap();
        let previous = sessions.insert(session.session_id.clone(), session.clone());
        if let Err(e) = self.persist(&sessions) {
            match previous {
                Some(p) => sessions.insert(p.session_id.clone(), p),
                None => sessions.remove(&session.session_id),
            };
            return Err(e);
        }
        Ok(())
    }

    fn persist(&self, sessions: &BTreeMap<String, Session>) -> Result<(), ApiError> {
        let io = |e: std::io::Error| ApiError::Internal(format!("{}: {e}", self.path.display()));
        let dir = self.path.parent().expect("sessions file has a parent");
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        let file = SessionFile {
            sessions: sessions.clone(),
        };
        serde_json::to_writer_pretty(&mut tmp, &file)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        tmp.write_all(b"\n").map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&self.path).map_err(|e| io(e.error))?;
        Ok(())
    }
}

pub struct LoadedProject {
    pub id: String,
    pub project: Project,
    pub code_index: CodeIndex,
    pub sessions: SessionStore,
    scorers: Mutex<HashMap<ScorerSpec, Arc<Scorer>>>,
    embed_url: Option<String>,
}

impl LoadedProject {
    pub fn root(&self) -> &Path {
        &self.project.layout.root_dir
    }

    /// Resolves (and caches) a scorer. Embedding scorers fall back to the
    /// live provider, when configured, for queries without stored vectors.
    pub fn scorer(&self, spec: &ScorerSpec) -> Result<Arc<Scorer>, ApiError> {
        if let Some(s) = self.scorers.lock().unwrap().get(spec) {
            return Ok(s.clone());
        }
        let mut scorer = spec.resolve(&self.project.layout.embeddings_dir())?;
        if let (Scorer::Embedding(e), Some(url)) = (&mut scorer, &self.embed_url) {
            let stored = std::mem::replace(&mut e.queries, Box::new(ChainEncoder(Vec::new())));
            e.queries = Box::new(ChainEncoder(vec![
                stored,
                Box::new(HttpEncoder { url: url.clone() }),
            ]));
        }
        let scorer = Arc::new(scorer);
        self.scorers
            .lock()
            .unwrap()
            .insert(spec.clone(), scorer.clone());
        Ok(scorer)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Live embedding endpoint for free-text queries.
    pub embed_url: Option<String>,
}

#[derive(Default)]
pub struct AppState {
    pub config: ServiceConfig,
    projects: RwLock<BTreeMap<String, Arc<LoadedProject>>>,
}

fn slug(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    let s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '-'
            }
        })
        .collect();
    if s.is_empty() {
        "project".into()
    } else {
        s
    }
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config,
            projects: RwLock::default(),
        }
    }

    /// Loads (or reloads) a project directory. The id is stable per path.
    pub fn register(&self, path: &Path) -> Result<Arc<LoadedProject>, ApiError> {
        let root = path
            .canonicalize()
            .map_err(|e| ApiError::IngestFailed(format!("{}: {e}", path.display())))?;
        let project = load_project(&ProjectLayout::new(&root))
            .map_err(|e| ApiError::IngestFailed(e.to_string()))?;
        let sessions = SessionStore::open(&root)?;
        let mut projects = self.projects.write().unwrap();
        let existing = projects
            .iter()
            .find(|(_, p)| p.root() == root)
            .map(|(id, _)| id.clone());
        let id = existing.unwrap_or_else(|| {
            let base = slug(&root);
            let mut id = base.clone();
            let mut n = 2;
            while projects.contains_key(&id) {
                id = format!("{base}-{n}");
                n += 1;
            }
            id
        });
        let loaded = Arc::new(LoadedProject {
            id: id.clone(),
            code_index: CodeIndex::build(&project.code_files),
            project,
            sessions,
            scorers: Mutex::default(),
            embed_url: self.config.embed_url.clone(),
        });
        projects.insert(id, loaded.clone());
        Ok(loaded)
    }

    pub fn project(&self, id: &str) -> Result<Arc<LoadedProject>, ApiError> {
        self.projects
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::ProjectNotFound(id.to_string()))
    }

    pub fn projects(&self) -> Vec<Arc<LoadedProject>> {
        self.projects.read().unwrap().values().cloned().collect()
    }

    /// The project owning a session, and the session itself.
    pub fn find_session(&self, id: &str) -> Result<(Arc<LoadedProject>, Session), ApiError> {
        self.projects()
            .into_iter()
            .find_map(|p| p.sessions.get(id).map(|s| (p, s)))
            .ok_or_else(|| ApiError::SessionNotFound(id.to_string()))
    }
}
