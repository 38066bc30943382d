//! Loading of uiautomator hierarchy dumps, leaf extraction, and structural
//! deduplication of screens.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codeloc::CodeFile;
use crate::model::{
    default_app_id, validate_bug_record, Bounds, BugRecord, ScreenSource, UIComponent,
    UIHierarchyNode, UIScreen,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("malformed bounds {0:?}")]
    MalformedBounds(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    InvalidFile { path: PathBuf, message: String },
    #[error("no screen could be loaded ({} file errors)", .0.len())]
    NoScreens(Vec<FileIssue>),
}

/// Type-name rules deciding which components are layout containers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerRules {
    /// A type is a container if its name contains any of these.
    pub markers: Vec<String>,
    /// Types that are never containers even if a marker matches.
    pub leaf_types: Vec<String>,
}

impl Default for ContainerRules {
    fn default() -> Self {
        Self {
            markers: [
                "Layout",
                "ListView",
                "RecyclerView",
                "ScrollView",
                "ViewGroup",
            ]
            .map(String::from)
            .to_vec(),
            leaf_types: vec!["WebView".to_string()],
        }
    }
}

impl ContainerRules {
    pub fn is_container(&self, comp_type: &str) -> bool {
        if self.leaf_types.iter().any(|t| t == comp_type) {
            return false;
        }
        self.markers.iter().any(|m| comp_type.contains(m.as_str()))
    }
}

/// Parses `"[x1,y1][x2,y2]"` into `(x, y, w, h)`.
pub fn parse_bounds(raw: &str) -> Result<Bounds, IngestError> {
    let bad = || IngestError::MalformedBounds(raw.to_string());
    let rest = raw.strip_prefix('[').ok_or_else(bad)?;
    let (first, rest) = rest.split_once("][").ok_or_else(bad)?;
    let second = rest.strip_suffix(']').ok_or_else(bad)?;
    let pair = |s: &str| -> Result<(i64, i64), IngestError> {
        let (a, b) = s.split_once(',').ok_or_else(bad)?;
        let parse = |t: &str| {
            let t = t.trim_start_matches('-');
            if t.is_empty() || !t.bytes().all(|c| c.is_ascii_digit()) {
                return Err(bad());
            }
            Ok(())
        };
        parse(a)?;
        parse(b)?;
        Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
    };
    let (x1, y1) = pair(first)?;
    let (x2, y2) = pair(second)?;
    if x1 < 0 || y1 < 0 || x2 < x1 || y2 < y1 {
        return Err(bad());
    }
    let fit = |v: i64| u32::try_from(v).map_err(|_| bad());
    Ok(Bounds::new(
        fit(x1)?,
        fit(y1)?,
        fit(x2 - x1)?,
        fit(y2 - y1)?,
    ))
}

fn short_type(class: &str) -> String {
    let name = class.rsplit(['.', '$']).next().unwrap_or(class);
    if name.is_empty() {
        "View".to_string()
    } else {
        name.to_string()
    }
}

/// `"com.app:id/ssid_filter"` -> `"ssid_filter"`.
fn resource_entry(raw: &str) -> String {
    raw.rsplit('/').next().unwrap_or(raw).to_string()
}

fn node_from_xml(node: roxmltree::Node<'_, '_>) -> Result<UIHierarchyNode, IngestError> {
    let attr = |name: &str| node.attribute(name).unwrap_or("").to_string();
    let flag = |name: &str| node.attribute(name).map(|v| v == "true");
    let bounds = match node.attribute("bounds") {
        Some(raw) => parse_bounds(raw)?,
        None => Bounds::default(),
    };
    let visible = flag("visible-to-user")
        .or_else(|| flag("visible"))
        .unwrap_or(bounds.area() > 0);
    let component = UIComponent {
        component_id: resource_entry(node.attribute("resource-id").unwrap_or("")),
        label: attr("text"),
        description: attr("content-desc"),
        comp_type: short_type(node.attribute("class").unwrap_or("")),
        bounds,
        visible,
        clickable: flag("clickable").unwrap_or(false),
    };
    let children = node
        .children()
        .filter(|c| c.has_tag_name("node"))
        .map(node_from_xml)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(UIHierarchyNode {
        component,
        children,
    })
}

/// Parses a uiautomator dump. A `<hierarchy>` wrapper with several top-level
/// nodes is folded into one synthetic root spanning all of them.
pub fn parse_hierarchy(xml: &[u8]) -> Result<UIHierarchyNode, IngestError> {
    let text = std::str::from_utf8(xml).map_err(|e| IngestError::MalformedXml(e.to_string()))?;
    let doc =
        roxmltree::Document::parse(text).map_err(|e| IngestError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    if root.has_tag_name("node") {
        return node_from_xml(root);
    }
    let mut tops = root
        .children()
        .filter(|c| c.has_tag_name("node"))
        .map(node_from_xml)
        .collect::<Result<Vec<_>, _>>()?;
    match tops.len() {
        0 => Err(IngestError::MalformedXml(format!(
            "<{}> contains no <node> elements",
            root.tag_name().name()
        ))),
        1 => Ok(tops.pop().unwrap()),
        _ => {
            let (mut x2, mut y2) = (0u32, 0u32);
            for t in &tops {
                let b = t.component.bounds;
                x2 = x2.max(b.x + b.width);
                y2 = y2.max(b.y + b.height);
            }
            Ok(UIHierarchyNode::with_children(
                UIComponent::new("Hierarchy", Bounds::new(0, 0, x2, y2)),
                tops,
            ))
        }
    }
}

pub fn extract_leaf_components(root: &UIHierarchyNode) -> Vec<UIComponent> {
    extract_leaf_components_with(root, &ContainerRules::default())
}

/// Visible, non-container leaves in document order.
pub fn extract_leaf_components_with(
    root: &UIHierarchyNode,
    rules: &ContainerRules,
) -> Vec<UIComponent> {
    root.preorder()
        .filter(|n| n.is_leaf())
        .map(|n| &n.component)
        .filter(|c| c.visible && !rules.is_container(&c.comp_type))
        .cloned()
        .collect()
}

/// SHA-256 over the pre-order sequence of `(type, width, height, child count)`.
/// Text fields and positions do not participate.
pub fn structural_signature(root: &UIHierarchyNode) -> String {
    let mut hasher = Sha256::new();
    for node in root.preorder() {
        let c = &node.component;
        hasher.update((c.comp_type.len() as u64).to_le_bytes());
        hasher.update(c.comp_type.as_bytes());
        hasher.update(c.bounds.width.to_le_bytes());
        hasher.update(c.bounds.height.to_le_bytes());
        hasher.update((node.children.len() as u64).to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Keeps the first screen per `(app_id, signature)`, with trace screens
/// moved ahead of crawl screens (stable otherwise).
pub fn dedup_screens(screens: Vec<UIScreen>) -> Vec<UIScreen> {
    let mut ordered = screens;
    ordered.sort_by_key(|s| s.source != ScreenSource::Trace);
    let mut seen = HashSet::new();
    ordered
        .into_iter()
        .filter(|s| seen.insert((s.app_id.clone(), s.signature.clone())))
        .collect()
}

/// Directory layout of a project.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectLayout {
    pub root_dir: PathBuf,
}

impl ProjectLayout {
    pub fn new(root_dir: impl Into<PathBuf>) -> Self {
        Self {
            root_dir: root_dir.into(),
        }
    }

    pub fn screens_dir(&self) -> PathBuf {
        self.root_dir.join("screens")
    }

    pub fn bugs_dir(&self) -> PathBuf {
        self.root_dir.join("bugs")
    }

    pub fn code_dir(&self) -> PathBuf {
        self.root_dir.join("code")
    }

    pub fn embeddings_dir(&self) -> PathBuf {
        self.root_dir.join("embeddings")
    }
}

/// Optional per-screen `screen.json`.
#[derive(Debug, Clone, Default, Deserialize)]
struct ScreenMeta {
    #[serde(default)]
    activity_name: String,
    #[serde(default)]
    source: ScreenSource,
    #[serde(default)]
    app_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileIssue {
    pub path: String,
    pub message: String,
}

/// Everything loaded from a project directory.
#[derive(Debug, Clone)]
pub struct Project {
    pub layout: ProjectLayout,
    pub screens: Vec<UIScreen>,
    pub bugs: Vec<BugRecord>,
    pub code_files: Vec<CodeFile>,
    /// Non-fatal per-file errors.
    pub issues: Vec<FileIssue>,
    /// Validation violations keyed by bug id (only bugs with violations).
    pub violations: BTreeMap<String, Vec<String>>,
    /// Screens dropped as structural duplicates.
    pub duplicates_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub apps: usize,
    pub screens: usize,
    pub mean_screens_per_app: f64,
    pub mean_components_per_screen: f64,
    pub bugs: usize,
    pub obs: usize,
    pub code_files: usize,
}

impl Project {
    pub fn app_screens(&self, app_id: &str) -> Vec<UIScreen> {
        self.screens
            .iter()
            .filter(|s| s.app_id == app_id)
            .cloned()
            .collect()
    }

    pub fn screen(&self, app_id: &str, screen_id: &str) -> Option<&UIScreen> {
        self.screens
            .iter()
            .find(|s| s.app_id == app_id && s.screen_id == screen_id)
    }

    pub fn bug(&self, bug_id: &str) -> Option<&BugRecord> {
        self.bugs.iter().find(|b| b.bug_id == bug_id)
    }

    pub fn stats(&self) -> CorpusStats {
        let apps: HashSet<&str> = self.screens.iter().map(|s| s.app_id.as_str()).collect();
        let n_screens = self.screens.len();
        let n_comps: usize = self.screens.iter().map(|s| s.leaf_components.len()).sum();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        CorpusStats {
            apps: apps.len(),
            screens: n_screens,
            mean_screens_per_app: ratio(n_screens, apps.len()),
            mean_components_per_screen: ratio(n_comps, n_screens),
            bugs: self.bugs.len(),
            obs: self.bugs.iter().map(|b| b.obs.len()).sum(),
            code_files: self.code_files.len(),
        }
    }
}

fn issue(path: &Path, message: impl ToString) -> FileIssue {
    FileIssue {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn sorted_entries(dir: &Path) -> Vec<PathBuf> {
    let mut entries: Vec<PathBuf> = match fs::read_dir(dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
        Err(_) => Vec::new(),
    };
    entries.sort();
    entries
}

fn load_screen(dir: &Path, rules: &ContainerRules) -> Result<UIScreen, FileIssue> {
    let screen_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| issue(dir, "screen directory name is not UTF-8"))?
        .to_string();
    let xml_files: Vec<PathBuf> = sorted_entries(dir)
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "xml"))
        .collect();
    let hierarchy = match xml_files.as_slice() {
        [one] => one,
        [] => return Err(issue(dir, "no hierarchy file")),
        _ => return Err(issue(dir, "more than one hierarchy file")),
    };
    let bytes = fs::read(hierarchy).map_err(|e| issue(hierarchy, e))?;
    let root = parse_hierarchy(&bytes).map_err(|e| issue(hierarchy, e))?;

    let meta_path = dir.join("screen.json");
    let meta: ScreenMeta = if meta_path.exists() {
        let raw = fs::read_to_string(&meta_path).map_err(|e| issue(&meta_path, e))?;
        serde_json::from_str(&raw).map_err(|e| issue(&meta_path, e))?
    } else {
        ScreenMeta::default()
    };

    let screenshot = dir.join("screenshot.png");
    Ok(UIScreen {
        screen_id,
        app_id: meta.app_id.unwrap_or_else(default_app_id),
        activity_name: meta.activity_name,
        screenshot_path: screenshot.exists().then_some(screenshot),
        leaf_components: extract_leaf_components_with(&root, rules),
        signature: structural_signature(&root),
        root,
        source: meta.source,
    })
}

pub fn load_project(layout: &ProjectLayout) -> Result<Project, IngestError> {
    load_project_with(layout, &ContainerRules::default())
}

/// Loads screens (in parallel), bugs, and code files. Per-file failures are
/// collected; the load fails only if no screen could be parsed.
pub fn load_project_with(
    layout: &ProjectLayout,
    rules: &ContainerRules,
) -> Result<Project, IngestError> {
    let screen_dirs: Vec<PathBuf> = sorted_entries(&layout.screens_dir())
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    let parsed: Vec<Result<UIScreen, FileIssue>> = screen_dirs
        .par_iter()
        .map(|dir| load_screen(dir, rules))
        .collect();
    let mut issues = Vec::new();
    let mut raw_screens = Vec::new();
    for r in parsed {
        match r {
            Ok(s) => raw_screens.push(s),
            Err(e) => issues.push(e),
        }
    }
    if raw_screens.is_empty() {
        if issues.is_empty() {
            issues.push(issue(&layout.screens_dir(), "no screen directories"));
        }
        return Err(IngestError::NoScreens(issues));
    }
    let n_raw = raw_screens.len();
    let screens = dedup_screens(raw_screens);
    let duplicates_dropped = n_raw - screens.len();

    let mut bugs = Vec::new();
    for path in sorted_entries(&layout.bugs_dir()) {
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let loaded = fs::read_to_string(&path)
            .map_err(|e| issue(&path, e))
            .and_then(|raw| serde_json::from_str::<BugRecord>(&raw).map_err(|e| issue(&path, e)));
        match loaded {
            Ok(b) => bugs.push(b),
            Err(e) => issues.push(e),
        }
    }
    let mut violations = BTreeMap::new();
    for bug in &bugs {
        let v = validate_bug_record(bug, &screens);
        if !v.is_empty() {
            violations.insert(bug.bug_id.clone(), v);
        }
    }

    let code_files = load_code_files(&layout.code_dir(), &mut issues);

    Ok(Project {
        layout: layout.clone(),
        screens,
        bugs,
        code_files,
        issues,
        violations,
        duplicates_dropped,
    })
}

fn load_code_files(dir: &Path, issues: &mut Vec<FileIssue>) -> Vec<CodeFile> {
    if !dir.is_dir() {
        return Vec::new();
    }
    let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .filter_map(|p| {
            let rel = p.strip_prefix(dir).ok()?;
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            match fs::read(&p) {
                Ok(bytes) => Some(CodeFile::new(rel, &String::from_utf8_lossy(&bytes))),
                Err(e) => {
                    issues.push(issue(&p, e));
                    None
                }
            }
        })
        .collect()
}
