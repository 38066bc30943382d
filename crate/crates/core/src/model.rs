//! Domain types shared by every stage of the pipeline.
//!
//! All types serialize to a canonical snake_case JSON form. Everything here is
//! immutable once built, so values can be shared freely across threads.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("duplicate doc_id {0:?} in ranked list")]
    DuplicateDocId(String),
    #[error("non-finite score for doc_id {0:?}")]
    NonFiniteScore(String),
    #[error("ranked list is not sorted at position {0}")]
    Unsorted(usize),
}

/// Axis-aligned rectangle in screen pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Bounds {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Bounds {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

/// A single widget or container as described by the UI hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UIComponent {
    #[serde(default)]
    pub component_id: String,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub description: String,
    pub comp_type: String,
    pub bounds: Bounds,
    #[serde(default)]
    pub visible: bool,
    #[serde(default)]
    pub clickable: bool,
}

impl UIComponent {
    pub fn new(comp_type: impl Into<String>, bounds: Bounds) -> Self {
        Self {
            component_id: String::new(),
            label: String::new(),
            description: String::new(),
            comp_type: comp_type.into(),
            bounds,
            visible: true,
            clickable: false,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.component_id = id.into();
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_visible(mut self, visible: bool) -> Self {
        self.visible = visible;
        self
    }

    pub fn with_clickable(mut self, clickable: bool) -> Self {
        self.clickable = clickable;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UIHierarchyNode {
    pub component: UIComponent,
    #[serde(default)]
    pub children: Vec<UIHierarchyNode>,
}

impl UIHierarchyNode {
    pub fn leaf(component: UIComponent) -> Self {
        Self {
            component,
            children: Vec::new(),
        }
    }

    pub fn with_children(component: UIComponent, children: Vec<UIHierarchyNode>) -> Self {
        Self {
            component,
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Pre-order (document order) traversal.
    pub fn preorder(&self) -> Preorder<'_> {
        Preorder { stack: vec![self] }
    }

    pub fn node_count(&self) -> usize {
        self.preorder().count()
    }
}

pub struct Preorder<'a> {
    stack: Vec<&'a UIHierarchyNode>,
}

impl<'a> Iterator for Preorder<'a> {
    type Item = &'a UIHierarchyNode;

    fn next(&mut self) -> Option<Self::Item> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ScreenSource {
    Trace,
    #[default]
    Crawl,
}

/// A deduplicated app screen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UIScreen {
    pub screen_id: String,
    #[serde(default = "default_app_id")]
    pub app_id: String,
    #[serde(default)]
    pub activity_name: String,
    #[serde(default)]
    pub screenshot_path: Option<PathBuf>,
    pub root: UIHierarchyNode,
    pub leaf_components: Vec<UIComponent>,
    pub signature: String,
    #[serde(default)]
    pub source: ScreenSource,
}

pub fn default_app_id() -> String {
    "app".to_string()
}

impl UIScreen {
    /// Builds a screen, deriving leaf components and the structural signature
    /// from `root` with the default container rules.
    pub fn from_root(
        screen_id: impl Into<String>,
        activity_name: impl Into<String>,
        root: UIHierarchyNode,
        source: ScreenSource,
    ) -> Self {
        let leaf_components = crate::ingest::extract_leaf_components(&root);
        let signature = crate::ingest::structural_signature(&root);
        Self {
            screen_id: screen_id.into(),
            app_id: default_app_id(),
            activity_name: activity_name.into(),
            screenshot_path: None,
            root,
            leaf_components,
            signature,
            source,
        }
    }

    pub fn with_app_id(mut self, app_id: impl Into<String>) -> Self {
        self.app_id = app_id.into();
        self
    }

    pub fn with_screenshot(mut self, path: impl Into<PathBuf>) -> Self {
        self.screenshot_path = Some(path.into());
        self
    }

    /// Bounds of the root node, used as the screen frame.
    pub fn frame(&self) -> Bounds {
        self.root.component.bounds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
}

impl Difficulty {
    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        }
    }
}

/// One observed-behavior sentence of a bug report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OBDescription {
    pub ob_id: String,
    pub text: String,
    pub quality: i64,
    pub difficulty: Difficulty,
    #[serde(default)]
    pub position: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugType {
    Crash,
    #[default]
    Output,
    Cosmetic,
    Navigation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugRecord {
    pub bug_id: String,
    #[serde(default = "default_app_id")]
    pub app_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub body_sentences: Vec<String>,
    #[serde(default)]
    pub obs: Vec<OBDescription>,
    #[serde(default)]
    pub gt_screens: BTreeSet<String>,
    #[serde(default)]
    pub gt_components: BTreeMap<String, BTreeSet<usize>>,
    /// Ground-truth buggy code files (relative paths), used to score code localization.
    #[serde(default)]
    pub gt_files: BTreeSet<String>,
    #[serde(default)]
    pub bug_type: BugType,
}

impl BugRecord {
    /// Title and body joined into the bug report query.
    pub fn report_text(&self) -> String {
        std::iter::once(self.title.as_str())
            .chain(self.body_sentences.iter().map(String::as_str))
            .filter(|s| !s.trim().is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn ob(&self, ob_id: &str) -> Option<&OBDescription> {
        self.obs.iter().find(|ob| ob.ob_id == ob_id)
    }

    /// The OB with the smallest sentence position (ties: first listed).
    pub fn first_ob(&self) -> Option<&OBDescription> {
        self.obs.iter().min_by_key(|ob| ob.position)
    }

    /// Copy without ground-truth fields.
    pub fn redacted(&self) -> BugRecord {
        BugRecord {
            gt_screens: BTreeSet::new(),
            gt_components: BTreeMap::new(),
            gt_files: BTreeSet::new(),
            ..self.clone()
        }
    }
}

/// Checks a bug record against the deduplicated screen corpus of its app.
/// Each violation names the field and the offending id.
pub fn validate_bug_record(record: &BugRecord, corpus: &[UIScreen]) -> Vec<String> {
    let mut violations = Vec::new();
    let screens: BTreeMap<&str, &UIScreen> = corpus
        .iter()
        .filter(|s| s.app_id == record.app_id)
        .map(|s| (s.screen_id.as_str(), s))
        .collect();

    for id in &record.gt_screens {
        if !screens.contains_key(id.as_str()) {
            violations.push(format!("gt_screens: unknown screen {id}"));
        }
    }
    for (id, comps) in &record.gt_components {
        match screens.get(id.as_str()) {
            None => violations.push(format!("gt_components: unknown screen {id}")),
            Some(screen) => {
                if !record.gt_screens.contains(id) {
                    violations.push(format!("gt_components: screen {id} not in gt_screens"));
                }
                for idx in comps {
                    if *idx >= screen.leaf_components.len() {
                        violations.push(format!(
                            "gt_components[{id}]: component index {idx} out of range"
                        ));
                    }
                }
            }
        }
    }

    if record.obs.is_empty() {
        violations.push("obs: empty".to_string());
    }
    let mut seen = HashSet::new();
    for (i, ob) in record.obs.iter().enumerate() {
        if ob.text.trim().is_empty() {
            violations.push(format!("obs[{i}].text empty"));
        }
        if !(1..=5).contains(&ob.quality) {
            violations.push(format!("obs[{i}].quality out of range"));
        }
        if !seen.insert(ob.ob_id.as_str()) {
            violations.push(format!("obs[{i}].ob_id duplicate {}", ob.ob_id));
        }
    }
    violations
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Ordered `(doc_id, score)` pairs: score descending, ties by ascending doc_id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRankedList")]
pub struct RankedList {
    pub query_id: String,
    entries: Vec<RankedEntry>,
}

#[derive(Deserialize)]
struct RawRankedList {
    query_id: String,
    entries: Vec<RankedEntry>,
}

impl TryFrom<RawRankedList> for RankedList {
    type Error = ModelError;

    fn try_from(raw: RawRankedList) -> Result<Self, Self::Error> {
        let list = RankedList::new(
            raw.query_id,
            raw.entries.iter().map(|e| (e.doc_id.clone(), e.score)),
        )?;
        // Reject input that was not already in canonical order.
        for (i, (a, b)) in list.entries.iter().zip(&raw.entries).enumerate() {
            if a.doc_id != b.doc_id {
                return Err(ModelError::Unsorted(i));
            }
        }
        Ok(list)
    }
}

pub(crate) fn rank_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

impl RankedList {
    pub fn new<I, S>(query_id: impl Into<String>, scores: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (doc_id, score) in scores {
            let doc_id = doc_id.into();
            if !score.is_finite() {
                return Err(ModelError::NonFiniteScore(doc_id));
            }
            if !seen.insert(doc_id.clone()) {
                return Err(ModelError::DuplicateDocId(doc_id));
            }
            entries.push(RankedEntry { doc_id, score });
        }
        entries.sort_by(rank_order);
        Ok(Self {
            query_id: query_id.into(),
            entries,
        })
    }

    /// Builds from a map, which cannot hold duplicates. Panics on non-finite scores.
    pub fn from_map(query_id: impl Into<String>, scores: BTreeMap<String, f64>) -> Self {
        Self::new(query_id, scores).expect("finite scores")
    }

    pub fn empty(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn score_of(&self, doc_id: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.doc_id == doc_id)
            .map(|e| e.score)
    }

    /// 1-based rank of `doc_id`.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.doc_id == doc_id)
            .map(|p| p + 1)
    }

    pub fn truncated(&self, k: usize) -> RankedList {
        RankedList {
            query_id: self.query_id.clone(),
            entries: self.entries.iter().take(k).cloned().collect(),
        }
    }

    pub fn with_query_id(mut self, query_id: impl Into<String>) -> Self {
        self.query_id = query_id.into();
        self
    }

    /// Keeps entries for which `keep` returns true; order is unchanged.
    pub fn retain(&self, mut keep: impl FnMut(&RankedEntry) -> bool) -> RankedList {
        RankedList {
            query_id: self.query_id.clone(),
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    /// Rewrites scores and restores canonical order.
    pub fn map_scores(&self, mut f: impl FnMut(&RankedEntry) -> f64) -> RankedList {
        let mut entries: Vec<RankedEntry> = self
            .entries
            .iter()
            .map(|e| RankedEntry {
                doc_id: e.doc_id.clone(),
                score: f(e),
            })
            .collect();
        entries.sort_by(rank_order);
        RankedList {
            query_id: self.query_id.clone(),
            entries,
        }
    }
}

/// Metric summary over a query set, optionally split into strata.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub mrr: f64,
    pub map: f64,
    pub hits: BTreeMap<usize, f64>,
    pub n_queries: usize,
    pub n_failed: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub strata: BTreeMap<String, EvalReport>,
}

impl EvalReport {
    pub fn failure_rate(&self) -> f64 {
        if self.n_queries == 0 {
            0.0
        } else {
            self.n_failed as f64 / self.n_queries as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn screen(id: &str, n_leaves: usize) -> UIScreen {
        let children = (0..n_leaves)
            .map(|i| {
                UIHierarchyNode::leaf(
                    UIComponent::new("Button", Bounds::new(0, i as u32 * 10, 100, 10))
                        .with_label(format!("b{i}")),
                )
            })
            .collect();
        let root = UIHierarchyNode::with_children(
            UIComponent::new("LinearLayout", Bounds::new(0, 0, 100, 100)),
            children,
        );
        UIScreen::from_root(id, "MainActivity", root, ScreenSource::Trace)
    }

    fn record() -> BugRecord {
        BugRecord {
            bug_id: "b1".into(),
            app_id: "app".into(),
            title: "Crash".into(),
            body_sentences: vec![],
            obs: vec![OBDescription {
                ob_id: "ob1".into(),
                text: "The app crashes".into(),
                quality: 4,
                difficulty: Difficulty::Easy,
                position: 0,
            }],
            gt_screens: ["s1".to_string()].into(),
            gt_components: BTreeMap::from([("s1".to_string(), BTreeSet::from([0]))]),
            gt_files: BTreeSet::new(),
            bug_type: BugType::Crash,
        }
    }

    #[test]
    fn well_formed_record_has_no_violations() {
        assert!(validate_bug_record(&record(), &[screen("s1", 2)]).is_empty());
    }

    #[test]
    fn unknown_gt_screen_is_named() {
        let mut r = record();
        r.gt_screens = ["s9".to_string()].into();
        r.gt_components.clear();
        assert_eq!(
            validate_bug_record(&r, &[screen("s1", 2)]),
            vec!["gt_screens: unknown screen s9".to_string()]
        );
    }

    #[test]
    fn quality_out_of_range() {
        let mut r = record();
        r.obs[0].quality = 6;
        assert_eq!(
            validate_bug_record(&r, &[screen("s1", 2)]),
            vec!["obs[0].quality out of range".to_string()]
        );
    }

    #[test]
    fn component_outside_gt_screens_is_rejected() {
        let mut r = record();
        r.gt_components.insert("s2".into(), BTreeSet::from([5]));
        let v = validate_bug_record(&r, &[screen("s1", 2), screen("s2", 2)]);
        assert_eq!(
            v,
            vec![
                "gt_components: screen s2 not in gt_screens".to_string(),
                "gt_components[s2]: component index 5 out of range".to_string()
            ]
        );
    }

    #[test]
    fn ranked_list_breaks_ties_by_doc_id() {
        let list = RankedList::new("q", [("b", 0.5), ("a", 0.5), ("c", 0.9)]).unwrap();
        let ids: Vec<_> = list.doc_ids().collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn ranked_list_rejects_duplicates_and_nan() {
        assert_eq!(
            RankedList::new("q", [("a", 0.1), ("a", 0.2)]),
            Err(ModelError::DuplicateDocId("a".into()))
        );
        assert!(RankedList::new("q", [("a", f64::NAN)]).is_err());
    }

    #[test]
    fn ranked_list_json_rejects_unsorted_input() {
        let json =
            r#"{"query_id":"q","entries":[{"doc_id":"a","score":0.1},{"doc_id":"b","score":0.9}]}"#;
        assert!(serde_json::from_str::<RankedList>(json).is_err());
    }

    #[test]
    fn redaction_drops_ground_truth() {
        let r = record().redacted();
        assert!(r.gt_screens.is_empty() && r.gt_components.is_empty());
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["gt_screens"], serde_json::json!([]));
    }
}
