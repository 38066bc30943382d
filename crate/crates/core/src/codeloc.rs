//! UI-augmented buggy code localization.
//!
//! Screens localized for a bug report are turned into UI terms; the terms
//! select UI-related code files by name and can reformulate the report query.
//! The code ranking is then filtered and/or boosted toward UI-related files.
//! Reports with several OBs are handled by one of three strategies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{aggregate, relative_improvement, EvalError, Task};
use crate::ingest::Project;
use crate::model::{BugRecord, RankedList, UIScreen};
use crate::retrieval::{
    build_vsm_index, localize_screens, score_vsm, ObQuery, RetrievalError, Scorer, ScorerSpec,
    VsmIndex,
};
use crate::textdoc::{preprocess, split_identifiers, stem};

#[derive(Debug, Error)]
pub enum CodeLocError {
    #[error("cannot combine an empty set of rankings")]
    EmptyInput,
    #[error("external scores unavailable for query {0:?}")]
    ExternalScoresUnavailable(String),
    #[error("no screen ranking supplied for {0:?}")]
    MissingScreenRanking(String),
    #[error("bug {0:?} has no OB descriptions")]
    NoObs(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("external score file line {line}: {message}")]
    ExternalScoresFormat { line: usize, message: String },
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A source file of the app under analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeFile {
    pub path: String,
    pub name_tokens: Vec<String>,
    pub content_tokens: Vec<String>,
}

impl CodeFile {
    pub fn new(path: impl Into<String>, content: &str) -> Self {
        let path = path.into();
        Self {
            name_tokens: tokenize_filename(&path),
            content_tokens: preprocess(content),
            path,
        }
    }
}

const GENERIC_SUFFIXES: &[&str] = &["activity", "fragment", "view", "impl"];

/// Identifier pieces with generic Android suffix tokens dropped, unless
/// nothing else would remain.
fn identifier_tokens(name: &str) -> Vec<String> {
    let tokens = split_identifiers(name);
    let specific: Vec<String> = tokens
        .iter()
        .filter(|t| !GENERIC_SUFFIXES.contains(&t.as_str()))
        .cloned()
        .collect();
    if specific.is_empty() {
        tokens
    } else {
        specific
    }
}

/// `"src/WifiListFragment.java"` -> `["wifi", "list"]`.
pub fn tokenize_filename(path: &str) -> Vec<String> {
    let file = path.rsplit(['/', '\\']).next().unwrap_or(path);
    let stem = match file.rsplit_once('.') {
        Some((s, _)) if !s.is_empty() => s,
        _ => file,
    };
    identifier_tokens(stem)
}

/// Tokens of a (possibly package-qualified) activity or window name.
pub fn activity_tokens(activity: &str) -> Vec<String> {
    let simple = activity.rsplit(['.', '/', '$']).next().unwrap_or(activity);
    identifier_tokens(simple)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum UiSource {
    /// Screen-level terms (activity/window names).
    #[serde(rename = "GS")]
    Gs,
    /// Component-level terms (ids, labels, types).
    #[serde(rename = "SC")]
    Sc,
    #[default]
    #[serde(rename = "GS_SC")]
    GsSc,
}

pub fn extract_ui_terms(screens: &[&UIScreen], source: UiSource) -> BTreeSet<String> {
    let mut terms = BTreeSet::new();
    for s in screens {
        if matches!(source, UiSource::Gs | UiSource::GsSc) {
            terms.extend(activity_tokens(&s.activity_name));
        }
        if matches!(source, UiSource::Sc | UiSource::GsSc) {
            for c in &s.leaf_components {
                let text = format!("{} {} {}", c.component_id, c.label, c.comp_type);
                terms.extend(preprocess(&text));
            }
        }
    }
    terms
}

/// Files whose name tokens overlap the UI terms. Both sides are compared in
/// stemmed form, since component terms come out of the stemming pipeline.
pub fn ui_related_files(terms: &BTreeSet<String>, files: &[CodeFile]) -> BTreeSet<String> {
    if terms.is_empty() {
        return BTreeSet::new();
    }
    let stemmed: BTreeSet<String> = terms.iter().map(|t| stem(t)).collect();
    files
        .iter()
        .filter(|f| {
            f.name_tokens
                .iter()
                .any(|t| terms.contains(t) || stemmed.contains(&stem(t)))
        })
        .map(|f| f.path.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reformulation {
    #[default]
    None,
    Expand,
    Replace,
}

pub fn reformulate_query(bug_text: &str, terms: &BTreeSet<String>, mode: Reformulation) -> String {
    let joined = terms
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(" ");
    match mode {
        Reformulation::None => bug_text.to_string(),
        Reformulation::Expand if joined.is_empty() => bug_text.to_string(),
        Reformulation::Expand => format!("{bug_text} {joined}"),
        Reformulation::Replace => joined,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankMode {
    #[default]
    None,
    Filter,
    Boost,
    FilterBoost,
}

impl RerankMode {
    fn boosts(self) -> bool {
        matches!(self, RerankMode::Boost | RerankMode::FilterBoost)
    }

    fn filters(self) -> bool {
        matches!(self, RerankMode::Filter | RerankMode::FilterBoost)
    }
}

/// Filtering drops files outside `related`; boosting multiplies the scores of
/// related files by `boost_weight` and re-sorts.
pub fn rerank(
    ranked: &RankedList,
    related: &BTreeSet<String>,
    mode: RerankMode,
    boost_weight: f64,
) -> RankedList {
    let mut out = ranked.clone();
    if mode.filters() {
        out = out.retain(|e| related.contains(&e.doc_id));
    }
    if mode.boosts() {
        out = out.map_scores(|e| {
            if related.contains(&e.doc_id) {
                e.score * boost_weight
            } else {
                e.score
            }
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObStrategy {
    #[default]
    ConcatObs,
    FirstOb,
    IndividualObs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Localizer {
    #[default]
    Vsm,
    ExternalScores,
}

/// How a file missing from some per-OB rankings is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// Absent files contribute 0 to the average over all rankings.
    #[default]
    ZeroFill,
    /// Average only over rankings that contain the file.
    PresentOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeLocConfig {
    #[serde(default)]
    pub ob_strategy: ObStrategy,
    /// Defaults to 4 for the VSM localizer and 3 for external scores.
    #[serde(default)]
    pub screens_k: Option<usize>,
    #[serde(default)]
    pub ui_source: UiSource,
    #[serde(default)]
    pub reformulation: Reformulation,
    #[serde(default)]
    pub rerank: RerankMode,
    #[serde(default = "default_boost")]
    pub boost_weight: f64,
    #[serde(default)]
    pub localizer: Localizer,
    #[serde(default)]
    pub combine: CombineMode,
    /// Screen localizer used to pick the screens.
    #[serde(default)]
    pub sl_scorer: ScorerSpec,
    /// External score table, relative to the project root.
    #[serde(default)]
    pub external_scores: Option<String>,
}

fn default_boost() -> f64 {
    2.0
}

impl Default for CodeLocConfig {
    fn default() -> Self {
        Self {
            ob_strategy: ObStrategy::default(),
            screens_k: None,
            ui_source: UiSource::default(),
            reformulation: Reformulation::default(),
            rerank: RerankMode::default(),
            boost_weight: default_boost(),
            localizer: Localizer::default(),
            combine: CombineMode::default(),
            sl_scorer: ScorerSpec::default(),
            external_scores: None,
        }
    }
}

pub const DEFAULT_EXTERNAL_SCORES: &str = "external_scores.jsonl";

impl CodeLocConfig {
    pub fn effective_screens_k(&self) -> usize {
        self.screens_k.unwrap_or(match self.localizer {
            Localizer::Vsm => 4,
            Localizer::ExternalScores => 3,
        })
    }

    pub fn validate(&self) -> Result<(), CodeLocError> {
        if self.effective_screens_k() == 0 {
            return Err(CodeLocError::InvalidConfig("screens_k must be >= 1".into()));
        }
        if !self.boost_weight.is_finite() || self.boost_weight <= 0.0 {
            return Err(CodeLocError::InvalidConfig(
                "boost_weight must be positive".into(),
            ));
        }
        if self.rerank.boosts() && self.boost_weight <= 1.0 {
            return Err(CodeLocError::InvalidConfig(
                "boost_weight must be > 1 when boosting".into(),
            ));
        }
        Ok(())
    }

    /// The same localizer with no UI augmentation.
    pub fn baseline(&self) -> CodeLocConfig {
        CodeLocConfig {
            reformulation: Reformulation::None,
            rerank: RerankMode::None,
            ..self.clone()
        }
    }

    /// Applies a JSON object of field overrides.
    pub fn patched(&self, patch: &serde_json::Value) -> Result<CodeLocConfig, CodeLocError> {
        let mut base = serde_json::to_value(self).expect("config serializes");
        let (Some(obj), Some(p)) = (base.as_object_mut(), patch.as_object()) else {
            return Err(CodeLocError::InvalidConfig(
                "patch must be a JSON object".into(),
            ));
        };
        for (k, v) in p {
            obj.insert(k.clone(), v.clone());
        }
        serde_json::from_value(base).map_err(|e| CodeLocError::InvalidConfig(e.to_string()))
    }

    /// Short human-readable description for tables.
    pub fn label(&self) -> String {
        format!(
            "{}/k{}/{}/{}/{}",
            tag(&self.ob_strategy),
            self.effective_screens_k(),
            tag(&self.ui_source),
            tag(&self.reformulation),
            tag(&self.rerank),
        )
    }
}

fn tag<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => "?".into(),
    }
}

/// Precomputed per-query code file scores from an external localizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExternalScores {
    pub rankings: BTreeMap<String, RankedList>,
}

#[derive(Deserialize)]
struct ExternalLine {
    query_id: String,
    path: String,
    score: f64,
}

impl ExternalScores {
    /// JSON-lines `{"query_id", "path", "score"}`.
    pub fn from_reader(reader: impl BufRead) -> Result<Self, CodeLocError> {
        let mut by_query: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let fmt_err = |message: String| CodeLocError::ExternalScoresFormat {
                line: line_no,
                message,
            };
            let line = line.map_err(|e| fmt_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExternalLine =
                serde_json::from_str(&line).map_err(|e| fmt_err(e.to_string()))?;
            if !rec.score.is_finite() {
                return Err(fmt_err("non-finite score".into()));
            }
            if by_query
                .entry(rec.query_id.clone())
                .or_default()
                .insert(rec.path.clone(), rec.score)
                .is_some()
            {
                return Err(fmt_err(format!(
                    "duplicate path {:?} for query {:?}",
                    rec.path, rec.query_id
                )));
            }
        }
        Ok(Self {
            rankings: by_query
                .into_iter()
                .map(|(q, scores)| (q.clone(), RankedList::from_map(q, scores)))
                .collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CodeLocError> {
        let f = std::fs::File::open(path).map_err(|e| CodeLocError::Io(path.to_path_buf(), e))?;
        Self::from_reader(BufReader::new(f))
    }

    pub fn get(&self, query_id: &str) -> Result<&RankedList, CodeLocError> {
        self.rankings
            .get(query_id)
            .ok_or_else(|| CodeLocError::ExternalScoresUnavailable(query_id.to_string()))
    }
}

/// Key of an external ranking: `bug`, `bug#mode`, or `bug#ob#mode` for
/// per-OB runs with a reformulated query.
pub fn external_query_id(bug_id: &str, ob_id: Option<&str>, mode: Reformulation) -> String {
    match (mode, ob_id) {
        (Reformulation::None, _) => bug_id.to_string(),
        (Reformulation::Expand, None) => format!("{bug_id}#expand"),
        (Reformulation::Replace, None) => format!("{bug_id}#replace"),
        (Reformulation::Expand, Some(ob)) => format!("{bug_id}#{ob}#expand"),
        (Reformulation::Replace, Some(ob)) => format!("{bug_id}#{ob}#replace"),
    }
}

/// VSM over code file contents.
#[derive(Debug, Clone)]
pub struct CodeIndex {
    index: VsmIndex,
}

impl CodeIndex {
    pub fn build(files: &[CodeFile]) -> Self {
        let docs = files
            .iter()
            .map(|f| (f.path.clone(), f.content_tokens.clone()))
            .collect();
        Self {
            index: build_vsm_index(&docs),
        }
    }

    pub fn search(&self, query_id: &str, query: &str) -> RankedList {
        score_vsm(query_id, &preprocess(query), &self.index)
    }
}

/// Averages per-OB rankings into one. Scores are accumulated as a running
/// mean, so identical inputs reproduce their scores exactly.
pub fn combine_individual_obs(
    rankings: &[RankedList],
    mode: CombineMode,
) -> Result<RankedList, CodeLocError> {
    let first = rankings.first().ok_or(CodeLocError::EmptyInput)?;
    let files: BTreeSet<&str> = rankings.iter().flat_map(|r| r.doc_ids()).collect();
    let lookup: Vec<HashMap<&str, f64>> = rankings
        .iter()
        .map(|r| {
            r.entries()
                .iter()
                .map(|e| (e.doc_id.as_str(), e.score))
                .collect()
        })
        .collect();
    let mut combined = BTreeMap::new();
    for f in files {
        let mut mean = 0.0;
        let mut n = 0usize;
        for scores in &lookup {
            let x = match (scores.get(f), mode) {
                (Some(s), _) => *s,
                (None, CombineMode::ZeroFill) => 0.0,
                (None, CombineMode::PresentOnly) => continue,
            };
            n += 1;
            mean += (x - mean) / n as f64;
        }
        combined.insert(f.to_string(), mean);
    }
    Ok(RankedList::from_map(first.query_id.clone(), combined))
}

/// Key under which the concatenated-OB screen ranking is supplied.
pub const CONCAT_KEY: &str = "#concat";

/// The screen-localization queries a strategy needs: `(key, query id, text)`.
pub fn screen_queries(
    bug: &BugRecord,
    strategy: ObStrategy,
) -> Result<Vec<(String, String, String)>, CodeLocError> {
    if bug.obs.is_empty() {
        return Err(CodeLocError::NoObs(bug.bug_id.clone()));
    }
    Ok(match strategy {
        ObStrategy::ConcatObs => {
            let text = bug
                .obs
                .iter()
                .map(|o| o.text.trim())
                .collect::<Vec<_>>()
                .join(" ");
            vec![(
                CONCAT_KEY.to_string(),
                format!("{}{CONCAT_KEY}", bug.bug_id),
                text,
            )]
        }
        ObStrategy::FirstOb => {
            let ob = bug.first_ob().expect("non-empty");
            vec![(ob.ob_id.clone(), ob.ob_id.clone(), ob.text.clone())]
        }
        ObStrategy::IndividualObs => bug
            .obs
            .iter()
            .map(|o| (o.ob_id.clone(), o.ob_id.clone(), o.text.clone()))
            .collect(),
    })
}

/// Runs screen localization for every query the strategy needs.
pub fn screen_rankings(
    bug: &BugRecord,
    app_screens: &[UIScreen],
    scorer: &Scorer,
    strategy: ObStrategy,
) -> Result<BTreeMap<String, RankedList>, CodeLocError> {
    screen_queries(bug, strategy)?
        .into_iter()
        .map(|(key, id, text)| {
            let r = localize_screens(&ObQuery::new(&id, &text), app_screens, scorer)?;
            Ok((key, r))
        })
        .collect()
}

/// What one localization run used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub ob_id: Option<String>,
    pub screens: Vec<String>,
    pub terms: BTreeSet<String>,
    pub related_files: BTreeSet<String>,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub ranking: RankedList,
    pub runs: Vec<RunProvenance>,
    pub warnings: Vec<String>,
}

/// Inputs shared by every run over one project.
pub struct CodeLocContext<'a> {
    pub files: &'a [CodeFile],
    pub index: &'a CodeIndex,
    pub external: Option<&'a ExternalScores>,
}

pub fn run_pipeline(
    bug: &BugRecord,
    screens_ranked: &BTreeMap<String, RankedList>,
    app_screens: &[UIScreen],
    ctx: &CodeLocContext<'_>,
    cfg: &CodeLocConfig,
) -> Result<PipelineResult, CodeLocError> {
    cfg.validate()?;
    let k = cfg.effective_screens_k();
    let report = bug.report_text();
    let by_id: HashMap<&str, &UIScreen> = app_screens
        .iter()
        .map(|s| (s.screen_id.as_str(), s))
        .collect();
    let mut warnings = Vec::new();
    let mut runs = Vec::new();
    let mut rankings = Vec::new();

    for (key, _, _) in screen_queries(bug, cfg.ob_strategy)? {
        let sl = screens_ranked
            .get(&key)
            .ok_or_else(|| CodeLocError::MissingScreenRanking(key.clone()))?;
        let top: Vec<&UIScreen> = sl
            .doc_ids()
            .take(k)
            .filter_map(|id| by_id.get(id).copied())
            .collect();
        if top.len() < k {
            warnings.push(format!(
                "InsufficientScreens: {key}: using {} of {k} requested screens",
                top.len()
            ));
        }
        let terms = extract_ui_terms(&top, cfg.ui_source);
        let related = ui_related_files(&terms, ctx.files);
        let query = reformulate_query(&report, &terms, cfg.reformulation);
        let ob_id = (cfg.ob_strategy == ObStrategy::IndividualObs).then(|| key.clone());
        let base = match cfg.localizer {
            Localizer::Vsm => ctx.index.search(&bug.bug_id, &query),
            Localizer::ExternalScores => {
                let table = ctx
                    .external
                    .ok_or_else(|| CodeLocError::ExternalScoresUnavailable(bug.bug_id.clone()))?;
                let qid = external_query_id(&bug.bug_id, ob_id.as_deref(), cfg.reformulation);
                table.get(&qid)?.clone().with_query_id(bug.bug_id.clone())
            }
        };
        rankings.push(rerank(&base, &related, cfg.rerank, cfg.boost_weight));
        runs.push(RunProvenance {
            ob_id,
            screens: top.iter().map(|s| s.screen_id.clone()).collect(),
            terms,
            related_files: related,
            query,
        });
    }

    let ranking = if cfg.ob_strategy == ObStrategy::IndividualObs {
        combine_individual_obs(&rankings, cfg.combine)?
    } else {
        rankings.pop().ok_or(CodeLocError::EmptyInput)?
    };
    Ok(PipelineResult {
        ranking,
        runs,
        warnings,
    })
}

/// Code localizer without UI information.
pub fn baseline_ranking(
    bug: &BugRecord,
    ctx: &CodeLocContext<'_>,
    localizer: Localizer,
) -> Result<RankedList, CodeLocError> {
    match localizer {
        Localizer::Vsm => Ok(ctx.index.search(&bug.bug_id, &bug.report_text())),
        Localizer::ExternalScores => {
            let table = ctx
                .external
                .ok_or_else(|| CodeLocError::ExternalScoresUnavailable(bug.bug_id.clone()))?;
            Ok(table.get(&bug.bug_id)?.clone())
        }
    }
}

/// Loads the external score table a config points at, if it uses one.
pub fn load_external_for(
    project_root: &Path,
    cfg: &CodeLocConfig,
) -> Result<Option<ExternalScores>, CodeLocError> {
    if cfg.localizer != Localizer::ExternalScores {
        return Ok(None);
    }
    let rel = cfg
        .external_scores
        .as_deref()
        .unwrap_or(DEFAULT_EXTERNAL_SCORES);
    let path = project_root.join(rel);
    if !path.is_file() {
        return Err(CodeLocError::ExternalScoresUnavailable(
            path.display().to_string(),
        ));
    }
    ExternalScores::load(&path).map(Some)
}

/// One row of a configuration sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub config: CodeLocConfig,
    pub h5: f64,
    pub h10: f64,
    pub baseline_h5: f64,
    pub baseline_h10: f64,
    /// Relative H@10 improvement over the baseline; absent when the baseline is 0.
    pub ri_h10: Option<f64>,
    pub bugs_top10: usize,
    pub n_bugs: usize,
    pub warnings: usize,
}

/// Evaluates each configuration on every bug with ground-truth files.
/// Configurations run in parallel; rows come back sorted by H@10 descending
/// (ties keep grid order).
pub fn sweep(project: &Project, configs: &[CodeLocConfig]) -> Result<Vec<SweepRow>, CodeLocError> {
    let index = CodeIndex::build(&project.code_files);
    let bugs: Vec<&BugRecord> = project
        .bugs
        .iter()
        .filter(|b| !b.gt_files.is_empty() && !b.obs.is_empty())
        .collect();

    let mut scorers: HashMap<ScorerSpec, Scorer> = HashMap::new();
    let mut externals: HashMap<Option<String>, ExternalScores> = HashMap::new();
    for cfg in configs {
        cfg.validate()?;
        if !scorers.contains_key(&cfg.sl_scorer) {
            let s = cfg.sl_scorer.resolve(&project.layout.embeddings_dir())?;
            scorers.insert(cfg.sl_scorer.clone(), s);
        }
        if cfg.localizer == Localizer::ExternalScores
            && !externals.contains_key(&cfg.external_scores)
        {
            let table = load_external_for(&project.layout.root_dir, cfg)?.expect("external");
            externals.insert(cfg.external_scores.clone(), table);
        }
    }

    let rows: Vec<Result<SweepRow, CodeLocError>> = configs
        .par_iter()
        .map(|cfg| {
            let ctx = CodeLocContext {
                files: &project.code_files,
                index: &index,
                external: externals.get(&cfg.external_scores),
            };
            let scorer = &scorers[&cfg.sl_scorer];
            let mut treated = Vec::new();
            let mut baseline = Vec::new();
            let mut warnings = 0;
            for bug in &bugs {
                let screens = project.app_screens(&bug.app_id);
                let sl = screen_rankings(bug, &screens, scorer, cfg.ob_strategy)?;
                let out = run_pipeline(bug, &sl, &screens, &ctx, cfg)?;
                warnings += out.warnings.len();
                treated.push(Task::new(out.ranking, bug.gt_files.iter().cloned()));
                baseline.push(Task::new(
                    baseline_ranking(bug, &ctx, cfg.localizer)?,
                    bug.gt_files.iter().cloned(),
                ));
            }
            let t = aggregate(&treated, &[5, 10])?;
            let b = aggregate(&baseline, &[5, 10])?;
            Ok(SweepRow {
                label: cfg.label(),
                config: cfg.clone(),
                h5: t.hits[&5],
                h10: t.hits[&10],
                baseline_h5: b.hits[&5],
                baseline_h10: b.hits[&10],
                ri_h10: relative_improvement(b.hits[&10], t.hits[&10]).ok(),
                bugs_top10: (t.hits[&10] * bugs.len() as f64).round() as usize,
                n_bugs: bugs.len(),
                warnings,
            })
        })
        .collect();
    let mut rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| b.h10.total_cmp(&a.h10));
    Ok(rows)
}

/// Renders rows as a table, preceded by one baseline row per localizer.
pub fn format_sweep_table(rows: &[SweepRow]) -> String {
    use std::fmt::Write as _;
    let mut baselines: Vec<(String, f64, f64, usize)> = Vec::new();
    for r in rows {
        let label = format!("baseline/{}", tag(&r.config.localizer));
        if !baselines.iter().any(|b| b.0 == label) {
            let top10 = (r.baseline_h10 * r.n_bugs as f64).round() as usize;
            baselines.push((label, r.baseline_h5, r.baseline_h10, top10));
        }
    }
    let w = rows
        .iter()
        .map(|r| r.label.len())
        .chain(baselines.iter().map(|b| b.0.len()))
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = format!(
        "{:<w$} {:>6} {:>6} {:>8} {:>7}\n",
        "config", "H@5", "H@10", "RI@10", "#Top10"
    );
    for (label, h5, h10, top10) in &baselines {
        let _ = writeln!(
            out,
            "{label:<w$} {h5:>6.2} {h10:>6.2} {:>8} {top10:>7}",
            "-"
        );
    }
    for r in rows {
        let ri = r
            .ri_h10
            .map_or_else(|| "-".to_string(), |v| format!("{:.2}%", v * 100.0));
        let _ = writeln!(
            out,
            "{:<w$} {:>6.2} {:>6.2} {:>8} {:>7}",
            r.label, r.h5, r.h10, ri, r.bugs_top10
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bounds, ScreenSource, UIComponent, UIHierarchyNode};

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn screen(activity: &str, comps: Vec<UIComponent>) -> UIScreen {
        let root = UIHierarchyNode::with_children(
            UIComponent::new("LinearLayout", Bounds::new(0, 0, 100, 100)),
            comps.into_iter().map(UIHierarchyNode::leaf).collect(),
        );
        UIScreen::from_root("s1", activity, root, ScreenSource::Trace)
    }

    #[test]
    fn filename_tokens() {
        assert_eq!(
            tokenize_filename("src/WifiListFragment.java"),
            ["wifi", "list"]
        );
        assert_eq!(tokenize_filename("Settings.java"), ["settings"]);
        assert_eq!(tokenize_filename("a.java"), ["a"]);
        assert_eq!(tokenize_filename("ui/MainActivity.kt"), ["main"]);
        assert_eq!(tokenize_filename("Activity.java"), ["activity"]);
    }

    #[test]
    fn ui_terms() {
        let s = screen(
            "com.ex.WifiListActivity",
            vec![UIComponent::new("EditText", Bounds::new(0, 0, 5, 5)).with_id("ssid_filter")],
        );
        assert_eq!(
            extract_ui_terms(&[&s], UiSource::Gs),
            set(&["wifi", "list"])
        );
        assert_eq!(
            extract_ui_terms(&[&s], UiSource::Sc),
            set(&["ssid", "filter", "edit", "text"])
        );
        assert_eq!(extract_ui_terms(&[&s], UiSource::GsSc).len(), 6);
        assert!(extract_ui_terms(&[], UiSource::GsSc).is_empty());
    }

    #[test]
    fn related_files() {
        let files = vec![
            CodeFile::new("src/WifiListFragment.java", ""),
            CodeFile::new("src/Settings.java", ""),
        ];
        assert_eq!(
            ui_related_files(&set(&["wifi", "list"]), &files),
            set(&["src/WifiListFragment.java"])
        );
        assert!(ui_related_files(&BTreeSet::new(), &files).is_empty());
        assert_eq!(
            ui_related_files(&set(&["wifi", "settings"]), &files).len(),
            2
        );
        // stemmed component term still matches the unstemmed file name
        assert_eq!(
            ui_related_files(&set(&["set"]), &files),
            set(&["src/Settings.java"])
        );
    }

    #[test]
    fn reformulation_modes() {
        let t = set(&["wifi"]);
        assert_eq!(
            reformulate_query("app crashes", &t, Reformulation::Expand),
            "app crashes wifi"
        );
        assert_eq!(
            reformulate_query("app crashes", &t, Reformulation::Replace),
            "wifi"
        );
        assert_eq!(
            reformulate_query("app crashes", &t, Reformulation::None),
            "app crashes"
        );
        assert_eq!(
            reformulate_query("app crashes", &BTreeSet::new(), Reformulation::Expand),
            "app crashes"
        );
        assert_eq!(
            reformulate_query("x", &set(&["b", "a"]), Reformulation::Replace),
            "a b"
        );
    }

    fn sample() -> RankedList {
        RankedList::new("q", [("f1", 0.5), ("f2", 0.4), ("f3", 0.1)]).unwrap()
    }

    #[test]
    fn rerank_examples() {
        let related = set(&["f2"]);
        let f = rerank(&sample(), &related, RerankMode::Filter, 2.0);
        assert_eq!(f, RankedList::new("q", [("f2", 0.4)]).unwrap());
        let b = rerank(&sample(), &related, RerankMode::Boost, 2.0);
        assert_eq!(
            b,
            RankedList::new("q", [("f2", 0.8), ("f1", 0.5), ("f3", 0.1)]).unwrap()
        );
        let fb = rerank(&sample(), &related, RerankMode::FilterBoost, 2.0);
        assert_eq!(fb, RankedList::new("q", [("f2", 0.8)]).unwrap());
        assert_eq!(rerank(&sample(), &related, RerankMode::None, 2.0), sample());
        assert!(rerank(&sample(), &BTreeSet::new(), RerankMode::Filter, 2.0).is_empty());
        assert_eq!(
            rerank(&sample(), &BTreeSet::new(), RerankMode::Boost, 2.0),
            sample()
        );
    }

    #[test]
    fn combine_examples() {
        let r1 = RankedList::new("q", [("fA", 0.8), ("fB", 0.4)]).unwrap();
        let r2 = RankedList::new("q", [("fA", 0.2)]).unwrap();
        let c = combine_individual_obs(&[r1.clone(), r2.clone()], CombineMode::ZeroFill).unwrap();
        assert_eq!(c.doc_ids().collect::<Vec<_>>(), ["fA", "fB"]);
        assert!((c.score_of("fA").unwrap() - 0.5).abs() < 1e-15);
        assert!((c.score_of("fB").unwrap() - 0.2).abs() < 1e-15);

        assert_eq!(
            combine_individual_obs(std::slice::from_ref(&r1), CombineMode::ZeroFill).unwrap(),
            r1
        );
        assert_eq!(
            combine_individual_obs(&[r1.clone(), r1.clone()], CombineMode::ZeroFill).unwrap(),
            r1
        );
        let p = combine_individual_obs(&[r1, r2], CombineMode::PresentOnly).unwrap();
        assert!((p.score_of("fB").unwrap() - 0.4).abs() < 1e-15);
        assert!(matches!(
            combine_individual_obs(&[], CombineMode::ZeroFill),
            Err(CodeLocError::EmptyInput)
        ));
    }

    #[test]
    fn config_json_defaults_and_patches() {
        let cfg: CodeLocConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, CodeLocConfig::default());
        assert_eq!(cfg.effective_screens_k(), 4);
        let ext = cfg
            .patched(&serde_json::json!({"localizer": "external_scores", "ui_source": "SC"}))
            .unwrap();
        assert_eq!(ext.effective_screens_k(), 3);
        assert_eq!(ext.ui_source, UiSource::Sc);
        assert!(cfg.patched(&serde_json::json!({"bogus": 1})).is_err());
        assert_eq!(cfg.label(), "concat_obs/k4/GS_SC/none/none");

        let bad = CodeLocConfig {
            rerank: RerankMode::Boost,
            boost_weight: 1.0,
            ..CodeLocConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn external_table() {
        let raw = r#"{"query_id":"b1","path":"A.java","score":0.2}
{"query_id":"b1","path":"B.java","score":0.9}
{"query_id":"b1#expand","path":"A.java","score":0.5}"#;
        let t = ExternalScores::from_reader(raw.as_bytes()).unwrap();
        assert_eq!(
            t.get("b1").unwrap().doc_ids().collect::<Vec<_>>(),
            ["B.java", "A.java"]
        );
        assert!(matches!(
            t.get("b2"),
            Err(CodeLocError::ExternalScoresUnavailable(_))
        ));
        assert_eq!(
            external_query_id("b1", None, Reformulation::Expand),
            "b1#expand"
        );
        assert_eq!(
            external_query_id("b1", Some("o2"), Reformulation::Replace),
            "b1#o2#replace"
        );
        assert_eq!(
            external_query_id("b1", Some("o2"), Reformulation::None),
            "b1"
        );
    }
}
