//! Scoring of OB queries against screen and component corpora.
//!
//! Two engines sit behind [`Scorer`]: a TF-IDF vector space model over
//! preprocessed terms, and cosine similarity over precomputed embeddings.
//! The VSM omits documents sharing no term with the query, so an empty
//! ranking is a legitimate failed retrieval. The embedding engine always
//! ranks every document.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{RankedList, UIScreen};
use crate::textdoc::{component_document, preprocess, screen_document};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("line {line}: expected dimension {expected}, found {found}")]
    DimMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("zero vector for {0:?}")]
    ZeroVector(String),
    #[error("query has dimension {query}, store has {store}")]
    QueryDim { query: usize, store: usize },
    #[error("missing embedding for {0:?}")]
    MissingEmbedding(String),
    #[error("screen {0:?} has no leaf components")]
    EmptyScreen(String),
    #[error("unknown scorer {0:?} (expected vsm or embedding:<name>)")]
    UnknownScorer(String),
    #[error("scorer unavailable: {0}")]
    Unavailable(String),
}

/// Sparse TF-IDF index. Weights are raw term frequency times
/// `1 + ln(N / (df + 1))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VsmIndex {
    pub vocabulary: BTreeMap<String, usize>,
    pub doc_freq: Vec<usize>,
    pub doc_vectors: BTreeMap<String, BTreeMap<usize, f64>>,
    pub n_docs: usize,
    pub doc_norms: BTreeMap<String, f64>,
    #[serde(skip)]
    postings: Vec<Vec<(String, f64)>>,
}

impl VsmIndex {
    pub fn idf(&self, term_id: usize) -> f64 {
        idf(self.n_docs, self.doc_freq[term_id])
    }

    pub fn term_id(&self, term: &str) -> Option<usize> {
        self.vocabulary.get(term).copied()
    }

    /// Query weights in index space; out-of-vocabulary terms are dropped.
    pub fn query_vector(&self, tokens: &[String]) -> BTreeMap<usize, f64> {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(id) = self.term_id(t) {
                *tf.entry(id).or_default() += 1.0;
            }
        }
        tf.into_iter()
            .map(|(id, count)| (id, count * self.idf(id)))
            .collect()
    }
}

pub fn idf(n_docs: usize, df: usize) -> f64 {
    1.0 + (n_docs as f64 / (df as f64 + 1.0)).ln()
}

fn norm(weights: impl Iterator<Item = f64>) -> f64 {
    weights.map(|w| w * w).sum::<f64>().sqrt()
}

pub fn build_vsm_index(docs: &BTreeMap<String, Vec<String>>) -> VsmIndex {
    let mut vocabulary = BTreeMap::new();
    let mut doc_freq: Vec<usize> = Vec::new();
    let mut counts: BTreeMap<&str, BTreeMap<usize, f64>> = BTreeMap::new();

    for (doc_id, tokens) in docs {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokens {
            let next = vocabulary.len();
            let id = *vocabulary.entry(t.clone()).or_insert(next);
            if id == doc_freq.len() {
                doc_freq.push(0);
            }
            *tf.entry(id).or_default() += 1.0;
        }
        for id in tf.keys() {
            doc_freq[*id] += 1;
        }
        counts.insert(doc_id, tf);
    }

    let n_docs = docs.len();
    let mut doc_vectors = BTreeMap::new();
    let mut doc_norms = BTreeMap::new();
    let mut postings = vec![Vec::new(); vocabulary.len()];
    for (doc_id, tf) in counts {
        let weighted: BTreeMap<usize, f64> = tf
            .into_iter()
            .map(|(id, c)| (id, c * idf(n_docs, doc_freq[id])))
            .collect();
        for (id, w) in &weighted {
            postings[*id].push((doc_id.to_string(), *w));
        }
        doc_norms.insert(doc_id.to_string(), norm(weighted.values().copied()));
        doc_vectors.insert(doc_id.to_string(), weighted);
    }

    VsmIndex {
        vocabulary,
        doc_freq,
        doc_vectors,
        n_docs,
        doc_norms,
        postings,
    }
}

/// Cosine similarity between the query and every document sharing at least
/// one term with it.
pub fn score_vsm(query_id: &str, query_tokens: &[String], index: &VsmIndex) -> RankedList {
    let q = index.query_vector(query_tokens);
    let q_norm = norm(q.values().copied());
    if q_norm == 0.0 {
        return RankedList::empty(query_id);
    }
    let mut dots: HashMap<&str, f64> = HashMap::new();
    let postings_ready = index.postings.len() == index.vocabulary.len();
    for (&term, &qw) in &q {
        if postings_ready {
            for (doc, dw) in &index.postings[term] {
                *dots.entry(doc.as_str()).or_default() += qw * dw;
            }
        } else {
            for (doc, vec) in &index.doc_vectors {
                if let Some(dw) = vec.get(&term) {
                    *dots.entry(doc.as_str()).or_default() += qw * dw;
                }
            }
        }
    }
    let scores = dots.into_iter().map(|(doc, dot)| {
        let score = (dot / (q_norm * index.doc_norms[doc])).min(1.0);
        (doc.to_string(), score)
    });
    RankedList::new(query_id, scores).expect("finite cosine scores")
}

/// Precomputed document vectors of one dimensionality.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct EmbeddingLine {
    id: String,
    vector: Vec<f64>,
}

impl EmbeddingStore {
    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Parses JSON-lines `{"id": ..., "vector": [...]}`. Blank lines are skipped.
    pub fn from_reader(reader: impl BufRead) -> Result<Self, RetrievalError> {
        let mut store = EmbeddingStore::default();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| RetrievalError::ParseError {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingLine =
                serde_json::from_str(&line).map_err(|e| RetrievalError::ParseError {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if rec.vector.iter().any(|v| !v.is_finite()) {
                return Err(RetrievalError::ParseError {
                    line: line_no,
                    message: "non-finite vector entry".into(),
                });
            }
            if store.vectors.is_empty() {
                store.dim = rec.vector.len();
            } else if rec.vector.len() != store.dim {
                return Err(RetrievalError::DimMismatch {
                    line: line_no,
                    expected: store.dim,
                    found: rec.vector.len(),
                });
            }
            if store.vectors.contains_key(&rec.id) {
                return Err(RetrievalError::DuplicateId {
                    line: line_no,
                    id: rec.id,
                });
            }
            store.vectors.insert(rec.id, rec.vector);
        }
        Ok(store)
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingStore, RetrievalError> {
    let file = std::fs::File::open(path).map_err(|e| RetrievalError::Io(path.to_path_buf(), e))?;
    EmbeddingStore::from_reader(BufReader::new(file))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (norm(a.iter().copied()) * norm(b.iter().copied()))).clamp(-1.0, 1.0)
}

/// Ranks every stored vector by cosine similarity to `query`.
pub fn score_embedding(
    query_id: &str,
    query: &[f64],
    store: &EmbeddingStore,
) -> Result<RankedList, RetrievalError> {
    score_embedding_subset(
        query_id,
        query,
        store,
        store.vectors.keys().map(String::as_str),
    )
}

fn score_embedding_subset<'a>(
    query_id: &str,
    query: &[f64],
    store: &EmbeddingStore,
    ids: impl Iterator<Item = &'a str>,
) -> Result<RankedList, RetrievalError> {
    if !store.is_empty() && query.len() != store.dim {
        return Err(RetrievalError::QueryDim {
            query: query.len(),
            store: store.dim,
        });
    }
    if norm(query.iter().copied()) == 0.0 {
        return Err(RetrievalError::ZeroVector(query_id.to_string()));
    }
    let mut scores = Vec::new();
    for id in ids {
        let v = store
            .get(id)
            .ok_or_else(|| RetrievalError::MissingEmbedding(id.to_string()))?;
        if norm(v.iter().copied()) == 0.0 {
            return Err(RetrievalError::ZeroVector(id.to_string()));
        }
        scores.push((id.to_string(), cosine(query, v)));
    }
    Ok(RankedList::new(query_id, scores).expect("finite cosine scores"))
}

/// A query as seen by the scorers: raw OB text plus an optional stable id
/// used to look up precomputed query vectors.
#[derive(Debug, Clone, Copy)]
pub struct ObQuery<'a> {
    pub id: Option<&'a str>,
    pub text: &'a str,
}

impl<'a> ObQuery<'a> {
    pub fn new(id: &'a str, text: &'a str) -> Self {
        Self { id: Some(id), text }
    }

    pub fn text(text: &'a str) -> Self {
        Self { id: None, text }
    }

    fn label(&self) -> &str {
        self.id.unwrap_or("")
    }
}

/// Turns a query into a vector in the same space as the document stores.
pub trait QueryEncoder: Send + Sync {
    fn encode(&self, query: &ObQuery<'_>) -> Result<Vec<f64>, RetrievalError>;
}

/// Looks query vectors up by id in a precomputed store.
pub struct StoreEncoder(pub EmbeddingStore);

impl QueryEncoder for StoreEncoder {
    fn encode(&self, query: &ObQuery<'_>) -> Result<Vec<f64>, RetrievalError> {
        let id = query.id.ok_or_else(|| {
            RetrievalError::Unavailable("no precomputed vector for free-text queries".into())
        })?;
        self.0
            .get(id)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| RetrievalError::MissingEmbedding(id.to_string()))
    }
}

/// Tries each encoder in turn, falling through on missing vectors.
pub struct ChainEncoder(pub Vec<Box<dyn QueryEncoder>>);

impl QueryEncoder for ChainEncoder {
    fn encode(&self, query: &ObQuery<'_>) -> Result<Vec<f64>, RetrievalError> {
        let mut last = RetrievalError::Unavailable("no query encoder configured".into());
        for enc in &self.0 {
            match enc.encode(query) {
                Ok(v) => return Ok(v),
                Err(e @ (RetrievalError::MissingEmbedding(_) | RetrievalError::Unavailable(_))) => {
                    last = e
                }
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }
}

/// An embedding-backed scorer: document stores for screens and components
/// plus a query encoder.
pub struct EmbeddingScorer {
    pub name: String,
    pub screens: EmbeddingStore,
    pub components: EmbeddingStore,
    pub queries: Box<dyn QueryEncoder>,
}

impl fmt::Debug for EmbeddingScorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingScorer")
            .field("name", &self.name)
            .field("screens", &self.screens.len())
            .field("components", &self.components.len())
            .finish()
    }
}

impl EmbeddingScorer {
    /// Loads `<dir>/screens.jsonl`, `components.jsonl`, and `queries.jsonl`.
    /// Missing files yield empty stores.
    pub fn load(name: &str, dir: &Path) -> Result<Self, RetrievalError> {
        if !dir.is_dir() {
            return Err(RetrievalError::Unavailable(format!(
                "no embeddings directory {}",
                dir.display()
            )));
        }
        let load = |file: &str| {
            let p = dir.join(file);
            if p.exists() {
                load_embeddings(&p)
            } else {
                Ok(EmbeddingStore::default())
            }
        };
        Ok(Self {
            name: name.to_string(),
            screens: load("screens.jsonl")?,
            components: load("components.jsonl")?,
            queries: Box::new(StoreEncoder(load("queries.jsonl")?)),
        })
    }

    pub fn with_encoder(mut self, encoder: Box<dyn QueryEncoder>) -> Self {
        self.queries = encoder;
        self
    }
}

#[derive(Debug)]
pub enum Scorer {
    Vsm,
    Embedding(EmbeddingScorer),
}

impl Scorer {
    pub fn name(&self) -> String {
        match self {
            Scorer::Vsm => "vsm".into(),
            Scorer::Embedding(e) => format!("embedding:{}", e.name),
        }
    }
}

/// Textual scorer selector: `vsm` or `embedding:<name>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScorerSpec {
    #[default]
    Vsm,
    Embedding(String),
}

impl FromStr for ScorerSpec {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "vsm" => Ok(ScorerSpec::Vsm),
            Some(("embedding", name)) if !name.is_empty() && !name.contains(['/', '\\']) => {
                Ok(ScorerSpec::Embedding(name.to_string()))
            }
            _ => Err(RetrievalError::UnknownScorer(s.to_string())),
        }
    }
}

impl TryFrom<String> for ScorerSpec {
    type Error = RetrievalError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<ScorerSpec> for String {
    fn from(s: ScorerSpec) -> Self {
        s.to_string()
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerSpec::Vsm => f.write_str("vsm"),
            ScorerSpec::Embedding(name) => write!(f, "embedding:{name}"),
        }
    }
}

impl ScorerSpec {
    /// Resolves against `<embeddings_dir>/<name>/`.
    pub fn resolve(&self, embeddings_dir: &Path) -> Result<Scorer, RetrievalError> {
        match self {
            ScorerSpec::Vsm => Ok(Scorer::Vsm),
            ScorerSpec::Embedding(name) => Ok(Scorer::Embedding(EmbeddingScorer::load(
                name,
                &embeddings_dir.join(name),
            )?)),
        }
    }
}

/// Id under which a component's embedding is stored.
pub fn component_embedding_id(screen_id: &str, index: usize) -> String {
    format!("{screen_id}#{index}")
}

/// Ranks the app's screens for one OB. Doc ids are screen ids.
pub fn localize_screens(
    query: &ObQuery<'_>,
    app_screens: &[UIScreen],
    scorer: &Scorer,
) -> Result<RankedList, RetrievalError> {
    match scorer {
        Scorer::Vsm => {
            let docs: BTreeMap<String, Vec<String>> = app_screens
                .iter()
                .map(|s| (s.screen_id.clone(), preprocess(&screen_document(s))))
                .collect();
            let index = build_vsm_index(&docs);
            Ok(score_vsm(query.label(), &preprocess(query.text), &index))
        }
        Scorer::Embedding(e) => {
            let q = e.queries.encode(query)?;
            score_embedding_subset(
                query.label(),
                &q,
                &e.screens,
                app_screens.iter().map(|s| s.screen_id.as_str()),
            )
        }
    }
}

/// Ranks the leaf components of one screen. Doc ids are component indices.
pub fn localize_components(
    query: &ObQuery<'_>,
    screen: &UIScreen,
    scorer: &Scorer,
) -> Result<RankedList, RetrievalError> {
    if screen.leaf_components.is_empty() {
        return Err(RetrievalError::EmptyScreen(screen.screen_id.clone()));
    }
    match scorer {
        Scorer::Vsm => {
            let docs: BTreeMap<String, Vec<String>> = screen
                .leaf_components
                .iter()
                .enumerate()
                .map(|(i, c)| (i.to_string(), preprocess(&component_document(c))))
                .collect();
            let index = build_vsm_index(&docs);
            Ok(score_vsm(query.label(), &preprocess(query.text), &index))
        }
        Scorer::Embedding(e) => {
            let q = e.queries.encode(query)?;
            let ids: Vec<String> = (0..screen.leaf_components.len())
                .map(|i| component_embedding_id(&screen.screen_id, i))
                .collect();
            let ranked = score_embedding_subset(
                query.label(),
                &q,
                &e.components,
                ids.iter().map(String::as_str),
            )?;
            let prefix = format!("{}#", screen.screen_id);
            let renamed: Vec<(String, f64)> = ranked
                .entries()
                .iter()
                .map(|en| (en.doc_id[prefix.len()..].to_string(), en.score))
                .collect();
            Ok(RankedList::new(ranked.query_id.clone(), renamed).expect("unique ids"))
        }
    }
}

/// Distinct preprocessed terms of a text; handy for overlap diagnostics.
pub fn term_set(text: &str) -> BTreeSet<String> {
    preprocess(text).into_iter().collect()
}
