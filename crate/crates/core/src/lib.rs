//! Localization of bug report observed behavior onto app screens, UI
//! components and code files.

pub mod codeloc;
pub mod eval;
pub mod experiment;
pub mod ingest;
pub mod model;
pub mod retrieval;
pub mod synthgen;
pub mod textdoc;

pub use ingest::{load_project, Project};
pub use model::{
    Bounds, BugRecord, EvalReport, OBDescription, RankedEntry, RankedList, UIComponent,
    UIHierarchyNode, UIScreen,
};
pub use retrieval::{ObQuery, Scorer, ScorerSpec};
