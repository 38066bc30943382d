//! Screen (SL) and component (CL) localization experiments over a project.

use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{
    aggregate, quality_correlation, stratify, AnnotatedTask, CorrelationMode, EvalError,
    StratifyAxis, Task,
};
use crate::ingest::Project;
use crate::model::{BugRecord, EvalReport};
use crate::retrieval::{localize_components, localize_screens, ObQuery, RetrievalError, Scorer};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("unknown task {0:?} (expected SL or CL)")]
    UnknownTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocalizationTask {
    #[serde(rename = "SL", alias = "sl")]
    Screens,
    #[serde(rename = "CL", alias = "cl")]
    Components,
}

impl FromStr for LocalizationTask {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sl" | "screens" => Ok(LocalizationTask::Screens),
            "cl" | "components" => Ok(LocalizationTask::Components),
            _ => Err(ExperimentError::UnknownTask(s.to_string())),
        }
    }
}

/// Bugs usable for evaluation: valid records only.
pub fn eval_bugs(project: &Project) -> Vec<&BugRecord> {
    project
        .bugs
        .iter()
        .filter(|b| !project.violations.contains_key(&b.bug_id))
        .collect()
}

/// One SL task per OB of every bug with ground-truth screens.
pub fn screen_tasks(
    project: &Project,
    scorer: &Scorer,
) -> Result<Vec<AnnotatedTask>, ExperimentError> {
    let per_bug: Vec<Result<Vec<AnnotatedTask>, ExperimentError>> = eval_bugs(project)
        .par_iter()
        .filter(|b| !b.gt_screens.is_empty())
        .map(|bug| {
            let screens = project.app_screens(&bug.app_id);
            bug.obs
                .iter()
                .map(|ob| {
                    let ranked =
                        localize_screens(&ObQuery::new(&ob.ob_id, &ob.text), &screens, scorer)?;
                    Ok(AnnotatedTask {
                        task: Task::new(ranked, bug.gt_screens.iter().cloned()),
                        quality: ob.quality,
                        difficulty: ob.difficulty,
                    })
                })
                .collect()
        })
        .collect();
    Ok(per_bug.into_iter().collect::<Result<Vec<_>, _>>()?.concat())
}

/// One CL task per OB and ground-truth screen with annotated components.
pub fn component_tasks(
    project: &Project,
    scorer: &Scorer,
) -> Result<Vec<AnnotatedTask>, ExperimentError> {
    let per_bug: Vec<Result<Vec<AnnotatedTask>, ExperimentError>> = eval_bugs(project)
        .par_iter()
        .map(|bug| {
            let mut tasks = Vec::new();
            for (screen_id, comps) in &bug.gt_components {
                let Some(screen) = project.screen(&bug.app_id, screen_id) else {
                    continue;
                };
                if comps.is_empty() {
                    continue;
                }
                for ob in &bug.obs {
                    let ranked =
                        localize_components(&ObQuery::new(&ob.ob_id, &ob.text), screen, scorer)?;
                    tasks.push(AnnotatedTask {
                        task: Task::new(ranked, comps.iter().map(|i| i.to_string())),
                        quality: ob.quality,
                        difficulty: ob.difficulty,
                    });
                }
            }
            Ok(tasks)
        })
        .collect();
    Ok(per_bug.into_iter().collect::<Result<Vec<_>, _>>()?.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub report: EvalReport,
    /// Spearman correlation of OB quality with reciprocal rank, when defined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_correlation: Option<f64>,
}

pub fn evaluate(
    project: &Project,
    task: LocalizationTask,
    scorer: &Scorer,
    ks: &[usize],
    axis: Option<StratifyAxis>,
    correlation: CorrelationMode,
) -> Result<EvalOutcome, ExperimentError> {
    let tasks = match task {
        LocalizationTask::Screens => screen_tasks(project, scorer)?,
        LocalizationTask::Components => component_tasks(project, scorer)?,
    };
    let plain: Vec<Task> = tasks.iter().map(|t| t.task.clone()).collect();
    let mut report = aggregate(&plain, ks)?;
    if let Some(axis) = axis {
        report.strata = stratify(&tasks, axis, ks)?;
    }
    Ok(EvalOutcome {
        report,
        quality_correlation: quality_correlation(&tasks, correlation).ok(),
    })
}

/// Per-scorer reports keyed by scorer name.
pub fn compare_scorers(
    project: &Project,
    task: LocalizationTask,
    scorers: &[Scorer],
    ks: &[usize],
) -> Result<BTreeMap<String, EvalReport>, ExperimentError> {
    scorers
        .iter()
        .map(|s| {
            let o = evaluate(project, task, s, ks, None, CorrelationMode::default())?;
            Ok((s.name(), o.report))
        })
        .collect()
}
