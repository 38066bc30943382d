//! Retrieval metrics over query sets: MRR, MAP, Hits@K, stratification,
//! Spearman correlation, and relative improvement.
//!
//! Failed retrievals (no relevant document ranked) count as zero in every
//! metric; they are never dropped from the denominator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Difficulty, EvalReport, RankedList};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("relevant set is empty for query {0:?}")]
    EmptyRelevantSet(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("k must be at least 1")]
    ZeroK,
}

pub fn reciprocal_rank(ranked: &RankedList, relevant: &BTreeSet<String>) -> f64 {
    ranked
        .doc_ids()
        .position(|d| relevant.contains(d))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

/// Mean of precision at the rank of each relevant document; relevant
/// documents missing from the ranking contribute zero.
pub fn average_precision(
    ranked: &RankedList,
    relevant: &BTreeSet<String>,
) -> Result<f64, EvalError> {
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevantSet(ranked.query_id.clone()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, doc) in ranked.doc_ids().enumerate() {
        if relevant.contains(doc) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

pub fn hits_at_k(ranked: &RankedList, relevant: &BTreeSet<String>, k: usize) -> bool {
    ranked.doc_ids().take(k).any(|d| relevant.contains(d))
}

/// One retrieval task: a ranking and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub ranked: RankedList,
    pub relevant: BTreeSet<String>,
}

impl Task {
    pub fn new(ranked: RankedList, relevant: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            ranked,
            relevant: relevant.into_iter().map(Into::into).collect(),
        }
    }
}

/// A task tagged with the annotations of the OB that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedTask {
    pub task: Task,
    pub quality: i64,
    pub difficulty: Difficulty,
}

pub fn aggregate(tasks: &[Task], ks: &[usize]) -> Result<EvalReport, EvalError> {
    if ks.contains(&0) {
        return Err(EvalError::ZeroK);
    }
    let ks: BTreeSet<usize> = ks.iter().copied().collect();
    let mut report = EvalReport {
        n_queries: tasks.len(),
        hits: ks.iter().map(|&k| (k, 0.0)).collect(),
        ..EvalReport::default()
    };
    if tasks.is_empty() {
        return Ok(report);
    }
    let (mut rr_sum, mut ap_sum) = (0.0, 0.0);
    let mut hit_counts: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for t in tasks {
        let rr = reciprocal_rank(&t.ranked, &t.relevant);
        if rr == 0.0 {
            report.n_failed += 1;
        }
        rr_sum += rr;
        ap_sum += average_precision(&t.ranked, &t.relevant)?;
        for (k, count) in hit_counts.iter_mut() {
            if hits_at_k(&t.ranked, &t.relevant, *k) {
                *count += 1;
            }
        }
    }
    let n = tasks.len() as f64;
    report.mrr = rr_sum / n;
    report.map = ap_sum / n;
    report.hits = hit_counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n))
        .collect();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyAxis {
    Quality,
    Difficulty,
}

impl std::str::FromStr for StratifyAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quality" => Ok(StratifyAxis::Quality),
            "difficulty" => Ok(StratifyAxis::Difficulty),
            _ => Err(format!("unknown stratification axis {s:?}")),
        }
    }
}

fn stratum_label(t: &AnnotatedTask, axis: StratifyAxis) -> String {
    match axis {
        StratifyAxis::Quality => t.quality.to_string(),
        StratifyAxis::Difficulty => t.difficulty.as_str().to_string(),
    }
}

/// Per-stratum reports; empty strata are absent.
pub fn stratify(
    tasks: &[AnnotatedTask],
    axis: StratifyAxis,
    ks: &[usize],
) -> Result<BTreeMap<String, EvalReport>, EvalError> {
    let mut groups: BTreeMap<String, Vec<Task>> = BTreeMap::new();
    for t in tasks {
        groups
            .entry(stratum_label(t, axis))
            .or_default()
            .push(t.task.clone());
    }
    groups
        .into_iter()
        .map(|(label, ts)| Ok((label, aggregate(&ts, ks)?)))
        .collect()
}

/// Fractional (average) ranks, 1-based.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman's rho: Pearson correlation of fractional ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::DegenerateInput(format!(
            "length mismatch {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(EvalError::DegenerateInput("fewer than 2 points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(EvalError::DegenerateInput("non-finite value".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(xs) || constant(ys) {
        return Err(EvalError::DegenerateInput("constant input".into()));
    }
    let rx = fractional_ranks(xs);
    let ry = fractional_ranks(ys);
    let rho = pearson(&rx, &ry);
    // Identical rank vectors are exactly +1/-1 even if rounding says otherwise.
    if rx == ry {
        return Ok(1.0);
    }
    let n = rx.len() as f64 + 1.0;
    if rx.iter().zip(&ry).all(|(a, b)| a + b == n) {
        return Ok(-1.0);
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMode {
    /// Quality level against the stratum mean reciprocal rank (at most 5 points).
    #[default]
    PerRating,
    /// Quality against each query's reciprocal rank.
    PerQuery,
}

impl std::str::FromStr for CorrelationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-rating" | "per_rating" => Ok(CorrelationMode::PerRating),
            "per-query" | "per_query" => Ok(CorrelationMode::PerQuery),
            _ => Err(format!("unknown correlation mode {s:?}")),
        }
    }
}

/// Spearman correlation between OB quality and retrieval effectiveness (RR).
pub fn quality_correlation(
    tasks: &[AnnotatedTask],
    mode: CorrelationMode,
) -> Result<f64, EvalError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = match mode {
        CorrelationMode::PerQuery => tasks
            .iter()
            .map(|t| {
                (
                    t.quality as f64,
                    reciprocal_rank(&t.task.ranked, &t.task.relevant),
                )
            })
            .unzip(),
        CorrelationMode::PerRating => {
            let mut by_q: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
            for t in tasks {
                let e = by_q.entry(t.quality).or_default();
                e.0 += reciprocal_rank(&t.task.ranked, &t.task.relevant);
                e.1 += 1;
            }
            by_q.into_iter()
                .map(|(q, (sum, n))| (q as f64, sum / n as f64))
                .unzip()
        }
    };
    spearman(&xs, &ys)
}

pub fn relative_improvement(baseline: f64, treated: f64) -> Result<f64, EvalError> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(EvalError::NonPositiveBaseline(baseline));
    }
    Ok((treated - baseline) / baseline)
}

/// Aligned text table: one row per report, columns MRR, MAP, H@k...
pub fn format_table(rows: &[(String, &EvalReport)]) -> String {
    let ks: BTreeSet<usize> = rows
        .iter()
        .flat_map(|(_, r)| r.hits.keys().copied())
        .collect();
    let label_w = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain(std::iter::once(5))
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$} {:>6} {:>6}", "", "MRR", "MAP");
    for k in &ks {
        let _ = write!(out, " {:>6}", format!("H@{k}"));
    }
    let _ = writeln!(out, " {:>6} {:>6}", "N", "Fail");
    for (label, r) in rows {
        let _ = write!(out, "{:<label_w$} {:>6.3} {:>6.3}", label, r.mrr, r.map);
        for k in &ks {
            match r.hits.get(k) {
                Some(h) => {
                    let _ = write!(out, " {:>6.3}", h);
                }
                None => {
                    let _ = write!(out, " {:>6}", "-");
                }
            }
        }
        let _ = writeln!(out, " {:>6} {:>6}", r.n_queries, r.n_failed);
    }
    out
}

/// Table for a report and its strata (if any).
pub fn report_table(name: &str, report: &EvalReport) -> String {
    let mut rows = vec![(name.to_string(), report)];
    for (label, sub) in &report.strata {
        rows.push((format!("  {label}"), sub));
    }
    format_table(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranked(ids: &[&str]) -> RankedList {
        let n = ids.len() as f64;
        RankedList::new("q", ids.iter().enumerate().map(|(i, d)| (*d, n - i as f64))).unwrap()
    }

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn reciprocal_rank_examples() {
        assert_eq!(
            reciprocal_rank(&ranked(&["A", "B", "C"]), &set(&["B"])),
            0.5
        );
        assert_eq!(reciprocal_rank(&RankedList::empty("q"), &set(&["B"])), 0.0);
        assert_eq!(reciprocal_rank(&ranked(&["B", "C"]), &set(&["B"])), 1.0);
    }

    #[test]
    fn average_precision_examples() {
        let ap = average_precision(&ranked(&["r1", "n", "r2"]), &set(&["r1", "r2"])).unwrap();
        assert!((ap - 0.5 * (1.0 + 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(
            average_precision(&ranked(&["a", "b", "c"]), &set(&["a", "b"])).unwrap(),
            1.0
        );
        assert_eq!(
            average_precision(&ranked(&["a", "b"]), &set(&["z"])).unwrap(),
            0.0
        );
        assert!(matches!(
            average_precision(&ranked(&["a"]), &BTreeSet::new()),
            Err(EvalError::EmptyRelevantSet(_))
        ));
    }

    #[test]
    fn hits_examples() {
        assert!(hits_at_k(&ranked(&["a", "b"]), &set(&["a"]), 1));
        assert!(!hits_at_k(&RankedList::empty("q"), &set(&["a"]), 3));
        let r = ranked(&["a", "b", "c", "d"]);
        assert!(!hits_at_k(&r, &set(&["d"]), 3));
        assert!(hits_at_k(&r, &set(&["d"]), 4));
    }

    #[test]
    fn aggregate_examples() {
        let tasks = vec![
            Task::new(ranked(&["a", "b"]), ["a"]),
            Task::new(ranked(&["x", "y", "z", "b"]), ["b"]),
        ];
        let r = aggregate(&tasks, &[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(r.mrr, 0.625);
        assert_eq!(r.hits[&1], 0.5);
        assert_eq!(r.hits[&4], 1.0);
        assert_eq!(r.n_failed, 0);

        let perfect = aggregate(&[Task::new(ranked(&["a"]), ["a"])], &[1, 3]).unwrap();
        assert_eq!((perfect.mrr, perfect.map), (1.0, 1.0));
        assert!(perfect.hits.values().all(|h| *h == 1.0));

        assert_eq!(aggregate(&tasks, &[0]), Err(EvalError::ZeroK));
    }

    #[test]
    fn stratify_omits_empty_strata() {
        let mk = |q: i64, d: Difficulty| AnnotatedTask {
            task: Task::new(ranked(&["a"]), ["a"]),
            quality: q,
            difficulty: d,
        };
        let tasks = vec![
            mk(2, Difficulty::Easy),
            mk(5, Difficulty::Easy),
            mk(5, Difficulty::Hard),
        ];
        let by_q = stratify(&tasks, StratifyAxis::Quality, &[1]).unwrap();
        assert_eq!(by_q.keys().collect::<Vec<_>>(), ["2", "5"]);
        assert_eq!(by_q["5"].n_queries, 2);
        let by_d = stratify(&tasks, StratifyAxis::Difficulty, &[1]).unwrap();
        assert_eq!(by_d.keys().collect::<Vec<_>>(), ["easy", "hard"]);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(),
            1.0
        );
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        let rho = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        // Reference value from scipy.stats.spearmanr.
        assert!((rho - 0.9486832980505139).abs() < 1e-12, "{rho}");
        assert!(matches!(
            spearman(&[1.0, 1.0], &[1.0, 2.0]),
            Err(EvalError::DegenerateInput(_))
        ));
        assert!(matches!(
            spearman(&[1.0], &[1.0]),
            Err(EvalError::DegenerateInput(_))
        ));
    }

    #[test]
    fn fractional_ranks_average_ties() {
        assert_eq!(
            fractional_ranks(&[1.0, 2.0, 2.0, 4.0]),
            [1.0, 2.5, 2.5, 4.0]
        );
    }

    #[test]
    fn relative_improvement_examples() {
        assert!((relative_improvement(0.5, 0.55).unwrap() - 0.10).abs() < 1e-12);
        assert!(
            (relative_improvement(0.79, 0.88).unwrap() - 0.113_924_050_632_911_4).abs() < 1e-12
        );
        assert_eq!(relative_improvement(0.3, 0.3).unwrap(), 0.0);
        assert!(relative_improvement(0.0, 0.3).is_err());
    }

    #[test]
    fn table_column_order() {
        let r = aggregate(&[Task::new(ranked(&["a"]), ["a"])], &[1, 2, 3, 4, 5]).unwrap();
        let t = report_table("vsm", &r);
        let header = t.lines().next().unwrap();
        let cols: Vec<_> = header.split_whitespace().collect();
        assert_eq!(
            cols,
            ["MRR", "MAP", "H@1", "H@2", "H@3", "H@4", "H@5", "N", "Fail"]
        );
    }
}
