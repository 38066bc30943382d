mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use proptest::prelude::*;
use uiloc_core::codeloc::{
    combine_individual_obs, reformulate_query, rerank, run_pipeline, screen_rankings, CodeIndex,
    CodeLocConfig, CodeLocContext, CombineMode, ObStrategy, Reformulation, RerankMode,
};
use uiloc_core::eval::{aggregate, average_precision, hits_at_k, reciprocal_rank, spearman, Task};
use uiloc_core::ingest::{dedup_screens, load_project, structural_signature, ProjectLayout};
use uiloc_core::model::{BugRecord, Difficulty, OBDescription, RankedList, ScreenSource, UIScreen};
use uiloc_core::retrieval::{build_vsm_index, score_vsm, Scorer};

fn relevant_strategy() -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set("f[0-9]{1,2}", 1..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn vsm_matches_dense_reference((docs, query) in corpus_strategy()) {
        let index = build_vsm_index(&docs);
        let fast = score_vsm("q", &query, &index);
        let slow = dense_vsm(&docs, &query);
        prop_assert_eq!(fast.len(), slow.len());
        for (e, (id, s)) in fast.entries().iter().zip(&slow) {
            prop_assert_eq!(&e.doc_id, id);
            prop_assert!((e.score - s).abs() < 1e-12);
            prop_assert!(e.score > 0.0 && e.score <= 1.0);
        }
    }

    #[test]
    fn metrics_match_brute_force(r in ranked_strategy(30), rel in relevant_strategy()) {
        let order = ids(&r);
        prop_assert!((reciprocal_rank(&r, &rel) - brute_rr(&order, &rel)).abs() < 1e-12);
        let ap = average_precision(&r, &rel).unwrap();
        prop_assert!((ap - brute_ap(&order, &rel)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ap));
        let mut prev = false;
        for k in 1..=32 {
            let h = hits_at_k(&r, &rel, k);
            prop_assert!(h || !prev, "hits must be monotone in k");
            prev = h;
        }
    }

    #[test]
    fn aggregate_counts_failures(
        tasks in prop::collection::vec((ranked_strategy(15), relevant_strategy()), 1..20)
    ) {
        let ts: Vec<Task> = tasks.into_iter().map(|(r, rel)| Task::new(r, rel)).collect();
        let rep = aggregate(&ts, &[1, 5, 10]).unwrap();
        let failed = ts.iter().filter(|t| reciprocal_rank(&t.ranked, &t.relevant) == 0.0).count();
        prop_assert_eq!(rep.n_failed, failed);
        prop_assert_eq!(rep.n_queries, ts.len());
        prop_assert!(rep.hits[&1] <= rep.hits[&5] && rep.hits[&5] <= rep.hits[&10]);
        prop_assert!(rep.hits[&10] <= 1.0 - failed as f64 / ts.len() as f64 + 1e-12);
        prop_assert!(rep.mrr >= rep.hits[&1] - 1e-12);
    }

    #[test]
    fn spearman_matches_naive(
        pairs in prop::collection::vec((0u8..6, 0u8..6), 3..40)
    ) {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let reference = naive_spearman(&xs, &ys);
        match spearman(&xs, &ys) {
            Ok(rho) => prop_assert!((rho - reference).abs() < 1e-9),
            Err(_) => prop_assert!(reference.is_nan()),
        }
    }

    #[test]
    fn ranked_list_round_trips(r in ranked_strategy(20)) {
        let json = serde_json::to_string(&r).unwrap();
        let back: RankedList = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &r);
        for (i, e) in r.entries().iter().enumerate() {
            prop_assert_eq!(r.rank_of(&e.doc_id), Some(i + 1));
        }
    }

    #[test]
    fn filter_keeps_only_related_in_order(r in ranked_strategy(20), rel in relevant_strategy()) {
        let f = rerank(&r, &rel, RerankMode::Filter, 2.0);
        let kept: Vec<String> = ids(&r).into_iter().filter(|d| rel.contains(d)).collect();
        prop_assert_eq!(ids(&f), kept);
    }

    #[test]
    fn boost_keeps_documents_and_lifts_related(
        r in ranked_strategy(20), rel in relevant_strategy(), w in 1.01f64..5.0
    ) {
        prop_assert_eq!(rerank(&r, &rel, RerankMode::Boost, 1.0), r.clone());
        let b = rerank(&r, &rel, RerankMode::Boost, w);
        let before: BTreeSet<String> = ids(&r).into_iter().collect();
        let after: BTreeSet<String> = ids(&b).into_iter().collect();
        prop_assert_eq!(before, after);
        for d in rel.iter().filter(|d| r.score_of(d).is_some()) {
            prop_assert!(b.rank_of(d).unwrap() <= r.rank_of(d).unwrap());
        }
        let fb = rerank(&r, &rel, RerankMode::FilterBoost, w);
        prop_assert_eq!(&fb, &rerank(&rerank(&r, &rel, RerankMode::Filter, w), &rel, RerankMode::Boost, w));
        prop_assert_eq!(&fb, &rerank(&rerank(&r, &rel, RerankMode::Boost, w), &rel, RerankMode::Filter, w));
    }

    #[test]
    fn map_equals_mrr_for_singleton_truth(
        tasks in prop::collection::vec((ranked_strategy(15), "f[0-9]{1,2}"), 1..20)
    ) {
        let ts: Vec<Task> = tasks.into_iter().map(|(r, d)| Task::new(r, [d])).collect();
        let rep = aggregate(&ts, &[1]).unwrap();
        prop_assert!((rep.map - rep.mrr).abs() < 1e-12);
    }

    #[test]
    fn reformulation_shapes(text in "[a-z ]{0,30}", terms in prop::collection::btree_set("[a-z]{2,6}", 0..5)) {
        prop_assert_eq!(reformulate_query(&text, &terms, Reformulation::None), text.clone());
        let e = reformulate_query(&text, &terms, Reformulation::Expand);
        prop_assert!(e.starts_with(&text));
        let r = reformulate_query(&text, &terms, Reformulation::Replace);
        let got: BTreeSet<String> = r.split_whitespace().map(String::from).collect();
        prop_assert_eq!(got, terms);
    }

    #[test]
    fn combine_matches_reference(rs in prop::collection::vec(ranked_strategy(12), 1..6)) {
        let c = combine_individual_obs(&rs, CombineMode::ZeroFill).unwrap();
        let reference = combine_oracle(&rs);
        prop_assert_eq!(c.len(), reference.len());
        for (f, s) in reference {
            prop_assert!((c.score_of(&f).unwrap() - s).abs() < 1e-12);
        }
    }

    #[test]
    fn combining_copies_is_identity(r in ranked_strategy(12), n in 1usize..6) {
        let copies = vec![r.clone(); n];
        prop_assert_eq!(combine_individual_obs(&copies, CombineMode::ZeroFill).unwrap(), r.clone());
        prop_assert_eq!(combine_individual_obs(&copies, CombineMode::PresentOnly).unwrap(), r);
    }

    #[test]
    fn dedup_ignores_text_and_is_idempotent(
        trees in prop::collection::vec(tree_strategy(), 1..6), salt in "[a-z]{1,4}"
    ) {
        let mut screens = Vec::new();
        for (i, t) in trees.iter().enumerate() {
            screens.push(UIScreen::from_root(format!("c{i}"), "", rewrite_text(t, &salt), ScreenSource::Crawl));
            screens.push(UIScreen::from_root(format!("t{i}"), "", t.clone(), ScreenSource::Trace));
        }
        let once = dedup_screens(screens);
        prop_assert!(once.iter().all(|s| s.source == ScreenSource::Trace));
        let sigs: BTreeSet<String> = trees.iter().map(structural_signature).collect();
        prop_assert_eq!(once.len(), sigs.len());
        prop_assert_eq!(dedup_screens(once.clone()), once);
    }
}

fn single_ob_bug(text: &str) -> BugRecord {
    BugRecord {
        bug_id: "b".into(),
        app_id: "wifi".into(),
        title: "Problem".into(),
        body_sentences: vec![text.into()],
        obs: vec![OBDescription {
            ob_id: "b-ob1".into(),
            text: text.into(),
            quality: 2,
            difficulty: Difficulty::Easy,
            position: 0,
        }],
        gt_screens: BTreeSet::new(),
        gt_components: BTreeMap::new(),
        gt_files: BTreeSet::new(),
        bug_type: Default::default(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_ob_strategies_agree(
        words in prop::collection::vec(
            prop::sample::select(vec!["ssid", "filter", "export", "csv", "dark", "theme", "scan", "crash", "list", "text"]),
            1..6,
        ),
        rerank_mode in prop::sample::select(vec!["none", "filter", "boost", "filter_boost"]),
        k in 1usize..5,
    ) {
        let p = load_project(&ProjectLayout::new(fixture_dir())).unwrap();
        let index = CodeIndex::build(&p.code_files);
        let ctx = CodeLocContext { files: &p.code_files, index: &index, external: None };
        let screens = p.app_screens("wifi");
        let bug = single_ob_bug(&words.join(" "));
        let mut results = Vec::new();
        for strategy in ["concat_obs", "first_ob", "individual_obs"] {
            let cfg = CodeLocConfig::default()
                .patched(&serde_json::json!({"ob_strategy": strategy, "rerank": rerank_mode, "screens_k": k}))
                .unwrap();
            let sl = screen_rankings(&bug, &screens, &Scorer::Vsm, cfg.ob_strategy).unwrap();
            results.push(run_pipeline(&bug, &sl, &screens, &ctx, &cfg).unwrap().ranking);
        }
        prop_assert_eq!(&results[0], &results[1]);
        prop_assert_eq!(&results[0], &results[2]);
        let _ = ObStrategy::default();
    }
}
