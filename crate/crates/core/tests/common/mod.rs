//! Reference implementations and generators shared by the integration tests
//! and the acceptance runner. Deliberately naive.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use proptest::prelude::*;
use uiloc_core::model::{Bounds, RankedList, UIComponent, UIHierarchyNode};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wifi-app")
}

/// Dense TF-IDF cosine: builds the full term-document matrix.
pub fn dense_vsm(docs: &BTreeMap<String, Vec<String>>, query: &[String]) -> Vec<(String, f64)> {
    let vocab: Vec<String> = docs
        .values()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = docs.len() as f64;
    let df: Vec<f64> = vocab
        .iter()
        .map(|t| docs.values().filter(|d| d.contains(t)).count() as f64)
        .collect();
    let weights = |tokens: &[String]| -> Vec<f64> {
        vocab
            .iter()
            .zip(&df)
            .map(|(t, df)| {
                let tf = tokens.iter().filter(|x| *x == t).count() as f64;
                tf * (1.0 + (n / (df + 1.0)).ln())
            })
            .collect()
    };
    let q = weights(query);
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut out = Vec::new();
    if qn == 0.0 {
        return out;
    }
    for (id, d) in docs {
        let v = weights(d);
        let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
        if dot > 0.0 {
            let dn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            out.push((id.clone(), (dot / (qn * dn)).min(1.0)));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

pub fn brute_rr(ranking: &[String], relevant: &BTreeSet<String>) -> f64 {
    for (i, d) in ranking.iter().enumerate() {
        if relevant.contains(d) {
            return 1.0 / (i as f64 + 1.0);
        }
    }
    0.0
}

pub fn brute_ap(ranking: &[String], relevant: &BTreeSet<String>) -> f64 {
    let mut total = 0.0;
    for (i, d) in ranking.iter().enumerate() {
        if relevant.contains(d) {
            let top = &ranking[..=i];
            let hits = top.iter().filter(|x| relevant.contains(*x)).count();
            total += hits as f64 / (i as f64 + 1.0);
        }
    }
    total / relevant.len() as f64
}

/// Average ranks by counting, O(n^2).
pub fn naive_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let less = xs.iter().filter(|y| *y < x).count() as f64;
            let equal = xs.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn naive_spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (naive_ranks(xs), naive_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

/// Zero-fill average of per-OB scores.
pub fn combine_oracle(rankings: &[RankedList]) -> BTreeMap<String, f64> {
    let mut all: BTreeSet<String> = BTreeSet::new();
    for r in rankings {
        all.extend(r.doc_ids().map(String::from));
    }
    all.into_iter()
        .map(|f| {
            let sum: f64 = rankings.iter().map(|r| r.score_of(&f).unwrap_or(0.0)).sum();
            (f, sum / rankings.len() as f64)
        })
        .collect()
}

pub fn ids(r: &RankedList) -> Vec<String> {
    r.doc_ids().map(String::from).collect()
}

pub const TYPES: &[&str] = &[
    "Button",
    "TextView",
    "EditText",
    "ImageView",
    "CheckBox",
    "LinearLayout",
    "FrameLayout",
    "ListView",
    "WebView",
];

fn component_strategy() -> impl Strategy<Value = UIComponent> {
    (
        prop::sample::select(TYPES),
        0u32..1000,
        0u32..1000,
        1u32..500,
        1u32..500,
        "[a-z_]{0,6}",
        "[A-Za-z ]{0,8}",
        "[A-Za-z]{0,6}",
        any::<bool>(),
    )
        .prop_map(|(t, x, y, w, h, id, label, desc, click)| {
            UIComponent::new(t, Bounds::new(x, y, w, h))
                .with_id(id)
                .with_label(label)
                .with_description(desc)
                .with_clickable(click)
        })
}

pub fn tree_strategy() -> impl Strategy<Value = UIHierarchyNode> {
    let leaf = component_strategy().prop_map(UIHierarchyNode::leaf);
    leaf.prop_recursive(4, 40, 5, |inner| {
        (component_strategy(), prop::collection::vec(inner, 1..5))
            .prop_map(|(c, kids)| UIHierarchyNode::with_children(c, kids))
    })
}

/// Same structure, every text field replaced.
pub fn rewrite_text(node: &UIHierarchyNode, salt: &str) -> UIHierarchyNode {
    let mut c = node.component.clone();
    c.label = format!("{}{salt}", c.label);
    c.description = format!("{salt}{}", c.description);
    c.component_id = format!("{}_{salt}", c.component_id);
    UIHierarchyNode::with_children(
        c,
        node.children
            .iter()
            .map(|k| rewrite_text(k, salt))
            .collect(),
    )
}

pub fn ranked_strategy(max_docs: usize) -> impl Strategy<Value = RankedList> {
    prop::collection::btree_map("f[0-9]{1,2}", 0.0f64..1.0, 0..max_docs)
        .prop_map(|m| RankedList::from_map("q", m))
}

/// Token bags over a small vocabulary, so overlap is common.
pub fn corpus_strategy() -> impl Strategy<Value = (BTreeMap<String, Vec<String>>, Vec<String>)> {
    let token = prop::sample::select(vec![
        "wifi", "filter", "ssid", "scan", "button", "text", "edit", "list", "export", "save",
        "theme", "dark",
    ])
    .prop_map(String::from);
    let doc = prop::collection::vec(token.clone(), 0..12);
    (
        prop::collection::btree_map("d[0-9]{1,2}", doc, 1..12),
        prop::collection::vec(token, 0..8),
    )
}

pub mod synth {
    use std::collections::BTreeMap;

    use uiloc_core::model::{Bounds, ScreenSource, UIComponent, UIHierarchyNode, UIScreen};
    use uiloc_core::retrieval::{localize_components, ObQuery, Scorer};
    use uiloc_core::synthgen::{
        builtin_templates, component_phrase, fill, generate_dataset, GenOptions, ObTemplate,
        PhraseParts, SlotValues, SynthOutput,
    };
    use uiloc_core::Project;

    fn frame() -> Bounds {
        Bounds::new(0, 0, 1080, 1920)
    }

    fn screen(activity: &str, children: Vec<UIHierarchyNode>) -> UIScreen {
        let root =
            UIHierarchyNode::with_children(UIComponent::new("LinearLayout", frame()), children);
        UIScreen::from_root("s", activity, root, ScreenSource::Trace)
    }

    fn template(id: &str) -> ObTemplate {
        builtin_templates()
            .into_iter()
            .find(|t| t.template_id == id)
            .unwrap()
    }

    fn choices(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn typed(c: &UIComponent) -> String {
        let parts = PhraseParts {
            with_type: true,
            with_location: false,
        };
        component_phrase(c, frame(), parts).unwrap()
    }

    /// `(produced, expected)` for each catalog exemplar.
    pub fn exemplars() -> Vec<(String, &'static str)> {
        let more = UIComponent::new("ImageButton", Bounds::new(960, 60, 100, 100))
            .with_description("More options");
        let invite = UIComponent::new("TextView", Bounds::new(0, 400, 1080, 100))
            .with_label("Invite your friends");
        let economy =
            UIComponent::new("Button", Bounds::new(0, 800, 540, 100)).with_label("ECONOMY");
        let with_component = |c: &UIComponent| SlotValues {
            component: Some(typed(c)),
            ..SlotValues::default()
        };
        let list = screen(
            "com.cars.SearchActivity",
            vec![UIHierarchyNode::with_children(
                UIComponent::new("ListView", Bounds::new(0, 200, 1080, 1500))
                    .with_id("com.cars:id/view_items"),
                vec![
                    UIHierarchyNode::leaf(
                        UIComponent::new("TextView", Bounds::new(0, 200, 1080, 100))
                            .with_label("new cars"),
                    ),
                    UIHierarchyNode::leaf(
                        UIComponent::new("TextView", Bounds::new(0, 300, 1080, 100))
                            .with_label("used cars"),
                    ),
                ],
            )],
        );
        let settings = screen("com.app.AppSettingsActivity", vec![]);
        let wiki = screen("org.wiki.HomeWikiActivity", vec![]);

        let run = |id: &str, slots: &SlotValues, picks: &[(&str, &str)]| {
            fill(&template(id), slots, &choices(picks)).unwrap()
        };
        vec![
            (
                run(
                    "C1",
                    &with_component(&more),
                    &[
                        ("size", ""),
                        ("match the expected size", "match the expected size"),
                    ],
                ),
                "The More options button does not match the expected size",
            ),
            (
                run("C2", &with_component(&invite), &[("Wrong", "Incomplete")]),
                "Incomplete text in Invite your friends textview",
            ),
            (
                run(
                    "C3",
                    &with_component(&economy),
                    &[
                        ("shows", "shows"),
                        ("incorrect", "incorrect"),
                        ("color", "text color when clicked"),
                    ],
                ),
                "ECONOMY button shows incorrect text color when clicked",
            ),
            (
                run(
                    "S1",
                    &SlotValues::for_screen(&list),
                    &[("filtering", "filtering")],
                ),
                "After filtering the view items list, the order of new cars did not change",
            ),
            (
                run(
                    "S2",
                    &SlotValues::for_screen(&settings),
                    &[
                        ("Changes", "Changes"),
                        ("settings", ""),
                        ("will not apply immediately", "will not apply immediately"),
                    ],
                ),
                "Changes in the app settings will not apply immediately",
            ),
            (
                run(
                    "S3",
                    &SlotValues::for_screen(&wiki),
                    &[("zoom on", "pinch on")],
                ),
                "I cannot pinch on the home wiki screen",
            ),
        ]
    }

    pub fn generate(project: &Project, seed: u64) -> SynthOutput {
        generate_dataset(
            &project.screens,
            &builtin_templates(),
            seed,
            &GenOptions::default(),
        )
        .unwrap()
    }

    /// Component OBs whose source component ranks in the top `k` under VSM
    /// component localization: `(hits, total)`.
    pub fn round_trip(project: &Project, out: &SynthOutput, k: usize) -> (usize, usize) {
        let mut hits = 0;
        let mut total = 0;
        for ob in &out.obs {
            let Some(idx) = ob.component_index else {
                continue;
            };
            let screen = project.screen(&ob.app_id, &ob.screen_id).unwrap();
            let r = localize_components(&ObQuery::new(&ob.ob_id, &ob.text), screen, &Scorer::Vsm)
                .unwrap();
            total += 1;
            if r.rank_of(&idx.to_string()).is_some_and(|rank| rank <= k) {
                hits += 1;
            }
        }
        (hits, total)
    }
}
