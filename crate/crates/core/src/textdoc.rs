//! Textual documents for screens and components, and the term pipeline used
//! by the VSM scorer. Embedding scorers never see preprocessed text.

use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

use crate::model::{UIComponent, UIScreen};

/// Built-in English stop list, version 1. Kept sorted for binary search.
pub const STOP_WORDS: &[&str] = &[
    "a",
    "about",
    "above",
    "after",
    "again",
    "against",
    "ain",
    "all",
    "am",
    "an",
    "and",
    "any",
    "are",
    "aren",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "below",
    "between",
    "both",
    "but",
    "by",
    "can",
    "couldn",
    "d",
    "did",
    "didn",
    "do",
    "does",
    "doesn",
    "doing",
    "don",
    "down",
    "during",
    "each",
    "few",
    "for",
    "from",
    "further",
    "had",
    "hadn",
    "has",
    "hasn",
    "have",
    "haven",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "isn",
    "it",
    "its",
    "itself",
    "just",
    "ll",
    "m",
    "ma",
    "me",
    "mightn",
    "more",
    "most",
    "mustn",
    "my",
    "myself",
    "needn",
    "no",
    "nor",
    "not",
    "now",
    "o",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "ourselves",
    "out",
    "over",
    "own",
    "re",
    "s",
    "same",
    "shan",
    "she",
    "should",
    "shouldn",
    "so",
    "some",
    "such",
    "t",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "ve",
    "very",
    "was",
    "wasn",
    "we",
    "were",
    "weren",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "won",
    "wouldn",
    "y",
    "you",
    "your",
    "yours",
    "yourself",
    "yourselves",
];

pub fn is_stop_word(word: &str) -> bool {
    STOP_WORDS.binary_search(&word).is_ok()
}

/// `id label type`, skipping empty fields.
pub fn component_document(c: &UIComponent) -> String {
    [&c.component_id, &c.label, &c.comp_type]
        .into_iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn screen_document(s: &UIScreen) -> String {
    s.leaf_components
        .iter()
        .map(component_document)
        .filter(|d| !d.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Copy, PartialEq)]
enum CharClass {
    Upper,
    Lower,
    Digit,
}

fn class_of(c: char) -> CharClass {
    if c.is_numeric() {
        CharClass::Digit
    } else if c.is_uppercase() {
        CharClass::Upper
    } else {
        CharClass::Lower
    }
}

/// Splits an alphanumeric run at camelCase, acronym, and letter/digit
/// boundaries: `"parseHTTPResponse2"` -> `["parse", "HTTP", "Response", "2"]`.
fn split_camel(word: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = word.char_indices().collect();
    let mut parts = Vec::new();
    let mut start = 0;
    for i in 1..chars.len() {
        let prev = class_of(chars[i - 1].1);
        let cur = class_of(chars[i].1);
        let next = chars.get(i + 1).map(|&(_, c)| class_of(c));
        let boundary = match (prev, cur) {
            (CharClass::Lower, CharClass::Upper) => true,
            (CharClass::Upper, CharClass::Upper) => next == Some(CharClass::Lower),
            (CharClass::Digit, CharClass::Digit) => false,
            (CharClass::Digit, _) | (_, CharClass::Digit) => true,
            _ => false,
        };
        if boundary {
            parts.push(&word[start..chars[i].0]);
            start = chars[i].0;
        }
    }
    if start < word.len() {
        parts.push(&word[start..]);
    }
    parts
}

/// Splits identifiers and prose into lowercase word pieces (non-alphanumerics,
/// snake_case, camelCase, digits). No filtering or stemming.
pub fn split_identifiers(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .flat_map(split_camel)
        .map(str::to_lowercase)
        .collect()
}

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Porter-family stem, iterated to a fixed point so that stemming a stem is a no-op.
pub fn stem(token: &str) -> String {
    let mut current = token.to_string();
    for _ in 0..8 {
        let next = stemmer().stem(&current).into_owned();
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn keep(token: &str) -> bool {
    token.chars().count() > 1 && !is_stop_word(token)
}

/// Term pipeline for the VSM path: split, lowercase, stop-word and
/// single-character removal, stemming. Deterministic.
pub fn preprocess(text: &str) -> Vec<String> {
    split_identifiers(text)
        .into_iter()
        .filter(|t| keep(t))
        .map(|t| stem(&t))
        .filter(|t| keep(t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bounds, ScreenSource, UIHierarchyNode};
    use proptest::prelude::*;

    fn comp(id: &str, label: &str, t: &str) -> UIComponent {
        UIComponent::new(t, Bounds::new(0, 0, 10, 10))
            .with_id(id)
            .with_label(label)
    }

    #[test]
    fn stop_list_is_sorted_and_sized() {
        assert!(STOP_WORDS.windows(2).all(|w| w[0] < w[1]));
        assert!((150..=190).contains(&STOP_WORDS.len()));
    }

    #[test]
    fn component_documents() {
        assert_eq!(
            component_document(&comp("ssid_filter", "SSID Filter", "EditText")),
            "ssid_filter SSID Filter EditText"
        );
        assert_eq!(component_document(&comp("", "", "Button")), "Button");
        assert_eq!(
            component_document(&comp("btn_ok", "", "Button")),
            "btn_ok Button"
        );
    }

    fn screen_of(comps: Vec<UIComponent>) -> UIScreen {
        let root = UIHierarchyNode::with_children(
            UIComponent::new("LinearLayout", Bounds::new(0, 0, 100, 100)),
            comps.into_iter().map(UIHierarchyNode::leaf).collect(),
        );
        UIScreen::from_root("s", "", root, ScreenSource::Crawl)
    }

    #[test]
    fn screen_documents() {
        let s = screen_of(vec![
            comp("ssid_filter", "SSID Filter", "EditText"),
            comp("", "", "Button"),
            comp("btn_ok", "", "Button"),
        ]);
        assert_eq!(
            screen_document(&s),
            "ssid_filter SSID Filter EditText Button btn_ok Button"
        );
        assert_eq!(screen_document(&screen_of(vec![])), "");
        let one = comp("x", "Go", "Button");
        assert_eq!(
            screen_document(&screen_of(vec![one.clone()])),
            component_document(&one)
        );
    }

    #[test]
    fn preprocess_examples() {
        assert_eq!(preprocess("SSID Filter field"), ["ssid", "filter", "field"]);
        assert_eq!(preprocess("btn_okButton"), ["btn", "ok", "button"]);
        assert!(preprocess("the a an").is_empty());
        assert_eq!(preprocess("EditText"), ["edit", "text"]);
        assert_eq!(preprocess("Settings"), ["set"]);
    }

    #[test]
    fn camel_splitting() {
        assert_eq!(
            split_camel("parseHTTPResponse2"),
            ["parse", "HTTP", "Response", "2"]
        );
        assert_eq!(split_camel("SSID"), ["SSID"]);
        assert_eq!(split_camel("wifi24ghz"), ["wifi", "24", "ghz"]);
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(text in "[A-Za-z0-9_ .,:-]{0,60}") {
            let once = preprocess(&text);
            prop_assert_eq!(preprocess(&once.join(" ")), once);
        }

        #[test]
        fn component_document_has_each_field_once(
            id in "[a-z_]{1,8}", label in "[A-Z][a-z]{1,6}", t in "[A-Z][a-z]{2,6}"
        ) {
            let doc = component_document(&comp(&id, &label, &t));
            let pieces: Vec<&str> = doc.split(' ').collect();
            prop_assert_eq!(pieces, vec![id.as_str(), label.as_str(), t.as_str()]);
        }
    }
}
