//! Template-based generation of synthetic OB descriptions from screen data.
//!
//! A template is a sentence pattern with `[slot]` placeholders filled from the
//! screen (`[component]`, `[screen]`, `[list]`, `[list item]`) and `{variable}`
//! placeholders drawn from synonym lists.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Bounds, UIComponent, UIHierarchyNode, UIScreen};
use crate::textdoc::split_identifiers;

pub const MAX_WORDS: usize = 25;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("template {id}: {reason}")]
    InvalidTemplate { id: String, reason: String },
    #[error("template {0} is not applicable here")]
    NotApplicable(String),
    #[error("component has no label, description or id")]
    AllAttributesEmpty,
    #[error("generated OB has {0} words (max {MAX_WORDS})")]
    TooLong(usize),
    #[error("{value:?} is not a synonym of {{{variable}}}")]
    UnknownChoice { variable: String, value: String },
    #[error("templates: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Screen,
    Component,
}

impl TemplateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateKind::Screen => "screen",
            TemplateKind::Component => "component",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Applicability {
    /// Allowed component types; empty allows all.
    pub component_types: Vec<String>,
    /// Case-insensitive keywords looked up in the activity name and
    /// component metadata; empty matches every screen.
    pub keywords: Vec<String>,
    /// The screen must contain one of these container types.
    pub requires_containers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObTemplate {
    pub template_id: String,
    pub kind: TemplateKind,
    #[serde(default)]
    pub bug_type: String,
    pub pattern: String,
    #[serde(default)]
    pub variable_sets: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub applicability: Applicability,
    #[serde(default)]
    pub discourse_pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(Slot),
    Var(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Component,
    Screen,
    List,
    ListItem,
}

impl Slot {
    fn parse(name: &str) -> Option<Slot> {
        match name {
            "component" => Some(Slot::Component),
            "screen" => Some(Slot::Screen),
            "list" => Some(Slot::List),
            "list item" => Some(Slot::ListItem),
            _ => None,
        }
    }
}

fn parse_pattern(pattern: &str) -> Result<Vec<Piece>, String> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut chars = pattern.chars();
    while let Some(c) = chars.next() {
        let close = match c {
            '[' => ']',
            '{' => '}',
            ']' | '}' => return Err(format!("unbalanced {c:?}")),
            _ => {
                text.push(c);
                continue;
            }
        };
        let mut name = String::new();
        loop {
            match chars.next() {
                Some(x) if x == close => break,
                Some('[' | '{' | ']' | '}') | None => {
                    return Err(format!("unterminated {c:?} placeholder"))
                }
                Some(x) => name.push(x),
            }
        }
        if !text.is_empty() {
            pieces.push(Piece::Text(std::mem::take(&mut text)));
        }
        if c == '[' {
            let slot = Slot::parse(&name).ok_or_else(|| format!("unknown slot [{name}]"))?;
            pieces.push(Piece::Slot(slot));
        } else {
            pieces.push(Piece::Var(name));
        }
    }
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    Ok(pieces)
}

impl ObTemplate {
    fn pieces(&self) -> Result<Vec<Piece>, SynthError> {
        parse_pattern(&self.pattern).map_err(|reason| self.invalid(reason))
    }

    fn invalid(&self, reason: impl Into<String>) -> SynthError {
        SynthError::InvalidTemplate {
            id: self.template_id.clone(),
            reason: reason.into(),
        }
    }

    pub fn slots(&self) -> Result<Vec<Slot>, SynthError> {
        Ok(self
            .pieces()?
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s),
                _ => None,
            })
            .collect())
    }

    /// Variables in order of first appearance.
    pub fn variables(&self) -> Result<Vec<String>, SynthError> {
        let mut seen = Vec::new();
        for p in self.pieces()? {
            if let Piece::Var(v) = p {
                if !seen.contains(&v) {
                    seen.push(v);
                }
            }
        }
        Ok(seen)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let slots = self.slots()?;
        if slots.is_empty() {
            return Err(self.invalid("pattern has no slot"));
        }
        for v in self.variables()? {
            match self.variable_sets.get(&v) {
                Some(syns) if !syns.is_empty() => {}
                _ => return Err(self.invalid(format!("variable {{{v}}} has no synonyms"))),
            }
        }
        let n_component = slots.iter().filter(|s| **s == Slot::Component).count();
        match self.kind {
            TemplateKind::Component if n_component != 1 => {
                Err(self.invalid("component templates need exactly one [component] slot"))
            }
            TemplateKind::Screen if n_component != 0 => {
                Err(self.invalid("screen templates cannot use [component]"))
            }
            _ => Ok(()),
        }
    }

    fn needs_list(&self) -> bool {
        self.slots()
            .map(|s| s.iter().any(|s| matches!(s, Slot::List | Slot::ListItem)))
            .unwrap_or(false)
    }

    pub fn is_applicable(&self, screen: &UIScreen, component: Option<&UIComponent>) -> bool {
        let app = &self.applicability;
        if !app.requires_containers.is_empty()
            && !screen
                .root
                .preorder()
                .any(|n| app.requires_containers.contains(&n.component.comp_type))
        {
            return false;
        }
        if self.needs_list() && list_slots(&screen.root).is_none() {
            return false;
        }
        match self.kind {
            TemplateKind::Component => {
                let Some(c) = component else { return false };
                app.component_types.is_empty() || app.component_types.contains(&c.comp_type)
            }
            TemplateKind::Screen => {
                if app.keywords.is_empty() {
                    return true;
                }
                let mut haystack = screen.activity_name.to_lowercase();
                for c in &screen.leaf_components {
                    for field in [&c.component_id, &c.label, &c.description] {
                        haystack.push(' ');
                        haystack.push_str(&field.to_lowercase());
                    }
                }
                app.keywords
                    .iter()
                    .any(|k| haystack.contains(&k.to_lowercase()))
            }
        }
    }
}

pub fn load_templates(path: &Path) -> Result<Vec<ObTemplate>, SynthError> {
    let raw = std::fs::read_to_string(path)?;
    parse_templates(&raw)
}

pub fn parse_templates(raw: &str) -> Result<Vec<ObTemplate>, SynthError> {
    let templates: Vec<ObTemplate> = serde_json::from_str(raw)?;
    let mut ids = BTreeSet::new();
    for t in &templates {
        t.validate()?;
        if !ids.insert(&t.template_id) {
            return Err(t.invalid("duplicate template_id"));
        }
    }
    Ok(templates)
}

/// The starter catalog shipped with the crate.
pub fn builtin_templates() -> Vec<ObTemplate> {
    parse_templates(include_str!("../data/templates.json")).expect("built-in catalog is valid")
}

/// Readable name for a widget type.
pub fn humanize_type(comp_type: &str) -> String {
    match comp_type {
        "Button" | "ImageButton" | "MaterialButton" | "AppCompatButton" => "button".into(),
        "EditText" | "AutoCompleteTextView" | "TextInputEditText" => "text field".into(),
        "TextView" | "AppCompatTextView" => "textview".into(),
        "ImageView" | "AppCompatImageView" => "image".into(),
        "CheckBox" | "AppCompatCheckBox" => "checkbox".into(),
        "Switch" | "SwitchCompat" => "switch".into(),
        "Spinner" => "dropdown".into(),
        "RadioButton" => "radio button".into(),
        "SeekBar" => "slider".into(),
        other => split_identifiers(other).join(" "),
    }
}

/// Screen phrase from an activity name: package stripped, camel case split,
/// `Activity` dropped, lowercased.
pub fn humanize_screen(activity: &str) -> String {
    let simple = activity.rsplit(['.', '/', '$']).next().unwrap_or(activity);
    let words: Vec<String> = split_identifiers(simple)
        .into_iter()
        .filter(|w| w != "activity")
        .collect();
    words.join(" ")
}

const LOCATIONS: [[&str; 3]; 3] = [
    [
        "at the top left corner",
        "at the top",
        "at the top right corner",
    ],
    ["on the left", "at the center", "on the right"],
    [
        "at the bottom left corner",
        "at the bottom",
        "at the bottom right corner",
    ],
];

fn third(offset2: u64, extent: u64) -> usize {
    // offset2 is a doubled coordinate, so the thirds of `extent` lie at 2e/3 and 4e/3.
    if 3 * offset2 <= 2 * extent {
        0
    } else if 3 * offset2 <= 4 * extent {
        1
    } else {
        2
    }
}

/// Position of the component's center on a 3x3 grid over the frame.
/// Centers on a cell boundary belong to the lower cell.
pub fn location_phrase(bounds: Bounds, frame: Bounds) -> &'static str {
    let cx2 = (2 * bounds.x as u64 + bounds.width as u64).saturating_sub(2 * frame.x as u64);
    let cy2 = (2 * bounds.y as u64 + bounds.height as u64).saturating_sub(2 * frame.y as u64);
    let col = third(cx2, frame.width as u64);
    let row = third(cy2, frame.height as u64);
    LOCATIONS[row][col]
}

/// Which optional qualifiers follow the component's base phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PhraseParts {
    pub with_type: bool,
    pub with_location: bool,
}

/// First non-empty of label, description and id (ids have underscores turned
/// into spaces).
pub fn base_phrase(c: &UIComponent) -> Result<String, SynthError> {
    let label = c.label.trim();
    if !label.is_empty() {
        return Ok(label.to_string());
    }
    let desc = c.description.trim();
    if !desc.is_empty() {
        return Ok(desc.to_string());
    }
    let id = c.component_id.rsplit('/').next().unwrap_or("").trim();
    if !id.is_empty() {
        return Ok(split_identifiers(id).join(" "));
    }
    Err(SynthError::AllAttributesEmpty)
}

pub fn component_phrase(
    c: &UIComponent,
    frame: Bounds,
    parts: PhraseParts,
) -> Result<String, SynthError> {
    let mut phrase = base_phrase(c)?;
    if parts.with_type {
        let t = humanize_type(&c.comp_type);
        if !t.is_empty() && !phrase.to_lowercase().ends_with(&t) {
            phrase.push(' ');
            phrase.push_str(&t);
        }
    }
    if parts.with_location {
        phrase.push(' ');
        phrase.push_str(location_phrase(c.bounds, frame));
    }
    Ok(phrase)
}

fn is_list_type(t: &str) -> bool {
    t.contains("ListView") || t.contains("RecyclerView")
}

/// `[list]` and `[list item]` phrases from the first list container that has
/// a labelled item.
pub fn list_slots(root: &UIHierarchyNode) -> Option<(String, String)> {
    root.preorder()
        .filter(|n| is_list_type(&n.component.comp_type) && !n.is_leaf())
        .find_map(|list| {
            let item = list
                .preorder()
                .skip(1)
                .filter(|n| n.is_leaf())
                .map(|n| n.component.label.trim())
                .find(|l| !l.is_empty())?
                .to_string();
            let id = list.component.component_id.rsplit('/').next().unwrap_or("");
            let mut words: Vec<String> = split_identifiers(id);
            if words.last().map(String::as_str) == Some("list") {
                words.pop();
            }
            words.push("list".into());
            Some((words.join(" "), item))
        })
}

/// Whitespace collapsed, first letter capitalized, word cap enforced.
pub fn normalize_sentence(raw: &str) -> Result<String, SynthError> {
    let words: Vec<&str> = raw.split_whitespace().collect();
    if words.len() > MAX_WORDS {
        return Err(SynthError::TooLong(words.len()));
    }
    let joined = words.join(" ");
    let mut chars = joined.chars();
    Ok(match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => joined,
    })
}

/// Values for the screen-derived slots of one instantiation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotValues {
    pub component: Option<String>,
    pub screen: Option<String>,
    pub list: Option<String>,
    pub list_item: Option<String>,
}

impl SlotValues {
    pub fn for_screen(screen: &UIScreen) -> Self {
        let (list, list_item) = match list_slots(&screen.root) {
            Some((l, i)) => (Some(l), Some(i)),
            None => (None, None),
        };
        Self {
            component: None,
            screen: Some(humanize_screen(&screen.activity_name)),
            list,
            list_item,
        }
    }

    fn get(&self, slot: Slot) -> Option<&str> {
        match slot {
            Slot::Component => self.component.as_deref(),
            Slot::Screen => self.screen.as_deref(),
            Slot::List => self.list.as_deref(),
            Slot::ListItem => self.list_item.as_deref(),
        }
    }
}

/// Fills a template with explicit synonym choices.
pub fn fill(
    template: &ObTemplate,
    slots: &SlotValues,
    choices: &BTreeMap<String, String>,
) -> Result<String, SynthError> {
    let mut out = String::new();
    for piece in template.pieces()? {
        match piece {
            Piece::Text(t) => out.push_str(&t),
            Piece::Slot(s) => out.push_str(
                slots
                    .get(s)
                    .ok_or_else(|| SynthError::NotApplicable(template.template_id.clone()))?,
            ),
            Piece::Var(v) => {
                let syns = template
                    .variable_sets
                    .get(&v)
                    .map(Vec::as_slice)
                    .unwrap_or(&[]);
                let value = choices
                    .get(&v)
                    .or_else(|| syns.first())
                    .ok_or_else(|| template.invalid(format!("variable {{{v}}} has no synonyms")))?;
                if !syns.contains(value) {
                    return Err(SynthError::UnknownChoice {
                        variable: v,
                        value: value.clone(),
                    });
                }
                out.push_str(value);
            }
        }
    }
    normalize_sentence(&out)
}

/// Draws one synonym per variable uniformly, in order of first appearance.
pub fn draw_choices(
    template: &ObTemplate,
    rng: &mut impl Rng,
) -> Result<BTreeMap<String, String>, SynthError> {
    let mut choices = BTreeMap::new();
    for v in template.variables()? {
        let syns = &template.variable_sets[&v];
        let pick = syns[rng.gen_range(0..syns.len())].clone();
        choices.insert(v, pick);
    }
    Ok(choices)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenOptions {
    /// Probability of appending the component type to its phrase.
    pub p_type: f64,
    /// Probability of appending the location phrase.
    pub p_location: f64,
    /// Upper bound on OBs per template (None for no bound).
    pub max_per_template: Option<usize>,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            p_type: 0.5,
            p_location: 0.5,
            max_per_template: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticOb {
    pub ob_id: String,
    pub text: String,
    pub template_id: String,
    pub kind: TemplateKind,
    pub bug_type: String,
    pub app_id: String,
    pub screen_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_index: Option<usize>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub discourse_pattern: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SynthOutput {
    pub obs: Vec<SyntheticOb>,
    pub counts: BTreeMap<String, usize>,
    pub skipped_duplicates: usize,
    pub skipped_too_long: usize,
}

impl SynthOutput {
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for ob in &self.obs {
            serde_json::to_writer(&mut out, ob)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn instantiate_component(
    template: &ObTemplate,
    screen: &UIScreen,
    component: &UIComponent,
    rng: &mut ChaCha8Rng,
    opts: &GenOptions,
) -> Result<String, SynthError> {
    let parts = PhraseParts {
        with_type: rng.gen_bool(opts.p_type.clamp(0.0, 1.0)),
        with_location: rng.gen_bool(opts.p_location.clamp(0.0, 1.0)),
    };
    let choices = draw_choices(template, rng)?;
    let mut slots = SlotValues::for_screen(screen);
    slots.component = Some(component_phrase(component, screen.frame(), parts)?);
    match fill(template, &slots, &choices) {
        Err(SynthError::TooLong(_)) if parts != PhraseParts::default() => {
            slots.component = Some(base_phrase(component)?);
            fill(template, &slots, &choices)
        }
        other => other,
    }
}

/// Instantiates every applicable (screen, template[, component]) combination.
/// Output is a pure function of the inputs and `seed`.
pub fn generate_dataset(
    screens: &[UIScreen],
    templates: &[ObTemplate],
    seed: u64,
    opts: &GenOptions,
) -> Result<SynthOutput, SynthError> {
    for t in templates {
        t.validate()?;
    }
    let mut ordered: Vec<&UIScreen> = screens.iter().collect();
    ordered.sort_by(|a, b| (&a.app_id, &a.screen_id).cmp(&(&b.app_id, &b.screen_id)));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SynthOutput::default();
    let mut seen = BTreeSet::new();
    let mut per_template: BTreeMap<&str, usize> = BTreeMap::new();

    for screen in ordered {
        for template in templates {
            let targets: Vec<Option<usize>> = match template.kind {
                TemplateKind::Screen => vec![None],
                TemplateKind::Component => (0..screen.leaf_components.len()).map(Some).collect(),
            };
            for target in targets {
                let used = per_template.entry(&template.template_id).or_default();
                if opts.max_per_template.is_some_and(|m| *used >= m) {
                    break;
                }
                let component = target.map(|i| &screen.leaf_components[i]);
                if !template.is_applicable(screen, component) {
                    continue;
                }
                let text = match component {
                    Some(c) => {
                        if base_phrase(c).is_err() {
                            continue;
                        }
                        instantiate_component(template, screen, c, &mut rng, opts)
                    }
                    None => draw_choices(template, &mut rng)
                        .and_then(|ch| fill(template, &SlotValues::for_screen(screen), &ch)),
                };
                let text = match text {
                    Ok(t) => t,
                    Err(SynthError::TooLong(_)) => {
                        out.skipped_too_long += 1;
                        continue;
                    }
                    Err(SynthError::NotApplicable(_)) => continue,
                    Err(e) => return Err(e),
                };
                if !seen.insert(text.clone()) {
                    out.skipped_duplicates += 1;
                    continue;
                }
                *used += 1;
                *out.counts
                    .entry(template.kind.as_str().to_string())
                    .or_default() += 1;
                out.obs.push(SyntheticOb {
                    ob_id: format!("syn-{}", out.obs.len() + 1),
                    text,
                    template_id: template.template_id.clone(),
                    kind: template.kind,
                    bug_type: template.bug_type.clone(),
                    app_id: screen.app_id.clone(),
                    screen_id: screen.screen_id.clone(),
                    component_index: target,
                    discourse_pattern: template.discourse_pattern.clone(),
                });
            }
        }
    }
    Ok(out)
}
