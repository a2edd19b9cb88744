//! Prompt construction and response parsing.
//!
//! Template text lives in `assets/prompts/` and is compiled in. A template
//! starts with `#` comment lines that are dropped; placeholders are
//! `{name}` and are substituted in a single pass.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{TableDoc, Vocabulary};
use crate::definitions::Definition;
use crate::error::ParseError;
use crate::gateway::{ChatMessage, Role};
use crate::serializer::{column_name, serialize_table, SerializationOptions};

pub mod templates {
    pub const TASK_DESCRIPTION: &str = include_str!("../assets/prompts/task_description.txt");
    pub const INSTRUCTIONS_SINGLE: &str = include_str!("../assets/prompts/instructions_single.txt");
    pub const INSTRUCTIONS_MULTI: &str = include_str!("../assets/prompts/instructions_multi.txt");
    pub const HIERARCHY: &str = include_str!("../assets/prompts/hierarchy.txt");
    pub const DEFINITIONS: &str = include_str!("../assets/prompts/definitions.txt");
    pub const DEMONSTRATION_BLOCK: &str = include_str!("../assets/prompts/demonstration_block.txt");
    pub const ANNOTATION_REQUEST: &str = include_str!("../assets/prompts/annotation_request.txt");
    pub const DEFINITION_INITIAL: &str = include_str!("../assets/prompts/definition_initial.txt");
    pub const DEFINITION_DEMONSTRATION: &str = include_str!("../assets/prompts/definition_demonstration.txt");
    pub const DEFINITION_COMPARATIVE: &str = include_str!("../assets/prompts/definition_comparative.txt");
    pub const DEFINITION_REFINE: &str = include_str!("../assets/prompts/definition_refine.txt");
    pub const REVIEW_INSTRUCTIONS: &str = include_str!("../assets/prompts/review_instructions.txt");
    pub const REVIEW_REQUEST: &str = include_str!("../assets/prompts/review_request.txt");
    pub const DEFINITION_EXPLANATION: &str = include_str!("../assets/prompts/definition_explanation.txt");
}

/// Fills `{name}` placeholders of a template asset.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let body = template_body(template);
    let vars: HashMap<&str, &str> = vars.iter().copied().collect();
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        match close.and_then(|c| vars.get(&after[..c]).map(|v| (c, v))) {
            Some((c, value)) => {
                out.push_str(value);
                rest = &after[c + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn template_body(template: &str) -> &str {
    let mut body = template;
    while body.starts_with('#') {
        body = body.split_once('\n').map_or("", |(_, rest)| rest);
    }
    body.strip_suffix('\n').unwrap_or(body)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ZeroShot,
    FewShot,
    WithDefinitions,
    Reviewer,
}

/// Everything that varies between annotation prompts.
#[derive(Debug, Clone, Copy)]
pub struct PromptVariant<'a> {
    pub strategy: Strategy,
    pub include_instructions: bool,
    pub include_hierarchy: bool,
    pub definitions: Option<&'a [Definition]>,
    pub demonstrations: Option<&'a [&'a TableDoc]>,
}

impl<'a> PromptVariant<'a> {
    pub fn zero_shot() -> Self {
        Self {
            strategy: Strategy::ZeroShot,
            include_instructions: true,
            include_hierarchy: false,
            definitions: None,
            demonstrations: None,
        }
    }

    pub fn few_shot(demonstrations: &'a [&'a TableDoc]) -> Self {
        Self {
            strategy: Strategy::FewShot,
            demonstrations: Some(demonstrations),
            ..Self::zero_shot()
        }
    }

    pub fn with_definitions(definitions: &'a [Definition]) -> Self {
        Self {
            strategy: Strategy::WithDefinitions,
            definitions: Some(definitions),
            ..Self::zero_shot()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        match self.strategy {
            Strategy::FewShot if self.demonstrations.is_none_or(<[_]>::is_empty) => Err(crate::Error::invalid(
                "few-shot prompts need at least one demonstration",
            )),
            Strategy::WithDefinitions if self.definitions.is_none() => {
                Err(crate::Error::invalid("definition prompts need a definition set"))
            }
            _ => Ok(()),
        }
    }
}

fn label_list(vocab: &Vocabulary) -> String {
    vocab.labels.join(", ")
}

fn render_hierarchy(vocab: &Vocabulary) -> String {
    let in_tree: BTreeSet<&str> = vocab
        .hierarchy
        .iter()
        .flat_map(|(c, p)| [c.as_str(), p.as_str()])
        .collect();
    let children: BTreeSet<&str> = vocab.hierarchy.iter().map(|(c, _)| c.as_str()).collect();
    let mut lines = Vec::new();
    fn walk(vocab: &Vocabulary, node: &str, depth: usize, lines: &mut Vec<String>) {
        lines.push(format!("{}- {node}", "  ".repeat(depth)));
        for child in vocab.children(node) {
            walk(vocab, child, depth + 1, lines);
        }
    }
    for root in vocab
        .labels
        .iter()
        .map(String::as_str)
        .filter(|l| in_tree.contains(l) && !children.contains(l))
    {
        walk(vocab, root, 0, &mut lines);
    }
    lines.join("\n")
}

/// `label: text` lines, one per definition, newlines inside a text folded to spaces.
pub fn render_definition_lines(defs: &[Definition]) -> String {
    defs.iter()
        .map(|d| {
            format!(
                "{}: {}",
                d.label,
                d.text.split_whitespace().collect::<Vec<_>>().join(" ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Label set, optional hierarchy and optional definitions.
pub fn build_task_description(vocab: &Vocabulary, variant: &PromptVariant<'_>) -> String {
    let cardinality = if vocab.multi_label {
        "with one or more"
    } else {
        "with only one"
    };
    let mut out = render(
        templates::TASK_DESCRIPTION,
        &[("cardinality", cardinality), ("labels", &label_list(vocab))],
    );
    if variant.include_hierarchy && !vocab.hierarchy.is_empty() {
        out.push_str("\n\n");
        out.push_str(&render(templates::HIERARCHY, &[("tree", &render_hierarchy(vocab))]));
    }
    if let Some(defs) = variant.definitions.filter(|d| !d.is_empty()) {
        out.push_str("\n\n");
        out.push_str(&render(
            templates::DEFINITIONS,
            &[("definitions", &render_definition_lines(defs))],
        ));
    }
    out
}

pub fn instructions(vocab: &Vocabulary) -> &'static str {
    template_body(if vocab.multi_label {
        templates::INSTRUCTIONS_MULTI
    } else {
        templates::INSTRUCTIONS_SINGLE
    })
}

/// `Column 1, Column 3`
pub fn column_list(columns: &[usize]) -> String {
    columns.iter().map(|&c| column_name(c)).collect::<Vec<_>>().join(", ")
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

fn label_value(labels: &[&str], multi_label: bool) -> String {
    if multi_label {
        format!(
            "[{}]",
            labels.iter().map(|l| json_str(l)).collect::<Vec<_>>().join(", ")
        )
    } else {
        json_str(labels.first().copied().unwrap_or(""))
    }
}

fn json_object(entries: impl IntoIterator<Item = (usize, String)>) -> String {
    let body: Vec<String> = entries
        .into_iter()
        .map(|(c, v)| format!("{}: {v}", json_str(&column_name(c))))
        .collect();
    format!("{{{}}}", body.join(", "))
}

/// Gold answer for the annotated columns of `table`, in the response format.
pub fn render_gold_answer(table: &TableDoc, multi_label: bool) -> String {
    json_object(table.annotated_columns().into_iter().map(|c| {
        let labels: Vec<&str> = table.gold[&c].iter().map(String::as_str).collect();
        (c, label_value(&labels, multi_label))
    }))
}

/// Predictions rendered in the same shape a classifier is asked to emit.
pub fn render_predictions(preds: &[ColumnPrediction], multi_label: bool) -> String {
    json_object(preds.iter().map(|p| {
        let labels: Vec<&str> = p.labels.iter().map(String::as_str).collect();
        (p.column_index, label_value(&labels, multi_label))
    }))
}

/// `{"Column N": ["label", "explanation"]}` objects.
pub fn render_labelled_explanations(entries: &[(usize, String, String)]) -> String {
    json_object(
        entries
            .iter()
            .map(|(c, label, expl)| (*c, format!("[{}, {}]", json_str(label), json_str(expl)))),
    )
}

/// System message plus one user message holding the demonstrations (if
/// any), the serialized table and the request for its annotated columns.
pub fn build_annotation_prompt(
    table: &TableDoc,
    vocab: &Vocabulary,
    variant: &PromptVariant<'_>,
    opts: &SerializationOptions,
) -> Vec<ChatMessage> {
    let mut system = build_task_description(vocab, variant);
    if variant.include_instructions {
        system.push_str("\n\n");
        system.push_str(instructions(vocab));
    }
    let mut user = String::new();
    if variant.strategy == Strategy::FewShot {
        for demo in variant.demonstrations.unwrap_or_default() {
            user.push_str(&render(
                templates::DEMONSTRATION_BLOCK,
                &[
                    ("table", &serialize_table(demo, opts)),
                    ("columns", &column_list(&demo.annotated_columns())),
                    ("answer", &render_gold_answer(demo, vocab.multi_label)),
                ],
            ));
            user.push_str("\n\n");
        }
    }
    user.push_str(&render(
        templates::ANNOTATION_REQUEST,
        &[
            ("columns", &column_list(&table.annotated_columns())),
            ("table", &serialize_table(table, opts)),
        ],
    ));
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

/// Kinds of prompt this crate sends, recognised from their fixed wording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Annotation,
    Review,
    InitialDefinition,
    DemonstrationDefinition,
    ComparativeDefinition,
    RefineDefinition,
    Unknown,
}

impl PromptKind {
    pub fn detect(messages: &[ChatMessage]) -> Self {
        let user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str());
        if user.contains("by the first model:") {
            PromptKind::Review
        } else if user.contains("Update the definition of the label") {
            PromptKind::RefineDefinition
        } else if user.contains("Give tips on how to distinguish") {
            PromptKind::ComparativeDefinition
        } else if user.contains("Based on these examples, give a definition") {
            PromptKind::DemonstrationDefinition
        } else if user.starts_with("Give a definition of the term") {
            PromptKind::InitialDefinition
        } else if user.contains("of the following table:") {
            PromptKind::Annotation
        } else {
            PromptKind::Unknown
        }
    }
}

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnPrediction {
    pub column_index: usize,
    pub labels: Vec<String>,
    pub in_vocabulary: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl ColumnPrediction {
    pub fn new(column_index: usize, labels: Vec<String>, vocab: &Vocabulary) -> Self {
        let in_vocabulary = labels.iter().map(|l| vocab.contains(l)).collect();
        Self {
            column_index,
            labels,
            in_vocabulary,
            explanation: None,
        }
    }

    pub fn first_label(&self) -> Option<&str> {
        self.labels.first().map(String::as_str)
    }

    pub fn has_out_of_vocabulary(&self) -> bool {
        self.in_vocabulary.iter().any(|v| !v)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedResponse {
    /// Ordered by column index.
    pub predictions: Vec<ColumnPrediction>,
    pub unanswered: Vec<usize>,
    /// Per-column format problems; those columns are also unanswered.
    pub column_errors: BTreeMap<usize, String>,
    pub warnings: Vec<String>,
}

/// JSON object entries in document order, duplicates kept.
struct Entries(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_map(V)
    }
}

/// Finds the first balanced `{...}` region of `text` that parses as a
/// JSON object, after removing markdown code fences.
fn extract_json_object(text: &str) -> Option<Vec<(String, Value)>> {
    let cleaned = text.replace("```json", "").replace("```JSON", "").replace("```", "");
    let bytes = cleaned.as_bytes();
    let mut start = 0;
    while let Some(off) = cleaned[start..].find('{') {
        let open = start + off;
        if let Some(end) = balanced_end(bytes, open) {
            if let Ok(Entries(entries)) = serde_json::from_str::<Entries>(&cleaned[open..=end]) {
                return Some(entries);
            }
        }
        start = open + 1;
    }
    None
}

fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// `"Column 3"` (also `column_3`, `Column3`) to zero-based index 2.
pub fn parse_column_key(key: &str) -> Option<usize> {
    let k = key.trim().to_ascii_lowercase();
    let rest = k.strip_prefix("column").or_else(|| k.strip_prefix("col"))?;
    let digits = rest.trim_start_matches([' ', '_', '-', '#', '.']);
    digits.parse::<usize>().ok().filter(|n| *n >= 1).map(|n| n - 1)
}

fn labels_from_value(v: &Value, multi_label: bool) -> Option<Vec<String>> {
    let mut labels: Vec<String> = match v {
        Value::String(s) => vec![s.trim().to_string()],
        Value::Array(items) => items
            .iter()
            .filter_map(Value::as_str)
            .map(|s| s.trim().to_string())
            .collect(),
        _ => return None,
    };
    labels.retain(|l| !l.is_empty());
    let mut seen = BTreeSet::new();
    labels.retain(|l| seen.insert(l.clone()));
    if !multi_label {
        labels.truncate(1);
    }
    Some(labels)
}

fn parse_generic(
    text: &str,
    vocab: &Vocabulary,
    expected_columns: &[usize],
    multi_label: bool,
    review: bool,
) -> Result<ParsedResponse, ParseError> {
    let entries = extract_json_object(text).ok_or_else(|| ParseError::Unparseable { raw: text.to_string() })?;
    let expected: BTreeSet<usize> = expected_columns.iter().copied().collect();
    let mut out = ParsedResponse::default();
    let mut by_column: BTreeMap<usize, Result<ColumnPrediction, String>> = BTreeMap::new();
    for (key, value) in entries {
        let Some(col) = parse_column_key(&key) else {
            out.warnings.push(format!("ignored key \"{key}\""));
            continue;
        };
        if !expected.contains(&col) {
            out.warnings.push(format!("ignored unrequested column \"{key}\""));
            continue;
        }
        let parsed = if review {
            match &value {
                Value::Array(pair) if pair.len() == 2 => {
                    match (labels_from_value(&pair[0], multi_label), pair[1].as_str()) {
                        (Some(labels), Some(expl)) if !labels.is_empty() => {
                            let mut p = ColumnPrediction::new(col, labels, vocab);
                            p.explanation = Some(expl.to_string());
                            Ok(p)
                        }
                        _ => Err(format!("{key}: expected [label, explanation] strings")),
                    }
                }
                _ => Err(format!("{key}: expected a two-element [label, explanation] array")),
            }
        } else {
            match labels_from_value(&value, multi_label) {
                Some(labels) if !labels.is_empty() => Ok(ColumnPrediction::new(col, labels, vocab)),
                Some(_) => Err(format!("{key}: empty label")),
                None => Err(format!("{key}: expected a label string or list")),
            }
        };
        if by_column.insert(col, parsed).is_some() {
            out.warnings
                .push(format!("duplicate key for {}; last value kept", column_name(col)));
        }
    }
    for col in expected {
        match by_column.remove(&col) {
            Some(Ok(p)) => out.predictions.push(p),
            Some(Err(e)) => {
                out.column_errors.insert(col, e);
                out.unanswered.push(col);
            }
            None => out.unanswered.push(col),
        }
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    Ok(out)
}

/// Parses a `{"Column N": label}` answer. Out-of-vocabulary labels are kept
/// and flagged; requested columns without a usable value are unanswered.
pub fn parse_annotation_response(
    text: &str,
    vocab: &Vocabulary,
    expected_columns: &[usize],
    multi_label: bool,
) -> Result<ParsedResponse, ParseError> {
    parse_generic(text, vocab, expected_columns, multi_label, false)
}

/// Parses a `{"Column N": [label, explanation]}` review.
pub fn parse_review_response(
    text: &str,
    vocab: &Vocabulary,
    expected_columns: &[usize],
    multi_label: bool,
) -> Result<ParsedResponse, ParseError> {
    parse_generic(text, vocab, expected_columns, multi_label, true)
}
