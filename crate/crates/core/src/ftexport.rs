//! Fine-tuning sets in chat JSONL format and hyperparameter manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{Corpus, Split, TableDoc};
use crate::definitions::{excerpt_line, sample_label_columns, Definition};
use crate::error::{Error, Result};
use crate::gateway::{estimate_message_tokens, ChatMessage, Role};
use crate::prompts::{build_annotation_prompt, build_task_description, render, templates, PromptVariant};
use crate::serializer::{column_name, SerializationOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Cta,
    DefinitionGeneration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub messages: Vec<ChatMessage>,
    pub task: Task,
    /// Table id for CTA records, label for definition records.
    pub source: String,
}

impl TrainingRecord {
    pub fn assistant(&self) -> &str {
        self.messages
            .last()
            .filter(|m| m.role == Role::Assistant)
            .map_or("", |m| m.content.as_str())
    }
}

/// Instructions are off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SetOptions {
    pub include_instructions: bool,
    pub serialization: SerializationOptions,
    /// Seeded shuffle of the record order.
    pub shuffle_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub records: Vec<TrainingRecord>,
    /// source -> reason
    pub failures: BTreeMap<String, String>,
}

impl TrainingSet {
    pub fn estimated_tokens(&self) -> u64 {
        self.records.iter().map(|r| estimate_message_tokens(&r.messages)).sum()
    }

    fn finish(mut self, opts: &SetOptions) -> Self {
        if let Some(seed) = opts.shuffle_seed {
            self.records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        self
    }
}

fn cta_record(table: &TableDoc, corpus: &Corpus, opts: &SetOptions, answer: String) -> TrainingRecord {
    let variant = PromptVariant {
        include_instructions: opts.include_instructions,
        ..PromptVariant::zero_shot()
    };
    let mut messages = build_annotation_prompt(table, &corpus.vocabulary, &variant, &opts.serialization);
    messages.push(ChatMessage::assistant(answer));
    TrainingRecord {
        messages,
        task: Task::Cta,
        source: table.table_id.clone(),
    }
}

fn train_tables(corpus: &Corpus) -> Result<Vec<&TableDoc>> {
    let tables: Vec<&TableDoc> = corpus
        .split(Split::Train)
        .filter(|t| !t.annotated_columns().is_empty())
        .collect();
    if tables.is_empty() {
        return Err(Error::invalid("fine-tuning sets need a non-empty train split"));
    }
    Ok(tables)
}

fn gold_value(labels: &BTreeSet<String>, multi_label: bool) -> Value {
    if multi_label {
        json!(labels.iter().collect::<Vec<_>>())
    } else {
        json!(labels.iter().next())
    }
}

fn answer_object(entries: Vec<(usize, Value)>) -> String {
    let map: serde_json::Map<String, Value> = entries.into_iter().map(|(c, v)| (column_name(c), v)).collect();
    Value::Object(map).to_string()
}

/// Zero-shot prompt plus the gold `{"Column N": label}` answer for every train table.
pub fn build_simple_set(corpus: &Corpus, opts: &SetOptions) -> Result<TrainingSet> {
    let multi = corpus.vocabulary.multi_label;
    let records = train_tables(corpus)?
        .into_iter()
        .map(|t| {
            let answer = answer_object(
                t.annotated_columns()
                    .into_iter()
                    .map(|c| (c, gold_value(&t.gold[&c], multi)))
                    .collect(),
            );
            cta_record(t, corpus, opts, answer)
        })
        .collect();
    Ok(TrainingSet {
        records,
        failures: BTreeMap::new(),
    }
    .finish(opts))
}

/// `Label X is correct because the term <definition>`
pub fn explanation(label: &str, definition: &str) -> String {
    render(
        templates::DEFINITION_EXPLANATION,
        &[("label", label), ("definition", definition)],
    )
}

/// As the simple set, with each answer a `[label, explanation]` pair built
/// from the label's definition. Multi-label columns carry a list of pairs.
pub fn build_definitions_set(corpus: &Corpus, defs: &[Definition], opts: &SetOptions) -> Result<TrainingSet> {
    let by_label: BTreeMap<&str, &str> = defs.iter().map(|d| (d.label.as_str(), d.text.as_str())).collect();
    let multi = corpus.vocabulary.multi_label;
    let mut set = TrainingSet::default();
    'tables: for t in train_tables(corpus)? {
        let mut entries = Vec::new();
        for c in t.annotated_columns() {
            let mut pairs = Vec::new();
            for label in &t.gold[&c] {
                let Some(text) = by_label.get(label.as_str()) else {
                    set.failures
                        .insert(t.table_id.clone(), format!("no definition for label {label}"));
                    continue 'tables;
                };
                pairs.push(json!([label, explanation(label, text)]));
            }
            let value = if multi {
                Value::Array(pairs)
            } else {
                pairs.swap_remove(0)
            };
            entries.push((c, value));
        }
        set.records.push(cta_record(t, corpus, opts, answer_object(entries)));
    }
    Ok(set.finish(opts))
}

/// The simple set plus one definition-generation record per label.
pub fn build_multitask_set(
    corpus: &Corpus,
    defs: &[Definition],
    with_demonstrations: bool,
    n_demos: usize,
    seed: u64,
    opts: &SetOptions,
) -> Result<TrainingSet> {
    let mut set = build_simple_set(
        corpus,
        &SetOptions {
            shuffle_seed: None,
            ..*opts
        },
    )?;
    let by_label: BTreeMap<&str, &str> = defs.iter().map(|d| (d.label.as_str(), d.text.as_str())).collect();
    let system = build_task_description(&corpus.vocabulary, &PromptVariant::zero_shot());
    for label in &corpus.vocabulary.labels {
        let Some(text) = by_label.get(label.as_str()) else {
            set.failures.insert(label.clone(), "no definition".into());
            continue;
        };
        let sample = if with_demonstrations {
            sample_label_columns(corpus, label, n_demos, seed)
        } else {
            Vec::new()
        };
        let user = if sample.is_empty() {
            render(templates::DEFINITION_INITIAL, &[("label", label)])
        } else {
            let examples = sample
                .iter()
                .map(|r| format!("- {}", excerpt_line(corpus, r, &opts.serialization)))
                .collect::<Vec<_>>()
                .join("\n");
            render(
                templates::DEFINITION_DEMONSTRATION,
                &[
                    ("count", &sample.len().to_string()),
                    ("label", label),
                    ("examples", &examples),
                ],
            )
        };
        set.records.push(TrainingRecord {
            messages: vec![
                ChatMessage::system(system.clone()),
                ChatMessage::user(user),
                ChatMessage::assistant(text.to_string()),
            ],
            task: Task::DefinitionGeneration,
            source: label.clone(),
        });
    }
    Ok(set.finish(opts))
}

#[derive(Serialize, Deserialize)]
struct JsonlLine {
    messages: Vec<ChatMessage>,
}

/// One `{"messages": [...]}` object per line, LF endings.
pub fn export_jsonl(records: &[TrainingRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(
            &mut out,
            &JsonlLine {
                messages: r.messages.clone(),
            },
        )
        .expect("record serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Message lists of an exported file.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Vec<ChatMessage>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str::<JsonlLine>(l)
                .map(|j| j.messages)
                .map_err(|e| Error::Corrupt {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", i + 1),
                })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    /// Open 8B-class model trained with QLoRA.
    Open8b,
    /// Open 70B-class model trained with QLoRA.
    Open70b,
    /// Hosted fine-tuning API.
    Hosted,
}

impl std::str::FromStr for ModelClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open-8b" | "open_8b" => Ok(ModelClass::Open8b),
            "open-70b" | "open_70b" => Ok(ModelClass::Open70b),
            "hosted" => Ok(ModelClass::Hosted),
            other => Err(Error::invalid(format!("unknown model class \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub model_class: ModelClass,
    pub epochs: u32,
    pub batch_size: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_input_length: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lora_r: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lora_alpha: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lora_dropout: Option<f64>,
}

impl Hyperparameters {
    pub fn for_class(model_class: ModelClass) -> Self {
        let open = |batch_size| Self {
            model_class,
            epochs: 10,
            batch_size,
            learning_rate: Some(1e-4),
            max_input_length: Some(5020),
            lora_r: Some(32),
            lora_alpha: Some(32),
            lora_dropout: Some(0.1),
        };
        match model_class {
            ModelClass::Open8b => open(16),
            ModelClass::Open70b => open(8),
            // Learning rate and the rest stay at the provider's defaults.
            ModelClass::Hosted => Self {
                model_class,
                epochs: 3,
                batch_size: 1,
                learning_rate: None,
                max_input_length: None,
                lora_r: None,
                lora_alpha: None,
                lora_dropout: None,
            },
        }
    }
}

pub fn export_hyperparameter_manifest(model_class: ModelClass, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    crate::corpus::write_json_pretty(path, &Hyperparameters::for_class(model_class))
}
