//! Two-step self-correction: a reviewer model checks a prior run table by table.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, TableDoc, Vocabulary};
use crate::definitions::{Definition, DefinitionKind};
use crate::error::{Error, Result};
use crate::gateway::{ChatBackend, ChatMessage};
use crate::ledger::{Phase, UsageEntry};
use crate::prompts::{
    build_task_description, column_list, parse_review_response, render, render_predictions, templates,
    ColumnPrediction, PromptVariant, Strategy,
};
use crate::runner::{parallel_map, Run, RunContext};
use crate::serializer::{column_name, serialize_table, SerializationOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Label set only.
    Plain,
    /// All demonstration definitions.
    DemoDefs,
    /// Comparative definitions of the labels the prior run predicted for the table.
    SelectedComparative,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Plain => "plain",
            Scenario::DemoDefs => "demo_defs",
            Scenario::SelectedComparative => "selected_comparative",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Scenario::Plain),
            "demo-defs" | "demo_defs" => Ok(Scenario::DemoDefs),
            "selected-comparative" | "selected_comparative" => Ok(Scenario::SelectedComparative),
            other => Err(Error::invalid(format!("unknown review scenario \"{other}\""))),
        }
    }
}

/// Comparative definitions whose label the prior run predicted somewhere in
/// the table, in label order, without duplicates.
pub fn select_comparative_for_prediction(prior: &[ColumnPrediction], comparative: &[Definition]) -> Vec<Definition> {
    let predicted: BTreeSet<&str> = prior.iter().flat_map(|p| p.labels.iter().map(String::as_str)).collect();
    let mut picked: BTreeMap<&str, &Definition> = BTreeMap::new();
    for d in comparative {
        if predicted.contains(d.label.as_str()) {
            picked.entry(d.label.as_str()).or_insert(d);
        }
    }
    picked.into_values().cloned().collect()
}

/// The reviewer's system and user messages for one table.
pub fn build_review_prompt(
    table: &TableDoc,
    prior: &[ColumnPrediction],
    vocab: &Vocabulary,
    definitions: Option<&[Definition]>,
    opts: &SerializationOptions,
) -> Vec<ChatMessage> {
    let variant = PromptVariant {
        strategy: Strategy::Reviewer,
        include_instructions: false,
        include_hierarchy: false,
        definitions,
        demonstrations: None,
    };
    let system = format!(
        "{}\n\n{}",
        build_task_description(vocab, &variant),
        render(templates::REVIEW_INSTRUCTIONS, &[])
    );
    let user = render(
        templates::REVIEW_REQUEST,
        &[
            ("table", &serialize_table(table, opts)),
            ("columns", &column_list(&table.annotated_columns())),
            ("prior", &render_predictions(prior, vocab.multi_label)),
        ],
    );
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

struct Reviewed {
    predictions: Vec<ColumnPrediction>,
    raw: Option<String>,
    usage: Option<UsageEntry>,
    flags: Vec<String>,
}

/// Reviews every table of `prior`. Where the reviewer fails or its answer
/// cannot be read, the prior prediction survives and the table is flagged.
pub fn self_correct(
    prior: &Run,
    corpus: &Corpus,
    backend: &dyn ChatBackend,
    scenario: Scenario,
    defs: Option<&[Definition]>,
    opts: &SerializationOptions,
    ctx: &RunContext,
) -> Result<Run> {
    let defs = match (scenario, defs) {
        (Scenario::Plain, _) => None,
        (_, None) => {
            return Err(Error::invalid(format!(
                "review scenario {} needs definitions",
                scenario.as_str()
            )))
        }
        (Scenario::DemoDefs, Some(d)) if d.iter().any(|d| d.kind != DefinitionKind::Demonstration) => {
            return Err(Error::invalid("demo_defs review needs demonstration definitions"))
        }
        (Scenario::SelectedComparative, Some(d)) if d.iter().any(|d| d.kind != DefinitionKind::Comparative) => {
            return Err(Error::invalid(
                "selected_comparative review needs comparative definitions",
            ))
        }
        (_, Some(d)) => Some(d),
    };
    let run_id = ctx.next_run_id();
    let started_at = ctx.timestamp();
    let vocab = &corpus.vocabulary;
    let tables: Vec<&TableDoc> = corpus.split(prior.split).collect();
    let reviewed = parallel_map(&tables, ctx.workers, |table| {
        let prior_preds = prior.table_predictions(&table.table_id);
        let selected;
        let table_defs = match scenario {
            Scenario::Plain => None,
            Scenario::DemoDefs => defs,
            Scenario::SelectedComparative => {
                selected = select_comparative_for_prediction(prior_preds, defs.unwrap_or_default());
                Some(selected.as_slice())
            }
        };
        let messages = build_review_prompt(table, prior_preds, vocab, table_defs, opts);
        let expected = table.annotated_columns();
        let completion = match backend.complete(&messages, 0.0) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("review of {}: {e}", table.table_id);
                return Reviewed {
                    predictions: prior_preds.to_vec(),
                    raw: None,
                    usage: None,
                    flags: vec!["reviewer-failed".into()],
                };
            }
        };
        let usage = UsageEntry {
            phase: Phase::Inference,
            input_tokens: completion.usage.input_tokens,
            output_tokens: completion.usage.output_tokens,
            model_id: completion.model_id.clone(),
            estimated: completion.usage.estimated,
            run_id: run_id.clone(),
            tag: Some(format!("review:{}", scenario.as_str())),
        };
        match parse_review_response(&completion.text, vocab, &expected, vocab.multi_label) {
            Err(_) => Reviewed {
                predictions: prior_preds.to_vec(),
                raw: Some(completion.text),
                usage: Some(usage),
                flags: vec!["reviewer-failed".into()],
            },
            Ok(parsed) => {
                let mut flags = Vec::new();
                let mut by_col: BTreeMap<usize, ColumnPrediction> =
                    parsed.predictions.into_iter().map(|p| (p.column_index, p)).collect();
                let mut predictions = Vec::new();
                for col in expected {
                    if let Some(p) = by_col.remove(&col) {
                        predictions.push(p);
                    } else if let Some(p) = prior_preds.iter().find(|p| p.column_index == col) {
                        flags.push(format!("reviewer-kept-prior:{}", column_name(col)));
                        predictions.push(p.clone());
                    }
                }
                Reviewed {
                    predictions,
                    raw: Some(completion.text),
                    usage: Some(usage),
                    flags,
                }
            }
        }
    });

    let mut strategy = prior.strategy.clone();
    strategy.name = format!("review:{}", scenario.as_str());
    strategy.model_id = backend.model_id().to_string();
    strategy.prior_run = Some(prior.run_id.clone());
    strategy.definitions_kind = defs.and_then(|d| d.first()).map(|d| d.kind);
    strategy.temperatures = vec![0.0];
    let mut run = Run {
        run_id,
        corpus: corpus.name.clone(),
        split: prior.split,
        strategy,
        predictions: BTreeMap::new(),
        raw_responses: BTreeMap::new(),
        usage: Vec::new(),
        failures: BTreeMap::new(),
        flags: BTreeMap::new(),
        started_at,
        finished_at: String::new(),
    };
    for (table, r) in tables.iter().zip(reviewed) {
        let id = table.table_id.clone();
        if !r.predictions.is_empty() {
            run.predictions.insert(id.clone(), r.predictions);
        }
        if let Some(raw) = r.raw {
            run.raw_responses.insert(id.clone(), raw);
        }
        run.usage.extend(r.usage);
        if !r.flags.is_empty() {
            run.flags.entry(id.clone()).or_default().extend(r.flags);
        }
        if let Some(f) = prior.failures.get(&id) {
            if !run.predictions.contains_key(&id) {
                run.failures.insert(id, format!("prior: {f}"));
            }
        }
    }
    run.finished_at = ctx.timestamp();
    Ok(run)
}
