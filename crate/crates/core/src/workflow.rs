//! The full pipeline (downsample, definition generation, refinement,
//! annotation, review, scoring, costing) and an offline oracle backend.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::corpus::{downsample, save_corpus, Corpus, Split, TableDoc};
use crate::definitions::{
    collect_errors, definitions_path, generate_comparative, generate_demonstration, refine, save_definitions,
    GenerationConfig,
};
use crate::error::{Error, Result};
use crate::gateway::{ChatBackend, GatewayError, MockBackend, MockRequest};
use crate::ledger::{cost_per_column, total_cost, write_usage, CostBreakdown, Dollars, Phase, PriceSheet, UsageEntry};
use crate::metrics::{score, MetricsReport};
use crate::prompts::{render_gold_answer, render_labelled_explanations, PromptKind, Strategy};
use crate::reviewer::{self_correct, Scenario};
use crate::runner::{annotate, save_run, AnnotateConfig, Run, RunContext};
use crate::serializer::{serialize_table, SerializationOptions};

/// Deterministic stand-in for a chat model that knows the gold labels.
///
/// Annotation answers are gold except for a pseudo-random share of columns
/// (`error_percent`), which get the next label in vocabulary order. Reviews
/// always answer gold. Definition requests get template text built from
/// the prompt, and refinement appends a sentence to the current definition.
pub struct Oracle {
    tables: HashMap<String, TableDoc>,
    labels: Vec<String>,
    multi_label: bool,
    error_percent: u64,
}

fn fnv1a(parts: &[&str]) -> u64 {
    parts.iter().fold(0xcbf2_9ce4_8422_2325, |mut h, p| {
        for b in p.bytes().chain([0u8]) {
            h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    })
}

fn first_quoted(text: &str) -> Option<&str> {
    let start = text.find('"')? + 1;
    let len = text[start..].find('"')?;
    Some(&text[start..start + len])
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let len = text[start..].find(close)?;
    Some(&text[start..start + len])
}

impl Oracle {
    pub fn new(corpus: &Corpus, opts: &SerializationOptions, error_percent: u64) -> Self {
        Self {
            tables: corpus
                .tables
                .iter()
                .map(|t| (serialize_table(t, opts), t.clone()))
                .collect(),
            labels: corpus.vocabulary.labels.clone(),
            multi_label: corpus.vocabulary.multi_label,
            error_percent: error_percent.min(100),
        }
    }

    fn table(&self, serialized: &str) -> Result<&TableDoc, GatewayError> {
        self.tables
            .get(serialized)
            .ok_or_else(|| GatewayError::Mock("oracle: table not in corpus".into()))
    }

    fn wrong(&self, gold: &str) -> String {
        let i = self.labels.iter().position(|l| l == gold).unwrap_or(0);
        self.labels[(i + 1) % self.labels.len()].clone()
    }

    fn annotation(&self, table: &TableDoc, temperature: f64) -> String {
        let mut t = table.clone();
        let temp = if temperature == 0.0 {
            String::new()
        } else {
            temperature.to_string()
        };
        for col in table.annotated_columns() {
            let h = fnv1a(&[&table.table_id, &col.to_string(), &temp]);
            if h % 100 < self.error_percent {
                let gold = t.gold[&col].iter().next().cloned().unwrap_or_default();
                t.gold.insert(col, [self.wrong(&gold)].into());
            }
        }
        render_gold_answer(&t, self.multi_label)
    }

    pub fn respond(&self, req: &MockRequest<'_>) -> Result<String, GatewayError> {
        let user = req.last_user();
        match PromptKind::detect(req.messages) {
            PromptKind::Annotation => {
                let serialized = user
                    .rsplit_once("of the following table:\n")
                    .map(|(_, t)| t)
                    .unwrap_or_default();
                Ok(self.annotation(self.table(serialized)?, req.temperature))
            }
            PromptKind::Review => {
                let serialized =
                    between(user, "Input table:\n", "\n\nClassification of the columns").unwrap_or_default();
                let table = self.table(serialized)?;
                let entries: Vec<(usize, String, String)> = table
                    .annotated_columns()
                    .into_iter()
                    .map(|c| {
                        let label = table.gold[&c].iter().next().cloned().unwrap_or_default();
                        (c, label, "the cell values match this label".to_string())
                    })
                    .collect();
                Ok(render_labelled_explanations(&entries))
            }
            PromptKind::InitialDefinition => {
                let label = first_quoted(user).unwrap_or("label");
                Ok(format!(
                    "{label} denotes the {label} of the entity described by the table row."
                ))
            }
            PromptKind::DemonstrationDefinition => {
                let label = first_quoted(user).unwrap_or("label");
                let example = between(user, "\n- ", "\n").unwrap_or("");
                Ok(format!("{label} annotates columns with values such as {example}."))
            }
            PromptKind::ComparativeDefinition => {
                let label = first_quoted(user).unwrap_or("label");
                let confused = between(user, "confused with the following labels: ", ".\n").unwrap_or("");
                Ok(format!(
                    "Use {label} only for its own values; do not confuse it with {confused}."
                ))
            }
            PromptKind::RefineDefinition => {
                let current = between(user, "\":\n", "\n\nColumns that").unwrap_or("");
                Ok(format!(
                    "{current} It is distinct from the labels it was confused with."
                ))
            }
            PromptKind::Unknown => Err(GatewayError::Mock("oracle: unrecognised prompt".into())),
        }
    }
}

/// A mock backend answering through an [`Oracle`].
pub fn oracle_backend(corpus: &Corpus, opts: &SerializationOptions, error_percent: u64) -> MockBackend {
    let oracle = Arc::new(Oracle::new(corpus, opts, error_percent));
    MockBackend::rule(move |req| oracle.respond(req)).with_model_id("mock-oracle")
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub max_columns_per_label: usize,
    pub seed: u64,
    pub refine_rounds: u32,
    pub definitions_top_k: Option<usize>,
    pub scenario: Scenario,
    pub serialization: SerializationOptions,
    pub prices: PriceSheet,
    pub backend_digest: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_columns_per_label: 10,
            seed: 0,
            refine_rounds: 1,
            definitions_top_k: Some(10),
            scenario: Scenario::SelectedComparative,
            serialization: SerializationOptions::default(),
            prices: PriceSheet::gpt4o_2025_01(),
            backend_digest: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub generation_id: String,
    pub validation_runs: Vec<String>,
    pub annotation_run: String,
    pub review_run: String,
    pub annotation_metrics: MetricsReport,
    pub review_metrics: MetricsReport,
    pub costs: CostBreakdown,
    pub inference_cost_per_column: Dollars,
    pub review_cost_per_column: Dollars,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    crate::corpus::write_json_pretty(path, value)
}

/// Runs every stage against `backend`, writing artifacts under `workdir`:
/// the downsampled corpus, definition files and generation usage under
/// `runs/<generation_id>/`, each run directory with a `metrics.json`, and
/// `reports/pipeline.json`.
pub fn run_pipeline(
    corpus: &Corpus,
    backend: &dyn ChatBackend,
    cfg: &PipelineConfig,
    ctx: &RunContext,
    workdir: &Path,
) -> Result<PipelineSummary> {
    let corpus = downsample(corpus, cfg.max_columns_per_label, cfg.seed)?;
    save_corpus(&corpus, workdir.join("corpus-downsampled"))?;

    let generation_id = ctx.next_run_id();
    let gen_dir = workdir.join("runs").join(&generation_id);
    let gen_cfg = GenerationConfig {
        serialization: cfg.serialization,
        workers: ctx.workers,
        ..GenerationConfig::new(&generation_id, cfg.seed)
    };
    let demo = generate_demonstration(&corpus, backend, &gen_cfg);
    if !demo.failures.is_empty() {
        log::warn!("{} demonstration definitions failed", demo.failures.len());
    }
    save_definitions(
        &demo.definitions,
        definitions_path(&gen_dir, crate::DefinitionKind::Demonstration),
    )?;
    let mut generation_usage: Vec<UsageEntry> = demo.usage.clone();

    let mut validation_runs: Vec<Run> = Vec::new();
    fn annotate_cfg<'a>(cfg: &'a PipelineConfig, defs: &'a [crate::Definition]) -> AnnotateConfig<'a> {
        AnnotateConfig {
            strategy: Strategy::WithDefinitions,
            definitions: Some(defs),
            definitions_top_k: cfg.definitions_top_k,
            serialization: cfg.serialization,
            seed: Some(cfg.seed),
            backend_digest: &cfg.backend_digest,
            ..AnnotateConfig::default()
        }
    }
    let refined = refine(
        &demo.definitions,
        &corpus,
        backend,
        &gen_cfg,
        cfg.refine_rounds,
        |defs, _| {
            let run = annotate(
                &corpus,
                Split::Validation,
                &AnnotateConfig {
                    phase: Phase::Generation,
                    ..annotate_cfg(cfg, defs)
                },
                backend,
                ctx,
            )?;
            save_run(&run, workdir)?;
            validation_runs.push(run.clone());
            Ok(run)
        },
    )?;
    generation_usage.extend(refined.usage.iter().cloned());
    save_definitions(
        &refined.definitions,
        definitions_path(&gen_dir, crate::DefinitionKind::Refined),
    )?;

    let first_validation = validation_runs
        .first()
        .ok_or_else(|| Error::invalid("refinement produced no validation run"))?;
    let errors = collect_errors(first_validation, &corpus, &cfg.serialization);
    let comparative = generate_comparative(&errors, &corpus, backend, &gen_cfg, &first_validation.run_id);
    generation_usage.extend(comparative.usage.iter().cloned());
    save_definitions(
        &comparative.definitions,
        definitions_path(&gen_dir, crate::DefinitionKind::Comparative),
    )?;
    write_usage(&gen_dir.join("usage.jsonl"), &generation_usage)?;

    let annotation = annotate(
        &corpus,
        Split::Test,
        &annotate_cfg(cfg, &refined.definitions),
        backend,
        ctx,
    )?;
    let annotation_dir = save_run(&annotation, workdir)?;
    let annotation_metrics = score(&annotation, &corpus)?;
    write_json(&annotation_dir.join("metrics.json"), &annotation_metrics)?;

    let review = self_correct(
        &annotation,
        &corpus,
        backend,
        cfg.scenario,
        match cfg.scenario {
            Scenario::Plain => None,
            Scenario::DemoDefs => Some(&demo.definitions),
            Scenario::SelectedComparative => Some(&comparative.definitions),
        },
        &cfg.serialization,
        ctx,
    )?;
    let review_dir = save_run(&review, workdir)?;
    let review_metrics = score(&review, &corpus)?;
    write_json(&review_dir.join("metrics.json"), &review_metrics)?;

    let all_usage: Vec<&UsageEntry> = generation_usage
        .iter()
        .chain(validation_runs.iter().flat_map(|r| &r.usage))
        .chain(&annotation.usage)
        .chain(&review.usage)
        .collect();
    let n_columns = corpus.annotated_column_count(Split::Test).max(1) as u64;
    let summary = PipelineSummary {
        generation_id,
        validation_runs: validation_runs.iter().map(|r| r.run_id.clone()).collect(),
        annotation_run: annotation.run_id.clone(),
        review_run: review.run_id.clone(),
        annotation_metrics,
        review_metrics,
        costs: total_cost(all_usage.iter().copied(), &cfg.prices),
        inference_cost_per_column: cost_per_column(&annotation.usage, &cfg.prices, n_columns, Phase::Inference)?,
        review_cost_per_column: cost_per_column(&review.usage, &cfg.prices, n_columns, Phase::Inference)?,
    };
    write_json(&workdir.join("reports").join("pipeline.json"), &summary)?;
    Ok(summary)
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot_dir(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) -> Result<()> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::io(dir, e))?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                out.push((p.strip_prefix(root).unwrap_or(&p).to_path_buf(), bytes));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}
