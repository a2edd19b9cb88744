//! Annotation runs: one prompt per table, parsed into predictions, persisted
//! under `runs/<run_id>/`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split, TableDoc};
use crate::definitions::{Definition, DefinitionKind};
use crate::error::{Error, Result};
use crate::gateway::ChatBackend;
use crate::ledger::{Phase, UsageEntry};
use crate::prompts::{build_annotation_prompt, parse_annotation_response, ColumnPrediction, PromptVariant, Strategy};
use crate::selector::{embed_definitions, select_definitions_with, DemoIndex, Embedder, HashEmbedder};
use crate::serializer::{column_name, SerializationOptions};

pub const RUN_FORMAT_VERSION: u32 = 1;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Always reports the same instant; used for reproducible artifacts.
pub struct FixedClock(pub DateTime<Utc>);

impl FixedClock {
    pub fn epoch_2025() -> Self {
        Self(Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).single().expect("valid date"))
    }
}

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

/// Clock, run-id source and worker cap shared by everything that creates runs.
pub struct RunContext {
    pub clock: Arc<dyn Clock>,
    ids: Mutex<ChaCha8Rng>,
    pub workers: usize,
}

impl RunContext {
    pub fn new(clock: Arc<dyn Clock>, id_seed: u64, workers: usize) -> Self {
        Self {
            clock,
            ids: Mutex::new(ChaCha8Rng::seed_from_u64(id_seed)),
            workers: workers.max(1),
        }
    }

    /// Wall clock and entropy-seeded ids.
    pub fn live(workers: usize) -> Self {
        Self::new(Arc::new(SystemClock), rand::random(), workers)
    }

    /// Fixed clock and seeded ids: identical inputs give identical run ids.
    pub fn deterministic(seed: u64, workers: usize) -> Self {
        Self::new(Arc::new(FixedClock::epoch_2025()), seed, workers)
    }

    pub fn timestamp(&self) -> String {
        self.clock.now().to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    /// Time-ordered ULID.
    pub fn next_run_id(&self) -> String {
        let ms = self.clock.now().timestamp_millis().max(0) as u64;
        let mut rng = self.ids.lock().expect("id lock poisoned");
        let random = (u128::from(rng.next_u64()) << 64) | u128::from(rng.next_u64());
        ulid::Ulid::from_parts(ms, random).to_string()
    }
}

/// Maps `f` over `items` with at most `workers` threads. Results come back
/// in input order regardless of completion order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock poisoned") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock poisoned").expect("every slot filled"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyDescriptor {
    /// `zero_shot`, `few_shot`, `with_definitions`, `self_consistency` or `review:<scenario>`.
    pub name: String,
    pub include_instructions: bool,
    pub include_hierarchy: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demonstrations_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definitions_kind: Option<DefinitionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definitions_top_k: Option<usize>,
    pub temperatures: Vec<f64>,
    pub model_id: String,
    pub backend_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_run: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub run_id: String,
    pub corpus: String,
    pub split: Split,
    pub strategy: StrategyDescriptor,
    /// Keyed by table id; columns in index order.
    pub predictions: BTreeMap<String, Vec<ColumnPrediction>>,
    pub raw_responses: BTreeMap<String, String>,
    pub usage: Vec<UsageEntry>,
    /// Tables whose call or parse failed, with the reason.
    pub failures: BTreeMap<String, String>,
    /// Per-table markers such as `no-majority:Column 2` or `reviewer-failed`.
    pub flags: BTreeMap<String, BTreeSet<String>>,
    pub started_at: String,
    pub finished_at: String,
}

impl Run {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn table_predictions(&self, table_id: &str) -> &[ColumnPrediction] {
        self.predictions.get(table_id).map_or(&[], Vec::as_slice)
    }

    pub fn prediction(&self, table_id: &str, column: usize) -> Option<&ColumnPrediction> {
        self.table_predictions(table_id)
            .iter()
            .find(|p| p.column_index == column)
    }

    fn flag(&mut self, table_id: &str, flag: impl Into<String>) {
        self.flags.entry(table_id.to_string()).or_default().insert(flag.into());
    }
}

/// How to annotate a split.
#[derive(Clone, Copy)]
pub struct AnnotateConfig<'a> {
    pub strategy: Strategy,
    pub include_instructions: bool,
    pub include_hierarchy: bool,
    /// Number of demonstrations for few-shot prompts.
    pub demonstrations_k: usize,
    pub definitions: Option<&'a [Definition]>,
    /// Keep only the most similar definitions per table.
    pub definitions_top_k: Option<usize>,
    pub embedder: Option<&'a dyn Embedder>,
    pub serialization: SerializationOptions,
    pub temperature: f64,
    pub phase: Phase,
    pub seed: Option<u64>,
    pub backend_digest: &'a str,
}

impl Default for AnnotateConfig<'_> {
    fn default() -> Self {
        Self {
            strategy: Strategy::ZeroShot,
            include_instructions: true,
            include_hierarchy: false,
            demonstrations_k: 5,
            definitions: None,
            definitions_top_k: None,
            embedder: None,
            serialization: SerializationOptions::default(),
            temperature: 0.0,
            phase: Phase::Inference,
            seed: None,
            backend_digest: "",
        }
    }
}

impl AnnotateConfig<'_> {
    fn descriptor(&self, model_id: &str, name: &str, temperatures: Vec<f64>) -> StrategyDescriptor {
        StrategyDescriptor {
            name: name.to_string(),
            include_instructions: self.include_instructions,
            include_hierarchy: self.include_hierarchy,
            demonstrations_k: (self.strategy == Strategy::FewShot).then_some(self.demonstrations_k),
            definitions_kind: self.definitions.and_then(|d| d.first()).map(|d| d.kind),
            definitions_top_k: self.definitions.and(self.definitions_top_k),
            temperatures,
            model_id: model_id.to_string(),
            backend_digest: self.backend_digest.to_string(),
            seed: self.seed,
            prior_run: None,
        }
    }
}

fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::ZeroShot => "zero_shot",
        Strategy::FewShot => "few_shot",
        Strategy::WithDefinitions => "with_definitions",
        Strategy::Reviewer => "review",
    }
}

struct TableOutcome {
    predictions: Option<Vec<ColumnPrediction>>,
    raw: Option<String>,
    usage: Option<UsageEntry>,
    failure: Option<String>,
    warnings: Vec<String>,
}

/// Annotates every table of `split` with one call per table.
pub fn annotate(
    corpus: &Corpus,
    split: Split,
    config: &AnnotateConfig<'_>,
    backend: &dyn ChatBackend,
    ctx: &RunContext,
) -> Result<Run> {
    let run_id = ctx.next_run_id();
    let tag = None;
    annotate_with_id(corpus, split, config, backend, ctx, run_id, tag)
}

fn annotate_with_id(
    corpus: &Corpus,
    split: Split,
    config: &AnnotateConfig<'_>,
    backend: &dyn ChatBackend,
    ctx: &RunContext,
    run_id: String,
    tag: Option<String>,
) -> Result<Run> {
    if config.strategy == Strategy::Reviewer {
        return Err(Error::invalid("use reviewer::self_correct for review runs"));
    }
    if config.strategy == Strategy::WithDefinitions && config.definitions.is_none() {
        return Err(Error::invalid("with_definitions needs a definition set"));
    }
    if config.strategy == Strategy::FewShot && config.demonstrations_k == 0 {
        return Err(Error::invalid("few_shot needs k >= 1"));
    }
    let fallback = HashEmbedder::default();
    let embedder: &dyn Embedder = config.embedder.unwrap_or(&fallback);
    let index = match config.strategy {
        Strategy::FewShot => {
            if corpus.split_len(Split::Train) == 0 {
                return Err(Error::invalid("few_shot needs a non-empty train split"));
            }
            Some(DemoIndex::build(corpus, Split::Train, embedder, &config.serialization)?)
        }
        _ => None,
    };
    let def_vectors = match (config.definitions, config.definitions_top_k) {
        (Some(defs), Some(_)) => Some(embed_definitions(defs, embedder)?),
        _ => None,
    };

    let started_at = ctx.timestamp();
    let tables: Vec<&TableDoc> = corpus.split(split).collect();
    let vocab = &corpus.vocabulary;
    let outcomes = parallel_map(&tables, ctx.workers, |table| -> Result<TableOutcome> {
        let demos: Vec<&TableDoc> = match &index {
            Some(ix) => ix
                .select(table, embedder, config.demonstrations_k)?
                .into_iter()
                .filter_map(|(id, _)| corpus.table(&id))
                .collect(),
            None => Vec::new(),
        };
        let selected_defs: Option<Vec<Definition>> = match (config.definitions, config.definitions_top_k, &def_vectors)
        {
            (Some(defs), Some(k), Some(vectors)) => Some(select_definitions_with(
                table,
                defs,
                vectors,
                embedder,
                k,
                &config.serialization,
            )?),
            (Some(defs), _, _) => Some(defs.to_vec()),
            _ => None,
        };
        let variant = PromptVariant {
            strategy: config.strategy,
            include_instructions: config.include_instructions,
            include_hierarchy: config.include_hierarchy,
            definitions: selected_defs.as_deref(),
            demonstrations: (!demos.is_empty()).then_some(demos.as_slice()),
        };
        variant.validate()?;
        let messages = build_annotation_prompt(table, vocab, &variant, &config.serialization);
        Ok(match backend.complete(&messages, config.temperature) {
            Err(e) => TableOutcome {
                predictions: None,
                raw: None,
                usage: None,
                failure: Some(e.to_string()),
                warnings: Vec::new(),
            },
            Ok(c) => {
                let usage = UsageEntry {
                    phase: config.phase,
                    input_tokens: c.usage.input_tokens,
                    output_tokens: c.usage.output_tokens,
                    model_id: c.model_id.clone(),
                    estimated: c.usage.estimated,
                    run_id: run_id.clone(),
                    tag: tag.clone(),
                };
                let expected = table.annotated_columns();
                match parse_annotation_response(&c.text, vocab, &expected, vocab.multi_label) {
                    Ok(parsed) => TableOutcome {
                        predictions: Some(parsed.predictions),
                        raw: Some(c.text),
                        usage: Some(usage),
                        failure: None,
                        warnings: parsed
                            .column_errors
                            .keys()
                            .map(|c| format!("format-error:{}", column_name(*c)))
                            .collect(),
                    },
                    Err(e) => TableOutcome {
                        predictions: None,
                        raw: Some(c.text),
                        usage: Some(usage),
                        failure: Some(e.to_string()),
                        warnings: Vec::new(),
                    },
                }
            }
        })
    });

    let mut run = Run {
        run_id: run_id.clone(),
        corpus: corpus.name.clone(),
        split,
        strategy: config.descriptor(
            backend.model_id(),
            strategy_name(config.strategy),
            vec![config.temperature],
        ),
        predictions: BTreeMap::new(),
        raw_responses: BTreeMap::new(),
        usage: Vec::new(),
        failures: BTreeMap::new(),
        flags: BTreeMap::new(),
        started_at,
        finished_at: String::new(),
    };
    for (table, outcome) in tables.iter().zip(outcomes) {
        let outcome = outcome?;
        let id = &table.table_id;
        if let Some(p) = outcome.predictions {
            run.predictions.insert(id.clone(), p);
        }
        if let Some(raw) = outcome.raw {
            run.raw_responses.insert(id.clone(), raw);
        }
        run.usage.extend(outcome.usage);
        if let Some(f) = outcome.failure {
            log::warn!("table {id}: {f}");
            run.failures.insert(id.clone(), f);
        }
        for w in outcome.warnings {
            run.flag(id, w);
        }
    }
    run.finished_at = ctx.timestamp();
    Ok(run)
}

/// Outcome of a vote over one column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    pub labels: Vec<String>,
    pub no_majority: bool,
}

/// Votes over the answers of several runs for one column. `answers` is
/// ordered by ascending temperature; `None` means the run gave no answer.
///
/// Single-label: the label given by at least two runs wins (the most votes
/// if several qualify, ties going to the lower-temperature run's label, then
/// lexical order). Multi-label: every label present in at least two runs'
/// sets is kept. Without a majority the lowest-temperature answer stands.
pub fn majority_vote(answers: &[Option<Vec<String>>], multi_label: bool) -> Option<Vote> {
    let fallback = || {
        answers.iter().flatten().next().map(|labels| Vote {
            labels: if multi_label {
                labels.clone()
            } else {
                labels.iter().take(1).cloned().collect()
            },
            no_majority: true,
        })
    };
    if multi_label {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for labels in answers.iter().flatten() {
            for l in labels.iter().collect::<BTreeSet<_>>() {
                *counts.entry(l).or_insert(0) += 1;
            }
        }
        let kept: Vec<String> = counts
            .into_iter()
            .filter(|(_, n)| *n >= 2)
            .map(|(l, _)| l.to_string())
            .collect();
        return if kept.is_empty() {
            fallback()
        } else {
            Some(Vote {
                labels: kept,
                no_majority: false,
            })
        };
    }
    let firsts: Vec<&str> = answers
        .iter()
        .flatten()
        .filter_map(|l| l.first())
        .map(String::as_str)
        .collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &firsts {
        *counts.entry(l).or_insert(0) += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    if best < 2 {
        return fallback();
    }
    let winner = firsts
        .iter()
        .find(|l| counts[*l] == best)
        .expect("a label reached the maximum");
    Some(Vote {
        labels: vec![winner.to_string()],
        no_majority: false,
    })
}

/// Annotates once per temperature and votes per column.
pub fn annotate_self_consistency(
    corpus: &Corpus,
    split: Split,
    config: &AnnotateConfig<'_>,
    backend: &dyn ChatBackend,
    ctx: &RunContext,
    temperatures: &[f64],
) -> Result<Run> {
    if temperatures.len() < 2 {
        return Err(Error::invalid("self-consistency needs at least two temperatures"));
    }
    let mut temps = temperatures.to_vec();
    temps.sort_by(f64::total_cmp);
    let run_id = ctx.next_run_id();
    let started_at = ctx.timestamp();
    let runs = temps
        .iter()
        .map(|&t| {
            let cfg = AnnotateConfig {
                temperature: t,
                ..*config
            };
            annotate_with_id(
                corpus,
                split,
                &cfg,
                backend,
                ctx,
                run_id.clone(),
                Some(format!("temperature={t}")),
            )
        })
        .collect::<Result<Vec<Run>>>()?;

    let vocab = &corpus.vocabulary;
    let mut out = Run {
        run_id,
        corpus: corpus.name.clone(),
        split,
        strategy: config.descriptor(backend.model_id(), "self_consistency", temps.clone()),
        predictions: BTreeMap::new(),
        raw_responses: BTreeMap::new(),
        usage: runs.iter().flat_map(|r| r.usage.iter().cloned()).collect(),
        failures: BTreeMap::new(),
        flags: BTreeMap::new(),
        started_at,
        finished_at: String::new(),
    };
    for table in corpus.split(split) {
        let id = &table.table_id;
        let mut preds = Vec::new();
        for col in table.annotated_columns() {
            let answers: Vec<Option<Vec<String>>> = runs
                .iter()
                .map(|r| r.prediction(id, col).map(|p| p.labels.clone()))
                .collect();
            if let Some(vote) = majority_vote(&answers, vocab.multi_label) {
                if vote.no_majority {
                    out.flag(id, format!("no-majority:{}", column_name(col)));
                }
                preds.push(ColumnPrediction::new(col, vote.labels, vocab));
            }
        }
        let failures: Vec<String> = runs
            .iter()
            .zip(&temps)
            .filter_map(|(r, t)| r.failures.get(id).map(|f| format!("temperature={t}: {f}")))
            .collect();
        if failures.len() == runs.len() {
            out.failures.insert(id.clone(), failures.join("; "));
        } else if !failures.is_empty() {
            out.flag(id, "partial-votes");
        }
        for r in &runs {
            for f in r.flags.get(id).into_iter().flatten() {
                out.flag(id, f.clone());
            }
        }
        let raw: BTreeMap<String, &String> = runs
            .iter()
            .zip(&temps)
            .filter_map(|(r, t)| r.raw_responses.get(id).map(|text| (t.to_string(), text)))
            .collect();
        if !raw.is_empty() {
            out.raw_responses
                .insert(id.clone(), serde_json::to_string(&raw).expect("map serializes"));
        }
        if !preds.is_empty() {
            out.predictions.insert(id.clone(), preds);
        }
    }
    out.finished_at = ctx.timestamp();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    run_id: String,
    corpus: String,
    split: Split,
    strategy: StrategyDescriptor,
    started_at: String,
    finished_at: String,
    failures: BTreeMap<String, String>,
    flags: BTreeMap<String, BTreeSet<String>>,
    counts: Counts,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
struct Counts {
    predictions: usize,
    responses: usize,
    usage: usize,
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    table_id: String,
    columns: Vec<ColumnPrediction>,
}

#[derive(Serialize, Deserialize)]
struct ResponseLine {
    table_id: String,
    response: String,
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).expect("record serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            message: "last line is incomplete".into(),
        });
    }
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Corrupt {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

pub fn run_dir(workdir: &Path, run_id: &str) -> PathBuf {
    workdir.join("runs").join(run_id)
}

/// Writes `run` to `runs/<run_id>/` under `workdir` and returns that directory.
pub fn save_run(run: &Run, workdir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = run_dir(workdir.as_ref(), &run.run_id);
    save_run_to(run, &dir)?;
    Ok(dir)
}

pub fn save_run_to(run: &Run, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format_version: RUN_FORMAT_VERSION,
        run_id: run.run_id.clone(),
        corpus: run.corpus.clone(),
        split: run.split,
        strategy: run.strategy.clone(),
        started_at: run.started_at.clone(),
        finished_at: run.finished_at.clone(),
        failures: run.failures.clone(),
        flags: run.flags.clone(),
        counts: Counts {
            predictions: run.predictions.len(),
            responses: run.raw_responses.len(),
            usage: run.usage.len(),
        },
    };
    write_jsonl(
        &dir.join("predictions.jsonl"),
        run.predictions.iter().map(|(id, cols)| PredictionLine {
            table_id: id.clone(),
            columns: cols.clone(),
        }),
    )?;
    write_jsonl(
        &dir.join("responses.jsonl"),
        run.raw_responses.iter().map(|(id, r)| ResponseLine {
            table_id: id.clone(),
            response: r.clone(),
        }),
    )?;
    write_jsonl(&dir.join("usage.jsonl"), &run.usage)?;
    crate::corpus::write_json_pretty(&dir.join("manifest.json"), &manifest)
}

/// Reads a run directory written by [`save_run`].
pub fn load_run(dir: impl AsRef<Path>) -> Result<Run> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let version = raw["format_version"].as_u64().unwrap_or(0) as u32;
    if version != RUN_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: manifest_path,
            found: version,
            expected: RUN_FORMAT_VERSION,
        });
    }
    let m: Manifest = serde_json::from_value(raw).map_err(|e| Error::Corrupt {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    let predictions: Vec<PredictionLine> = read_jsonl(&dir.join("predictions.jsonl"))?;
    let responses: Vec<ResponseLine> = read_jsonl(&dir.join("responses.jsonl"))?;
    let usage: Vec<UsageEntry> = read_jsonl(&dir.join("usage.jsonl"))?;
    let counts = Counts {
        predictions: predictions.len(),
        responses: responses.len(),
        usage: usage.len(),
    };
    if counts != m.counts {
        return Err(Error::Corrupt {
            path: dir.to_path_buf(),
            message: format!("record counts {counts:?} differ from manifest {:?}", m.counts),
        });
    }
    Ok(Run {
        run_id: m.run_id,
        corpus: m.corpus,
        split: m.split,
        strategy: m.strategy,
        predictions: predictions.into_iter().map(|p| (p.table_id, p.columns)).collect(),
        raw_responses: responses.into_iter().map(|r| (r.table_id, r.response)).collect(),
        usage,
        failures: m.failures,
        flags: m.flags,
        started_at: m.started_at,
        finished_at: m.finished_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(labels: &[&str]) -> Option<Vec<String>> {
        Some(labels.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn vote_cases() {
        assert_eq!(
            majority_vote(&[v(&["D"]), v(&["D"]), v(&["D"])], false).unwrap().labels,
            ["D"]
        );
        let ab = majority_vote(&[v(&["A"]), v(&["A"]), v(&["B"])], false).unwrap();
        assert_eq!((ab.labels.as_slice(), ab.no_majority), (&["A".to_string()][..], false));
        let none = majority_vote(&[v(&["A"]), v(&["B"]), v(&["C"])], false).unwrap();
        assert_eq!(
            (none.labels.as_slice(), none.no_majority),
            (&["A".to_string()][..], true)
        );
        assert_eq!(
            majority_vote(&[None, v(&["B"]), v(&["B"])], false).unwrap().labels,
            ["B"]
        );
        assert_eq!(majority_vote(&[None, None], false), None);
    }

    #[test]
    fn multi_label_vote() {
        let r = majority_vote(&[v(&["A", "B"]), v(&["A"]), v(&["B", "C"])], true).unwrap();
        assert_eq!(r.labels, ["A", "B"]);
        let r = majority_vote(&[v(&["A"]), v(&["B"]), v(&["C"])], true).unwrap();
        assert!(r.no_majority);
        assert_eq!(r.labels, ["A"]);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..100).collect();
        let out = parallel_map(&items, 8, |x| {
            std::thread::sleep(std::time::Duration::from_micros(100 - x));
            x * 2
        });
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn run_ids_deterministic_and_ordered() {
        let a = RunContext::deterministic(7, 1);
        let b = RunContext::deterministic(7, 1);
        let (x, y) = (a.next_run_id(), a.next_run_id());
        assert_eq!(x, b.next_run_id());
        assert_ne!(x, y);
        assert_eq!(x.len(), 26);
        let live = RunContext::live(1);
        assert!(live.next_run_id() > x);
    }
}
