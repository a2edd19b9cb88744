//! Label definitions: initial, demonstration-based, error-based comparative
//! and refined, plus the validation error digests that drive the last two.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ColumnRef, Corpus, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::gateway::{ChatBackend, ChatMessage};
use crate::ledger::{Phase, UsageEntry};
use crate::prompts::{build_task_description, render, templates, PromptVariant};
use crate::runner::{parallel_map, Run};
use crate::serializer::{column_excerpt, SerializationOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefinitionKind {
    Initial,
    Demonstration,
    Comparative,
    Refined,
}

impl DefinitionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DefinitionKind::Initial => "initial",
            DefinitionKind::Demonstration => "demonstration",
            DefinitionKind::Comparative => "comparative",
            DefinitionKind::Refined => "refined",
        }
    }
}

impl fmt::Display for DefinitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DefinitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(Self::Initial),
            "demonstration" => Ok(Self::Demonstration),
            "comparative" => Ok(Self::Comparative),
            "refined" => Ok(Self::Refined),
            other => Err(Error::invalid(format!("unknown definition kind \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_run: Option<String>,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Definition {
    pub label: String,
    pub kind: DefinitionKind,
    pub text: String,
    #[serde(flatten)]
    pub provenance: Provenance,
}

pub fn definitions_path(dir: &Path, kind: DefinitionKind) -> PathBuf {
    dir.join(format!("definitions-{kind}.jsonl"))
}

pub fn save_definitions(defs: &[Definition], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = Vec::new();
    for d in defs {
        serde_json::to_writer(&mut out, d).expect("definition serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_definitions(path: impl AsRef<Path>) -> Result<Vec<Definition>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let d: Definition = serde_json::from_str(l).map_err(|e| Error::Corrupt {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })?;
            if d.text.trim().is_empty() {
                return Err(Error::Corrupt {
                    path: path.to_path_buf(),
                    message: format!("line {}: empty definition for {}", i + 1, d.label),
                });
            }
            Ok(d)
        })
        .collect()
}

/// Settings shared by all generation calls.
#[derive(Debug, Clone)]
pub struct GenerationConfig {
    /// Run id the generation usage is booked under.
    pub run_id: String,
    pub n_demos: usize,
    pub seed: u64,
    pub serialization: SerializationOptions,
    pub temperature: f64,
    pub workers: usize,
}

impl GenerationConfig {
    pub fn new(run_id: impl Into<String>, seed: u64) -> Self {
        Self {
            run_id: run_id.into(),
            n_demos: 3,
            seed,
            serialization: SerializationOptions::default(),
            temperature: 0.0,
            workers: 4,
        }
    }
}

/// Definitions plus everything that went wrong while producing them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationOutcome {
    pub definitions: Vec<Definition>,
    /// label -> error message
    pub failures: BTreeMap<String, String>,
    /// label -> note, e.g. `n_used=2` or `no-train-columns`
    pub flags: BTreeMap<String, String>,
    pub usage: Vec<UsageEntry>,
}

struct Job {
    label: String,
    user: String,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seeded sample of up to `n` annotated train columns carrying `label`.
pub fn sample_label_columns<'a>(corpus: &'a Corpus, label: &str, n: usize, seed: u64) -> Vec<ColumnRef<'a>> {
    let mut cols = corpus.columns_with_label(Split::Train, label);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label));
    cols.shuffle(&mut rng);
    cols.truncate(n);
    cols
}

/// `v1 | v2 | v3` for the first rows of a column.
pub fn excerpt_line(corpus: &Corpus, r: &ColumnRef<'_>, opts: &SerializationOptions) -> String {
    corpus
        .table(r.table_id)
        .map(|t| column_excerpt(t, r.column, opts).join(" | "))
        .unwrap_or_default()
}

fn example_lines(corpus: &Corpus, refs: &[ColumnRef<'_>], opts: &SerializationOptions) -> String {
    if refs.is_empty() {
        return "none".to_string();
    }
    refs.iter()
        .map(|r| format!("- {}", excerpt_line(corpus, r, opts)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn run_jobs(
    jobs: Vec<Job>,
    vocab: &Vocabulary,
    backend: &dyn ChatBackend,
    cfg: &GenerationConfig,
    kind: DefinitionKind,
    round: u32,
    source_run: Option<&str>,
) -> GenerationOutcome {
    let system = build_task_description(vocab, &PromptVariant::zero_shot());
    let results = parallel_map(&jobs, cfg.workers, |job| {
        let messages = [ChatMessage::system(system.clone()), ChatMessage::user(job.user.clone())];
        backend.complete(&messages, cfg.temperature)
    });
    let mut out = GenerationOutcome::default();
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok(c) => {
                out.usage.push(UsageEntry {
                    phase: Phase::Generation,
                    input_tokens: c.usage.input_tokens,
                    output_tokens: c.usage.output_tokens,
                    model_id: c.model_id.clone(),
                    estimated: c.usage.estimated,
                    run_id: cfg.run_id.clone(),
                    tag: Some(format!("definitions-{kind}")),
                });
                let text = c.text.trim();
                if text.is_empty() {
                    out.failures.insert(job.label.clone(), "empty definition".into());
                    continue;
                }
                out.definitions.push(Definition {
                    label: job.label.clone(),
                    kind,
                    text: text.to_string(),
                    provenance: Provenance {
                        generator_model: c.model_id,
                        source_run: source_run.map(str::to_string),
                        round,
                    },
                });
            }
            Err(e) => {
                log::warn!("definition for {}: {e}", job.label);
                out.failures.insert(job.label.clone(), e.to_string());
            }
        }
    }
    out
}

fn initial_request(label: &str) -> String {
    render(templates::DEFINITION_INITIAL, &[("label", label)])
}

/// One definition per label from the label name alone.
pub fn generate_initial(vocab: &Vocabulary, backend: &dyn ChatBackend, cfg: &GenerationConfig) -> GenerationOutcome {
    let jobs = vocab
        .labels
        .iter()
        .map(|l| Job {
            label: l.clone(),
            user: initial_request(l),
        })
        .collect();
    run_jobs(jobs, vocab, backend, cfg, DefinitionKind::Initial, 0, None)
}

/// One definition per label from `n_demos` seeded sample columns. Labels
/// without train columns fall back to the initial request and are flagged.
pub fn generate_demonstration(corpus: &Corpus, backend: &dyn ChatBackend, cfg: &GenerationConfig) -> GenerationOutcome {
    let mut flags = BTreeMap::new();
    let jobs = corpus
        .vocabulary
        .labels
        .iter()
        .map(|l| {
            let sample = sample_label_columns(corpus, l, cfg.n_demos, cfg.seed);
            let user = if sample.is_empty() {
                flags.insert(l.clone(), "no-train-columns".to_string());
                initial_request(l)
            } else {
                if sample.len() < cfg.n_demos {
                    flags.insert(l.clone(), format!("n_used={}", sample.len()));
                }
                render(
                    templates::DEFINITION_DEMONSTRATION,
                    &[
                        ("count", &sample.len().to_string()),
                        ("label", l),
                        ("examples", &example_lines(corpus, &sample, &cfg.serialization)),
                    ],
                )
            };
            Job { label: l.clone(), user }
        })
        .collect();
    let mut out = run_jobs(
        jobs,
        &corpus.vocabulary,
        backend,
        cfg,
        DefinitionKind::Demonstration,
        0,
        None,
    );
    out.flags = flags;
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorExample {
    pub table_id: String,
    pub column: usize,
    pub excerpt: Vec<String>,
    /// For a false positive the gold labels, for a false negative the
    /// predicted labels (empty when the column went unanswered).
    pub counterpart: Vec<String>,
}

/// Misclassifications of one label on a validation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDigest {
    pub label: String,
    pub false_positives: Vec<ErrorExample>,
    pub false_negatives: Vec<ErrorExample>,
    pub confused_with: BTreeSet<String>,
}

impl ErrorDigest {
    pub fn is_empty(&self) -> bool {
        self.false_positives.is_empty() && self.false_negatives.is_empty()
    }
}

/// One digest per vocabulary label, in vocabulary order.
pub fn collect_errors(run: &Run, corpus: &Corpus, opts: &SerializationOptions) -> Vec<ErrorDigest> {
    let vocab = &corpus.vocabulary;
    let mut digests: BTreeMap<&str, ErrorDigest> = vocab
        .labels
        .iter()
        .map(|l| {
            (
                l.as_str(),
                ErrorDigest {
                    label: l.clone(),
                    ..Default::default()
                },
            )
        })
        .collect();
    for table in corpus.split(run.split) {
        for col in table.annotated_columns() {
            let gold = &table.gold[&col];
            let predicted: BTreeSet<String> = run
                .prediction(&table.table_id, col)
                .map(|p| p.labels.iter().cloned().collect())
                .unwrap_or_default();
            if &predicted == gold {
                continue;
            }
            let example = |counterpart: Vec<String>| ErrorExample {
                table_id: table.table_id.clone(),
                column: col,
                excerpt: column_excerpt(table, col, opts),
                counterpart,
            };
            let wrong: Vec<String> = predicted.difference(gold).cloned().collect();
            let missed: Vec<String> = gold.difference(&predicted).cloned().collect();
            for l in &missed {
                if let Some(d) = digests.get_mut(l.as_str()) {
                    d.false_negatives.push(example(wrong.clone()));
                    d.confused_with.extend(wrong.iter().cloned());
                }
            }
            for l in &wrong {
                if let Some(d) = digests.get_mut(l.as_str()) {
                    d.false_positives.push(example(missed.clone()));
                    d.confused_with.extend(missed.iter().cloned());
                }
            }
        }
    }
    vocab
        .labels
        .iter()
        .map(|l| digests.remove(l.as_str()).expect("digest per label"))
        .collect()
}

fn fp_lines(d: &ErrorDigest) -> String {
    if d.false_positives.is_empty() {
        return "none".into();
    }
    d.false_positives
        .iter()
        .map(|e| {
            format!(
                "- {} (correct label: {})",
                e.excerpt.join(" | "),
                e.counterpart.join(", ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn fn_lines(d: &ErrorDigest) -> String {
    if d.false_negatives.is_empty() {
        return "none".into();
    }
    d.false_negatives
        .iter()
        .map(|e| {
            let given = if e.counterpart.is_empty() {
                "no answer".to_string()
            } else {
                e.counterpart.join(", ")
            };
            format!("- {} (annotated as: {given})", e.excerpt.join(" | "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn confused_list(d: &ErrorDigest) -> String {
    if d.confused_with.is_empty() {
        "none".into()
    } else {
        d.confused_with.iter().cloned().collect::<Vec<_>>().join(", ")
    }
}

/// Tips for each label that had validation errors. Error-free labels get
/// nothing; callers fall back to the demonstration definition.
pub fn generate_comparative(
    errors: &[ErrorDigest],
    corpus: &Corpus,
    backend: &dyn ChatBackend,
    cfg: &GenerationConfig,
    source_run: &str,
) -> GenerationOutcome {
    let jobs = errors
        .iter()
        .filter(|d| !d.is_empty())
        .map(|d| {
            let sample = sample_label_columns(corpus, &d.label, cfg.n_demos, cfg.seed);
            Job {
                label: d.label.clone(),
                user: render(
                    templates::DEFINITION_COMPARATIVE,
                    &[
                        ("label", &d.label),
                        ("confused", &confused_list(d)),
                        ("false_positives", &fp_lines(d)),
                        ("false_negatives", &fn_lines(d)),
                        ("examples", &example_lines(corpus, &sample, &cfg.serialization)),
                    ],
                ),
            }
        })
        .collect();
    run_jobs(
        jobs,
        &corpus.vocabulary,
        backend,
        cfg,
        DefinitionKind::Comparative,
        0,
        Some(source_run),
    )
}

/// The refinement request for one label.
pub fn refinement_request(def: &Definition, digest: &ErrorDigest, corpus: &Corpus, cfg: &GenerationConfig) -> String {
    let sample = sample_label_columns(corpus, &def.label, cfg.n_demos, cfg.seed);
    render(
        templates::DEFINITION_REFINE,
        &[
            ("label", &def.label),
            ("definition", &def.text),
            ("false_positives", &fp_lines(digest)),
            ("false_negatives", &fn_lines(digest)),
            ("examples", &example_lines(corpus, &sample, &cfg.serialization)),
        ],
    )
}

/// One refinement pass. Labels with errors are rewritten by the model;
/// the others keep their text and are re-tagged as refined for `round`.
/// A label whose call fails keeps its input definition unchanged.
pub fn refine_once(
    defs: &[Definition],
    errors: &[ErrorDigest],
    corpus: &Corpus,
    backend: &dyn ChatBackend,
    cfg: &GenerationConfig,
    round: u32,
    source_run: &str,
) -> GenerationOutcome {
    let by_label: BTreeMap<&str, &ErrorDigest> = errors.iter().map(|d| (d.label.as_str(), d)).collect();
    let jobs: Vec<Job> = defs
        .iter()
        .filter_map(|d| {
            let digest = by_label.get(d.label.as_str()).filter(|g| !g.is_empty())?;
            Some(Job {
                label: d.label.clone(),
                user: refinement_request(d, digest, corpus, cfg),
            })
        })
        .collect();
    let mut generated = run_jobs(
        jobs,
        &corpus.vocabulary,
        backend,
        cfg,
        DefinitionKind::Refined,
        round,
        Some(source_run),
    );
    let mut fresh: BTreeMap<String, Definition> =
        generated.definitions.drain(..).map(|d| (d.label.clone(), d)).collect();
    generated.definitions = defs
        .iter()
        .map(|d| {
            if let Some(new) = fresh.remove(&d.label) {
                new
            } else if generated.failures.contains_key(&d.label) {
                d.clone()
            } else {
                Definition {
                    kind: DefinitionKind::Refined,
                    provenance: Provenance {
                        source_run: Some(source_run.to_string()),
                        round,
                        ..d.provenance.clone()
                    },
                    ..d.clone()
                }
            }
        })
        .collect();
    generated
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: u32,
    pub validation_run: String,
    pub errorful_labels: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefineOutcome {
    pub definitions: Vec<Definition>,
    pub rounds: Vec<RoundSummary>,
    pub failures: BTreeMap<String, String>,
    /// Refinement calls only; validation runs carry their own usage.
    pub usage: Vec<UsageEntry>,
}

/// Classify, collect errors and refine, `rounds` times. `classify` annotates
/// the validation split with the given definitions and must finish before
/// the next round starts.
pub fn refine(
    defs: &[Definition],
    corpus: &Corpus,
    backend: &dyn ChatBackend,
    cfg: &GenerationConfig,
    rounds: u32,
    mut classify: impl FnMut(&[Definition], u32) -> Result<Run>,
) -> Result<RefineOutcome> {
    if rounds == 0 {
        return Err(Error::invalid("refinement needs at least one round"));
    }
    let mut out = RefineOutcome {
        definitions: defs.to_vec(),
        ..Default::default()
    };
    for round in 1..=rounds {
        let run = classify(&out.definitions, round)?;
        let errors = collect_errors(&run, corpus, &cfg.serialization);
        let step = refine_once(&out.definitions, &errors, corpus, backend, cfg, round, &run.run_id);
        out.rounds.push(RoundSummary {
            round,
            validation_run: run.run_id.clone(),
            errorful_labels: errors
                .iter()
                .filter(|d| !d.is_empty())
                .map(|d| d.label.clone())
                .collect(),
        });
        out.failures.extend(step.failures);
        out.usage.extend(step.usage);
        out.definitions = step.definitions;
    }
    Ok(out)
}

/// Definitions for the given kind, with missing comparative entries filled
/// in from `fallback`.
pub fn with_fallback(primary: &[Definition], fallback: &[Definition]) -> Vec<Definition> {
    let have: BTreeSet<&str> = primary.iter().map(|d| d.label.as_str()).collect();
    let mut out: Vec<Definition> = primary.to_vec();
    out.extend(fallback.iter().filter(|d| !have.contains(d.label.as_str())).cloned());
    out
}
