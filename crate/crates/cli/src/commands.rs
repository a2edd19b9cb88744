use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use ctakit::corpus::{downsample, filter_domains, load_corpus, save_corpus};
use ctakit::definitions::{
    collect_errors, definitions_path, generate_comparative, generate_demonstration, generate_initial, load_definitions,
    refine, save_definitions, with_fallback, GenerationConfig, GenerationOutcome,
};
use ctakit::ftexport::{
    build_definitions_set, build_multitask_set, build_simple_set, export_hyperparameter_manifest, export_jsonl,
    ModelClass, SetOptions,
};
use ctakit::gateway::{BackendKind, Cassette, RecordingBackend, ReplayBackend};
use ctakit::ledger::{breakeven_columns, read_usage, reconcile, token_totals, write_usage, Breakeven};
use ctakit::metrics::{diff_runs, errors_over, score};
use ctakit::reviewer::{self_correct, Scenario};
use ctakit::runner::{annotate, annotate_self_consistency, load_run, run_dir, save_run, AnnotateConfig};
use ctakit::workflow::{oracle_backend, run_pipeline, PipelineConfig};
use ctakit::{
    BackendConfig, ChatBackend, Corpus, Definition, DefinitionKind, Dollars, Phase, PriceSheet, Run, RunContext,
    SerializationOptions, Split, Strategy, UsageEntry,
};
use log::{info, warn};

use crate::*;

/// The error chain joined with ": ", skipping causes the message above
/// already spells out.
pub fn error_message(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !parts.last().is_some_and(|p| p.ends_with(&text)) {
            parts.push(text);
        }
    }
    parts.join(": ")
}

/// Short machine-readable name for the failure behind `e`.
pub fn error_kind(e: &anyhow::Error) -> &'static str {
    match e.downcast_ref::<ctakit::Error>() {
        Some(ctakit::Error::Corpus(_)) => "corpus",
        Some(ctakit::Error::Gateway(_)) => "gateway",
        Some(ctakit::Error::Parse(_)) => "parse",
        Some(ctakit::Error::Io { .. }) => "io",
        Some(ctakit::Error::Corrupt { .. }) => "corrupt",
        Some(ctakit::Error::VersionMismatch { .. }) => "version_mismatch",
        Some(ctakit::Error::Embedding(_)) => "embedding",
        Some(ctakit::Error::Invalid(_)) => "invalid",
        None => "usage",
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

struct Session {
    backend: Arc<dyn ChatBackend>,
    digest: String,
    ctx: RunContext,
}

fn corpus_dir(g: &Global) -> PathBuf {
    g.corpus.clone().unwrap_or_else(|| g.workdir.join("corpus"))
}

fn load(g: &Global) -> Result<Corpus> {
    let dir = corpus_dir(g);
    load_corpus(&dir).with_context(|| format!("loading corpus {}", dir.display()))
}

/// Backend, manifest digest and run context. Offline backends get a fixed
/// clock and ids seeded from `--seed`, the subcommand's arguments and the
/// number of runs already in the workdir, so replaying a command sequence
/// into a fresh workdir reproduces every artifact.
fn session(g: &Global, corpus: &Corpus, salt: &str) -> Result<Session> {
    let defaults = BackendConfig::default();
    let base = BackendConfig {
        kind: BackendKind::Http,
        model: g.model.clone().unwrap_or(defaults.model),
        endpoint: g.endpoint.clone(),
        api_key_env: g.api_key_env.clone(),
        temperature: 0.0,
        timeout_secs: g.timeout_secs,
        max_retries: g.max_retries,
        min_interval_ms: g.min_interval_ms,
        cassette: None,
    };
    let inner: Arc<dyn ChatBackend> = match g.backend {
        BackendArg::Http => {
            if std::env::var_os(&g.api_key_env).is_none() {
                warn!("{} is not set; sending requests without an API key", g.api_key_env);
            }
            base.build()?
        }
        BackendArg::Mock => {
            let mock = oracle_backend(corpus, &SerializationOptions::default(), g.mock_error_percent);
            Arc::new(match &g.model {
                Some(m) => mock.with_model_id(m),
                None => mock,
            })
        }
        BackendArg::Replay => {
            let path = g.cassette.as_ref().context("--backend replay needs --cassette")?;
            let cassette = Cassette::load(path)?;
            let model = match &g.model {
                Some(m) => m.clone(),
                None => {
                    let ids = cassette.model_ids();
                    match ids.iter().next() {
                        Some(id) if ids.len() == 1 => id.to_string(),
                        _ => bail!("cassette holds {} model ids; pass --model", ids.len()),
                    }
                }
            };
            Arc::new(ReplayBackend::new(cassette, &model))
        }
    };
    let backend: Arc<dyn ChatBackend> = match &g.record {
        Some(path) => Arc::new(RecordingBackend::create(inner, path)?),
        None => inner,
    };
    let digest = BackendConfig {
        model: backend.model_id().to_string(),
        ..base
    }
    .digest();
    let ctx = match g.backend {
        BackendArg::Http => RunContext::live(g.workers),
        BackendArg::Mock | BackendArg::Replay => {
            let existing = fs::read_dir(g.workdir.join("runs")).map_or(0, |d| d.count());
            RunContext::deterministic(g.seed ^ fnv1a(&format!("{salt}#{existing}")), g.workers)
        }
    };
    Ok(Session { backend, digest, ctx })
}

fn resolve_run(g: &Global, run: &str) -> Result<Run> {
    let direct = Path::new(run);
    let dir = if direct.join("manifest.json").exists() {
        direct.to_path_buf()
    } else {
        run_dir(&g.workdir, run)
    };
    load_run(&dir).with_context(|| format!("loading run {run}"))
}

fn defs_dir(g: &Global) -> PathBuf {
    g.workdir.join("definitions")
}

fn read_defs(path: &Path) -> Result<Vec<Definition>> {
    load_definitions(path).with_context(|| format!("loading definitions {}", path.display()))
}

/// Comparative definitions only exist for labels that had errors; the rest
/// come from the demonstration file when there is one.
fn defs_of_kind(g: &Global, kind: DefinitionKind) -> Result<Vec<Definition>> {
    let defs = read_defs(&definitions_path(&defs_dir(g), kind))?;
    let demo = definitions_path(&defs_dir(g), DefinitionKind::Demonstration);
    if kind == DefinitionKind::Comparative && demo.exists() {
        return Ok(with_fallback(&defs, &read_defs(&demo)?));
    }
    Ok(defs)
}

fn write_pretty(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_scored(g: &Global, run: &Run, corpus: &Corpus) -> Result<()> {
    let dir = save_run(run, &g.workdir)?;
    println!("run {}", run.run_id);
    if run.is_partial() {
        warn!(
            "{} tables failed; see {}",
            run.failures.len(),
            dir.join("manifest.json").display()
        );
    }
    if corpus.annotated_column_count(run.split) > 0 {
        let report = score(run, corpus)?;
        write_pretty(&dir.join("metrics.json"), &report)?;
        println!("micro_f1 {:.3}", report.micro_f1);
    }
    Ok(())
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Validation => Split::Validation,
        SplitArg::Test => Split::Test,
    }
}

fn kind_of(k: DefsKindArg) -> DefinitionKind {
    match k {
        DefsKindArg::Initial => DefinitionKind::Initial,
        DefsKindArg::Demonstration => DefinitionKind::Demonstration,
        DefsKindArg::Comparative => DefinitionKind::Comparative,
        DefsKindArg::Refined => DefinitionKind::Refined,
    }
}

fn scenario_of(s: ScenarioArg) -> Scenario {
    match s {
        ScenarioArg::Plain => Scenario::Plain,
        ScenarioArg::DemoDefs => Scenario::DemoDefs,
        ScenarioArg::SelectedComparative => Scenario::SelectedComparative,
    }
}

fn prices(path: &Option<PathBuf>) -> Result<PriceSheet> {
    match path {
        Some(p) => PriceSheet::load(p).with_context(|| format!("loading prices {}", p.display())),
        None => Ok(PriceSheet::gpt4o_2025_01()),
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    // A replay reuses the ids of the pipeline run it was recorded from.
    let salt = match &cli.command {
        Cmd::Replay(a) => format!("{:?}", Cmd::Pipeline(a.clone())),
        other => format!("{other:?}"),
    };
    let g = &cli.global;
    match &cli.command {
        Cmd::Ingest(a) => ingest(g, a),
        Cmd::Downsample(a) => downsample_cmd(g, a),
        Cmd::Annotate(a) => annotate_cmd(g, a, &salt),
        Cmd::Defgen(a) => defgen(g, a, &salt),
        Cmd::Refine(a) => refine_cmd(g, a, &salt),
        Cmd::Review(a) => review(g, a, &salt),
        Cmd::Eval(a) => eval(g, a),
        Cmd::Cost(a) => cost(g, a),
        Cmd::Ftset(a) => ftset(g, a),
        Cmd::Replay(a) => {
            if g.cassette.is_none() {
                bail!("replay needs --cassette");
            }
            let g = Global {
                backend: BackendArg::Replay,
                ..cli.global
            };
            pipeline(&g, a, &salt)
        }
        Cmd::Pipeline(a) => pipeline(g, a, &salt),
    }
}

fn ingest(g: &Global, a: &IngestArgs) -> Result<()> {
    let mut corpus = load_corpus(&a.source).with_context(|| format!("loading corpus {}", a.source.display()))?;
    if !a.domains.is_empty() {
        let domains: BTreeSet<String> = a.domains.iter().cloned().collect();
        let (kept, report) = filter_domains(&corpus, &domains)?;
        if report.empty {
            bail!("no table belongs to the domains {}", a.domains.join(", "));
        }
        println!(
            "kept {} tables and {} labels, removed {} tables and {} labels",
            report.tables_kept, report.labels_kept, report.tables_removed, report.labels_removed
        );
        corpus = kept;
    }
    let dest = corpus_dir(g);
    if dest != a.source {
        save_corpus(&corpus, &dest)?;
    }
    println!("corpus {} with {} labels", corpus.name, corpus.vocabulary.len());
    for split in [Split::Train, Split::Validation, Split::Test] {
        println!(
            "{:<10} {} tables, {} annotated columns",
            split.to_string(),
            corpus.split_len(split),
            corpus.annotated_column_count(split)
        );
    }
    Ok(())
}

fn downsample_cmd(g: &Global, a: &DownsampleArgs) -> Result<()> {
    let corpus = load(g)?;
    let small = downsample(&corpus, a.max_per_label, g.seed)?;
    let out = a.out.clone().unwrap_or_else(|| g.workdir.join("corpus-downsampled"));
    save_corpus(&small, &out)?;
    println!(
        "train {} -> {} tables, {} -> {} annotated columns, written to {}",
        corpus.split_len(Split::Train),
        small.split_len(Split::Train),
        corpus.annotated_column_count(Split::Train),
        small.annotated_column_count(Split::Train),
        out.display()
    );
    Ok(())
}

fn annotate_cmd(g: &Global, a: &AnnotateArgs, salt: &str) -> Result<()> {
    let corpus = load(g)?;
    let s = session(g, &corpus, salt)?;
    let wants_defs = a.strategy == StrategyArg::WithDefs || a.defs.is_some() || a.defs_kind.is_some();
    let defs = if wants_defs {
        Some(match &a.defs {
            Some(path) => read_defs(path)?,
            None => defs_of_kind(g, a.defs_kind.map_or(DefinitionKind::Demonstration, kind_of))?,
        })
    } else {
        None
    };
    let strategy = match a.strategy {
        StrategyArg::ZeroShot => Strategy::ZeroShot,
        StrategyArg::FewShot => Strategy::FewShot,
        StrategyArg::WithDefs => Strategy::WithDefinitions,
        StrategyArg::SelfConsistency if defs.is_some() => Strategy::WithDefinitions,
        StrategyArg::SelfConsistency => Strategy::ZeroShot,
    };
    if strategy != Strategy::WithDefinitions && defs.is_some() {
        bail!("--defs and --defs-kind need --strategy with-defs or self-consistency");
    }
    let cfg = AnnotateConfig {
        strategy,
        include_instructions: a.instructions,
        include_hierarchy: a.hierarchy,
        demonstrations_k: a.k,
        definitions: defs.as_deref(),
        definitions_top_k: a.defs_topk,
        temperature: a.temperature,
        seed: Some(g.seed),
        backend_digest: &s.digest,
        ..AnnotateConfig::default()
    };
    let split = split_of(a.split);
    let run = if a.strategy == StrategyArg::SelfConsistency {
        annotate_self_consistency(&corpus, split, &cfg, s.backend.as_ref(), &s.ctx, &a.temperatures)?
    } else {
        annotate(&corpus, split, &cfg, s.backend.as_ref(), &s.ctx)?
    };
    save_scored(g, &run, &corpus)
}

fn persist_generation(
    g: &Global,
    gen_id: &str,
    kind: DefinitionKind,
    out: &GenerationOutcome,
    source_run: Option<&str>,
) -> Result<()> {
    let gen_dir = run_dir(&g.workdir, gen_id);
    save_definitions(&out.definitions, definitions_path(&gen_dir, kind))?;
    write_usage(&gen_dir.join("usage.jsonl"), &out.usage)?;
    write_pretty(
        &gen_dir.join("generation.json"),
        &serde_json::json!({
            "generation_id": gen_id,
            "kind": kind,
            "source_run": source_run,
            "definitions": out.definitions.len(),
            "failures": out.failures,
            "flags": out.flags,
        }),
    )?;
    save_definitions(&out.definitions, definitions_path(&defs_dir(g), kind))?;
    for (label, reason) in &out.failures {
        warn!("no {kind} definition for {label}: {reason}");
    }
    println!("generation {gen_id}");
    println!(
        "{} {kind} definitions, {} failures",
        out.definitions.len(),
        out.failures.len()
    );
    if out.definitions.is_empty() && !out.failures.is_empty() {
        bail!("every {kind} definition failed");
    }
    Ok(())
}

fn defgen(g: &Global, a: &DefgenArgs, salt: &str) -> Result<()> {
    let corpus = load(g)?;
    let s = session(g, &corpus, salt)?;
    let gen_id = s.ctx.next_run_id();
    let cfg = GenerationConfig {
        n_demos: a.n_demos,
        temperature: a.temperature,
        workers: g.workers,
        ..GenerationConfig::new(&gen_id, g.seed)
    };
    let backend = s.backend.as_ref();
    match a.kind {
        DefgenKind::Initial => {
            let out = generate_initial(&corpus.vocabulary, backend, &cfg);
            persist_generation(g, &gen_id, DefinitionKind::Initial, &out, None)
        }
        DefgenKind::Demonstration => {
            let out = generate_demonstration(&corpus, backend, &cfg);
            persist_generation(g, &gen_id, DefinitionKind::Demonstration, &out, None)
        }
        DefgenKind::Comparative => {
            let run_ref = a
                .run
                .as_deref()
                .context("comparative definitions need --run VALIDATION_RUN")?;
            let run = resolve_run(g, run_ref)?;
            let errors = collect_errors(&run, &corpus, &cfg.serialization);
            let out = generate_comparative(&errors, &corpus, backend, &cfg, &run.run_id);
            info!(
                "{} labels had validation errors",
                errors.iter().filter(|d| !d.is_empty()).count()
            );
            persist_generation(g, &gen_id, DefinitionKind::Comparative, &out, Some(&run.run_id))
        }
    }
}

fn refine_cmd(g: &Global, a: &RefineArgs, salt: &str) -> Result<()> {
    let corpus = load(g)?;
    let s = session(g, &corpus, salt)?;
    let start = match &a.defs {
        Some(p) => read_defs(p)?,
        None => read_defs(&definitions_path(&defs_dir(g), DefinitionKind::Demonstration))?,
    };
    let gen_id = s.ctx.next_run_id();
    let cfg = GenerationConfig {
        n_demos: a.n_demos,
        workers: g.workers,
        ..GenerationConfig::new(&gen_id, g.seed)
    };
    let out = refine(&start, &corpus, s.backend.as_ref(), &cfg, a.rounds, |defs, _| {
        let run = annotate(
            &corpus,
            Split::Validation,
            &AnnotateConfig {
                strategy: Strategy::WithDefinitions,
                definitions: Some(defs),
                definitions_top_k: a.defs_topk,
                phase: Phase::Generation,
                seed: Some(g.seed),
                backend_digest: &s.digest,
                ..AnnotateConfig::default()
            },
            s.backend.as_ref(),
            &s.ctx,
        )?;
        save_run(&run, &g.workdir)?;
        Ok(run)
    })?;
    for r in &out.rounds {
        println!(
            "round {} validation run {} with errors on {} labels",
            r.round,
            r.validation_run,
            r.errorful_labels.len()
        );
    }
    let outcome = GenerationOutcome {
        definitions: out.definitions,
        failures: out.failures,
        flags: Default::default(),
        usage: out.usage,
    };
    let source = outcome_source(&out.rounds);
    persist_generation(g, &gen_id, DefinitionKind::Refined, &outcome, source.as_deref())
}

fn outcome_source(rounds: &[ctakit::definitions::RoundSummary]) -> Option<String> {
    rounds.last().map(|r| r.validation_run.clone())
}

fn review(g: &Global, a: &ReviewArgs, salt: &str) -> Result<()> {
    let corpus = load(g)?;
    let s = session(g, &corpus, salt)?;
    let prior = resolve_run(g, &a.prior)?;
    let scenario = scenario_of(a.scenario);
    let defs = match (scenario, &a.defs) {
        (Scenario::Plain, _) => None,
        (_, Some(p)) => Some(read_defs(p)?),
        (Scenario::DemoDefs, None) => Some(read_defs(&definitions_path(
            &defs_dir(g),
            DefinitionKind::Demonstration,
        ))?),
        (Scenario::SelectedComparative, None) => {
            Some(read_defs(&definitions_path(&defs_dir(g), DefinitionKind::Comparative))?)
        }
    };
    let run = self_correct(
        &prior,
        &corpus,
        s.backend.as_ref(),
        scenario,
        defs.as_deref(),
        &SerializationOptions::default(),
        &s.ctx,
    )?;
    save_scored(g, &run, &corpus)?;
    if corpus.annotated_column_count(prior.split) > 0 {
        println!("prior micro_f1 {:.3}", score(&prior, &corpus)?.micro_f1);
    }
    Ok(())
}

fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let corpus = load(g)?;
    let run = resolve_run(g, &a.run)?;
    let report = score(&run, &corpus)?;
    let errors = errors_over(&report, a.error_threshold);
    let diff = match &a.diff {
        Some(other) => Some(diff_runs(&run, &resolve_run(g, other)?, &corpus)?),
        None => None,
    };
    match a.format {
        FormatArg::Json => {
            let value = serde_json::json!({
                "run": run.run_id,
                "metrics": report,
                "errors_over_threshold": errors,
                "diff": diff,
            });
            println!("{}", serde_json::to_string_pretty(&value)?);
        }
        FormatArg::Text => {
            println!("run {}", run.run_id);
            print!("{}", report.to_text());
            println!("\nlabels with more than {} missed columns", a.error_threshold);
            for (label, n) in &errors {
                println!("{label} {n}");
            }
            if let Some(diff) = &diff {
                println!("\nlabel errors_a errors_b delta");
                for d in diff {
                    println!("{} {} {} {:+}", d.label, d.errors_a, d.errors_b, d.delta);
                }
            }
        }
    }
    Ok(())
}

fn usage_files(g: &Global, runs: &[String]) -> Result<Vec<PathBuf>> {
    if !runs.is_empty() {
        return Ok(runs
            .iter()
            .map(|r| {
                let direct = Path::new(r);
                if direct.join("usage.jsonl").exists() {
                    direct.join("usage.jsonl")
                } else {
                    run_dir(&g.workdir, r).join("usage.jsonl")
                }
            })
            .collect());
    }
    let root = g.workdir.join("runs");
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&root)
        .with_context(|| format!("listing {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path().join("usage.jsonl")))
        .filter(|p| p.exists())
        .collect();
    files.sort();
    Ok(files)
}

fn cost(g: &Global, a: &CostArgs) -> Result<()> {
    if a.breakeven {
        let (Some(per_a), Some(fixed_b), Some(per_b)) = (a.per_column_a, a.fixed_b, a.per_column_b) else {
            bail!("--breakeven needs --per-column-a, --fixed-b and --per-column-b");
        };
        let result = breakeven_columns(
            Dollars::from_f64(a.fixed_a),
            Dollars::from_f64(per_a),
            Dollars::from_f64(fixed_b),
            Dollars::from_f64(per_b),
        );
        match result {
            Breakeven::At(n) => println!("breakeven_columns {n}"),
            Breakeven::Never {
                cheaper_everywhere,
                cheaper_per_column,
            } => println!(
                "breakeven_columns never (cheaper everywhere: {}, cheaper per column: {})",
                cheaper_everywhere.map_or("neither".into(), |s| format!("{s:?}")),
                cheaper_per_column.map_or("neither".into(), |s| format!("{s:?}")),
            ),
        }
        return Ok(());
    }
    let sheet = prices(&a.prices)?;
    let mut entries: Vec<UsageEntry> = Vec::new();
    for f in usage_files(g, &a.run)? {
        entries.extend(read_usage(&f).with_context(|| format!("reading {}", f.display()))?);
    }
    if entries.is_empty() {
        bail!("no usage found under {}", g.workdir.join("runs").display());
    }
    println!("{:<11} {:>6} {:>12} {:>12}", "phase", "calls", "input", "output");
    for (phase, t) in token_totals(&entries) {
        println!(
            "{:<11} {:>6} {:>12} {:>12}",
            format!("{phase:?}").to_lowercase(),
            t.calls,
            t.input_tokens,
            t.output_tokens
        );
    }
    let r = reconcile(&entries, &sheet);
    println!();
    println!("{:<11} {:>14} {:>14}", "cost", "input only", "with output");
    for phase in Phase::ALL {
        println!(
            "{:<11} {:>14} {:>14}",
            format!("{phase:?}").to_lowercase(),
            r.input_only.phase(phase).to_string(),
            r.with_output.phase(phase).to_string()
        );
    }
    println!(
        "{:<11} {:>14} {:>14}",
        "total",
        r.input_only.total.to_string(),
        r.with_output.total.to_string()
    );
    if r.estimated_calls > 0 {
        println!("{} calls have estimated token counts", r.estimated_calls);
    }
    Ok(())
}

fn ftset(g: &Global, a: &FtsetArgs) -> Result<()> {
    let corpus = load(g)?;
    let opts = SetOptions {
        include_instructions: a.instructions,
        shuffle_seed: a.shuffle_seed,
        ..SetOptions::default()
    };
    let defs = || -> Result<Vec<Definition>> {
        match &a.defs {
            Some(p) => read_defs(p),
            None => read_defs(&definitions_path(&defs_dir(g), DefinitionKind::Demonstration)),
        }
    };
    let (set, name) = match a.set {
        SetArg::Simple => (build_simple_set(&corpus, &opts)?, "simple"),
        SetArg::Definitions => (build_definitions_set(&corpus, &defs()?, &opts)?, "definitions"),
        SetArg::Multitask => (
            build_multitask_set(&corpus, &defs()?, a.with_demos, a.n_demos, g.seed, &opts)?,
            "multitask",
        ),
    };
    for (source, reason) in &set.failures {
        warn!("skipped {source}: {reason}");
    }
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| g.workdir.join("ft").join(format!("{name}.jsonl")));
    export_jsonl(&set.records, &out)?;
    println!(
        "{} records, about {} tokens, written to {}",
        set.records.len(),
        set.estimated_tokens(),
        out.display()
    );
    if let Some(class) = a.model_class {
        let class = match class {
            ModelClassArg::Open8b => ModelClass::Open8b,
            ModelClassArg::Open70b => ModelClass::Open70b,
            ModelClassArg::Hosted => ModelClass::Hosted,
        };
        let manifest = out.with_extension("hyperparameters.json");
        export_hyperparameter_manifest(class, &manifest)?;
        println!("hyperparameters written to {}", manifest.display());
    }
    Ok(())
}

fn pipeline(g: &Global, a: &PipelineArgs, salt: &str) -> Result<()> {
    let corpus = load(g)?;
    let s = session(g, &corpus, salt)?;
    let cfg = PipelineConfig {
        max_columns_per_label: a.max_per_label,
        seed: g.seed,
        refine_rounds: a.rounds,
        definitions_top_k: Some(a.defs_topk),
        scenario: scenario_of(a.scenario),
        prices: prices(&a.prices)?,
        backend_digest: s.digest.clone(),
        ..PipelineConfig::default()
    };
    let summary = run_pipeline(&corpus, s.backend.as_ref(), &cfg, &s.ctx, &g.workdir)?;
    println!("annotation run {}", summary.annotation_run);
    println!("review run {}", summary.review_run);
    println!(
        "micro_f1 {:.3} after review {:.3}",
        summary.annotation_metrics.micro_f1, summary.review_metrics.micro_f1
    );
    println!(
        "cost {} total, {} per column, {} per reviewed column",
        summary.costs.total, summary.inference_cost_per_column, summary.review_cost_per_column
    );
    Ok(())
}
