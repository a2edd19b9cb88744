//! Synthetic inputs for the benchmarks.

use std::collections::BTreeSet;

use ctakit::definitions::Provenance;
use ctakit::runner::{Run, StrategyDescriptor};
use ctakit::{ColumnPrediction, ColumnRole, Corpus, Definition, DefinitionKind, Split, TableDoc, Vocabulary};

pub fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("Label{i:03}")).collect()
}

/// `n_tables` test tables of `width` target columns and `rows` rows, labels
/// assigned round robin.
pub fn corpus(n_tables: usize, width: usize, rows: usize, n_labels: usize) -> Corpus {
    let labels = labels(n_labels);
    let tables = (0..n_tables)
        .map(|t| TableDoc {
            table_id: format!("t{t:05}"),
            cells: (0..rows)
                .map(|r| {
                    (0..width)
                        .map(|c| format!("cell {t} {r} {c} with a handful of extra words"))
                        .collect()
                })
                .collect(),
            column_roles: vec![ColumnRole::Target; width],
            gold: (0..width)
                .map(|c| (c, BTreeSet::from([labels[(t * width + c) % n_labels].clone()])))
                .collect(),
            domain: "bench".into(),
            split: Split::Test,
            original_headers: None,
            excluded: BTreeSet::new(),
        })
        .collect();
    Corpus {
        name: "bench".into(),
        vocabulary: Vocabulary::new(labels),
        tables,
    }
}

/// A run that gets every third column wrong.
pub fn run(corpus: &Corpus) -> Run {
    let labels = &corpus.vocabulary.labels;
    let predictions = corpus
        .tables
        .iter()
        .map(|t| {
            let cols = (0..t.n_columns())
                .map(|c| {
                    let gold = t.gold_labels(c).and_then(|g| g.iter().next()).unwrap().clone();
                    let label = if c % 3 == 0 {
                        labels[(c + 1) % labels.len()].clone()
                    } else {
                        gold
                    };
                    ColumnPrediction::new(c, vec![label], &corpus.vocabulary)
                })
                .collect();
            (t.table_id.clone(), cols)
        })
        .collect();
    Run {
        run_id: "bench".into(),
        corpus: corpus.name.clone(),
        split: Split::Test,
        strategy: StrategyDescriptor {
            name: "zero_shot".into(),
            include_instructions: true,
            include_hierarchy: false,
            demonstrations_k: None,
            definitions_kind: None,
            definitions_top_k: None,
            temperatures: vec![0.0],
            model_id: "bench".into(),
            backend_digest: String::new(),
            seed: None,
            prior_run: None,
        },
        predictions,
        raw_responses: Default::default(),
        usage: Vec::new(),
        failures: Default::default(),
        flags: Default::default(),
        started_at: String::new(),
        finished_at: String::new(),
    }
}

pub fn definitions(corpus: &Corpus) -> Vec<Definition> {
    corpus
        .vocabulary
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| Definition {
            label: l.clone(),
            text: format!("{l} columns hold values such as cell {i} and words like extra or handful"),
            kind: DefinitionKind::Demonstration,
            provenance: Provenance {
                generator_model: "bench".into(),
                source_run: None,
                round: 0,
            },
        })
        .collect()
}

/// A model answer for `table` in the `{"Column N": "label"}` shape.
pub fn answer(table: &TableDoc) -> String {
    let body: Vec<String> = (0..table.n_columns())
        .map(|c| {
            let l = table.gold_labels(c).and_then(|g| g.iter().next()).unwrap();
            format!("\"Column {}\": \"{l}\"", c + 1)
        })
        .collect();
    format!("Here you go:\n```json\n{{{}}}\n```", body.join(", "))
}
