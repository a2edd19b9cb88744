#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use ctakit::corpus::{ColumnRole, Corpus, Split, TableDoc, Vocabulary};
use ctakit::prompts::ColumnPrediction;
use ctakit::runner::{Run, StrategyDescriptor};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixture_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join(name)
}

pub fn table(id: &str, split: Split, rows: &[&[&str]], gold: &[(usize, &[&str])]) -> TableDoc {
    let width = rows.first().map_or(0, |r| r.len());
    let gold: BTreeMap<usize, BTreeSet<String>> = gold
        .iter()
        .map(|(c, ls)| (*c, ls.iter().map(|l| l.to_string()).collect()))
        .collect();
    TableDoc {
        table_id: id.to_string(),
        cells: rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect(),
        column_roles: (0..width)
            .map(|c| {
                if gold.contains_key(&c) {
                    ColumnRole::Target
                } else {
                    ColumnRole::Context
                }
            })
            .collect(),
        gold,
        domain: "Recipe".into(),
        split,
        original_headers: None,
        excluded: BTreeSet::new(),
    }
}

pub const RECIPE_LABELS: [&str; 5] = ["RecipeName", "Duration", "Review", "RecipeDescription", "Cuisine"];

const DISHES: [(&str, &str, &str, &str, &str); 12] = [
    (
        "Spaghetti Carbonara",
        "PT30M",
        "Rich and creamy, a weeknight favourite.",
        "Roman pasta with eggs, cheese and cured pork.",
        "Italian",
    ),
    (
        "Chicken Tikka Masala",
        "PT1H15M",
        "Too spicy for the kids.",
        "Marinated chicken in a spiced tomato cream sauce.",
        "Indian",
    ),
    (
        "Lemon Drizzle Cake",
        "PT50M",
        "Moist and zesty, would bake again.",
        "A light sponge soaked with lemon syrup.",
        "British",
    ),
    (
        "Greek Salad",
        "PT10M",
        "Fresh and simple.",
        "Tomatoes, cucumber, olives and feta.",
        "Greek",
    ),
    (
        "Beef Stew",
        "PT2H30M",
        "Hearty winter dinner, loved it.",
        "Slow cooked beef with root vegetables.",
        "Irish",
    ),
    (
        "Pad Thai",
        "PT25M",
        "Better than takeaway.",
        "Stir fried rice noodles with tamarind and peanuts.",
        "Thai",
    ),
    (
        "Ratatouille",
        "PT1H",
        "A bit bland for my taste.",
        "Provencal stewed summer vegetables.",
        "French",
    ),
    (
        "Fish Tacos",
        "PT35M",
        "Great for a party.",
        "Crispy fish in tortillas with slaw.",
        "Mexican",
    ),
    (
        "Miso Soup",
        "PT15M",
        "Comforting and light.",
        "Dashi broth with miso, tofu and seaweed.",
        "Japanese",
    ),
    (
        "Paella",
        "PT1H10M",
        "Took longer than stated.",
        "Saffron rice with seafood and chicken.",
        "Spanish",
    ),
    (
        "Goulash",
        "PT2H",
        "My grandmother's favourite.",
        "Paprika spiced beef and onion stew.",
        "Hungarian",
    ),
    (
        "Pancakes",
        "PT20M",
        "Fluffy every time.",
        "Thin batter cakes fried in butter.",
        "American",
    ),
];

/// Twelve recipe tables: 6 train, 3 validation, 3 test. Every table has
/// the columns RecipeName, Duration, Review, RecipeDescription and Cuisine
/// plus one context column.
pub fn recipe_corpus() -> Corpus {
    let splits = [
        Split::Train,
        Split::Train,
        Split::Train,
        Split::Train,
        Split::Train,
        Split::Train,
        Split::Validation,
        Split::Validation,
        Split::Validation,
        Split::Test,
        Split::Test,
        Split::Test,
    ];
    let tables = (0..12)
        .map(|i| {
            let rows: Vec<Vec<&str>> = (0..3)
                .map(|k| {
                    let d = DISHES[(i + k * 5) % 12];
                    vec![d.0, d.1, d.2, d.3, d.4, "www.example.org"]
                })
                .collect();
            let rows: Vec<&[&str]> = rows.iter().map(Vec::as_slice).collect();
            table(
                &format!("recipe_{i:02}"),
                splits[i],
                &rows,
                &[
                    (0, &["RecipeName"]),
                    (1, &["Duration"]),
                    (2, &["Review"]),
                    (3, &["RecipeDescription"]),
                    (4, &["Cuisine"]),
                ],
            )
        })
        .collect();
    Corpus {
        name: "recipes".into(),
        vocabulary: Vocabulary::new(RECIPE_LABELS),
        tables,
    }
}

pub fn descriptor(name: &str) -> StrategyDescriptor {
    StrategyDescriptor {
        name: name.into(),
        include_instructions: true,
        include_hierarchy: false,
        demonstrations_k: None,
        definitions_kind: None,
        definitions_top_k: None,
        temperatures: vec![0.0],
        model_id: "fixture".into(),
        backend_digest: String::new(),
        seed: None,
        prior_run: None,
    }
}

/// A run whose answer for each annotated column is `answer(table, column, gold)`.
pub fn run_with(
    corpus: &Corpus,
    split: Split,
    mut answer: impl FnMut(&TableDoc, usize, &BTreeSet<String>) -> Option<Vec<String>>,
) -> Run {
    let mut predictions = BTreeMap::new();
    for t in corpus.split(split) {
        let preds: Vec<ColumnPrediction> = t
            .annotated_columns()
            .into_iter()
            .filter_map(|c| {
                answer(t, c, &t.gold[&c]).map(|labels| ColumnPrediction::new(c, labels, &corpus.vocabulary))
            })
            .collect();
        if !preds.is_empty() {
            predictions.insert(t.table_id.clone(), preds);
        }
    }
    Run {
        run_id: format!("fixture-{split}"),
        corpus: corpus.name.clone(),
        split,
        strategy: descriptor("fixture"),
        predictions,
        raw_responses: BTreeMap::new(),
        usage: Vec::new(),
        failures: BTreeMap::new(),
        flags: BTreeMap::new(),
        started_at: String::new(),
        finished_at: String::new(),
    }
}

pub fn gold_run(corpus: &Corpus, split: Split) -> Run {
    run_with(corpus, split, |_, _, g| Some(g.iter().cloned().collect()))
}

/// Random corpus of test tables over labels `L0..L{n_labels}`.
pub fn random_corpus(rng: &mut impl Rng, max_columns: usize, n_labels: usize, multi_label: bool) -> Corpus {
    let labels: Vec<String> = (0..n_labels).map(|i| format!("L{i}")).collect();
    let mut tables = Vec::new();
    let mut remaining = rng.gen_range(1..=max_columns);
    let mut i = 0;
    while remaining > 0 {
        let width = rng.gen_range(1..=remaining.min(6));
        remaining -= width;
        let mut gold = BTreeMap::new();
        for c in 0..width {
            let k = if multi_label {
                rng.gen_range(1..=3.min(n_labels))
            } else {
                1
            };
            let set: BTreeSet<String> = labels.choose_multiple(rng, k).cloned().collect();
            gold.insert(c, set);
        }
        tables.push(TableDoc {
            table_id: format!("t{i:03}"),
            cells: vec![(0..width).map(|c| format!("v{i}_{c}")).collect()],
            column_roles: vec![ColumnRole::Target; width],
            gold,
            domain: "d".into(),
            split: Split::Test,
            original_headers: None,
            excluded: BTreeSet::new(),
        });
        i += 1;
    }
    let mut vocabulary = Vocabulary::new(labels);
    vocabulary.multi_label = multi_label;
    Corpus {
        name: "random".into(),
        vocabulary,
        tables,
    }
}

/// Random predictions with planted out-of-vocabulary and unanswered columns.
pub fn random_run(rng: &mut impl Rng, corpus: &Corpus) -> Run {
    let labels = corpus.vocabulary.labels.clone();
    let multi = corpus.vocabulary.multi_label;
    run_with(corpus, Split::Test, |_, _, gold| {
        let roll: f64 = rng.gen();
        if roll < 0.1 {
            None
        } else if roll < 0.2 {
            Some(vec!["NotALabel".to_string()])
        } else if roll < 0.55 {
            Some(gold.iter().cloned().collect())
        } else if multi {
            let k = rng.gen_range(1..=3);
            let mut p: Vec<String> = labels.choose_multiple(rng, k).cloned().collect();
            if rng.gen_bool(0.2) {
                p.push("Unknown".into());
            }
            Some(p)
        } else {
            Some(vec![labels.choose(rng).unwrap().clone()])
        }
    })
}

/// SOTAB-shaped corpus: `n_train` train tables over `n_labels` labels, one
/// target column each plus a context column.
pub fn sotab_shaped(n_train: usize, n_labels: usize) -> Corpus {
    let labels: Vec<String> = (0..n_labels).map(|i| format!("Label{i:02}")).collect();
    let tables = (0..n_train)
        .map(|i| {
            let l = &labels[i % n_labels];
            TableDoc {
                table_id: format!("sotab_{i:04}"),
                cells: vec![
                    vec![format!("value {i} a"), "ctx".into()],
                    vec![format!("value {i} b"), "ctx".into()],
                ],
                column_roles: vec![ColumnRole::Target, ColumnRole::Context],
                gold: [(0, [l.clone()].into())].into(),
                domain: "d".into(),
                split: Split::Train,
                original_headers: None,
                excluded: BTreeSet::new(),
            }
        })
        .collect();
    Corpus {
        name: "sotab-shaped".into(),
        vocabulary: Vocabulary::new(labels),
        tables,
    }
}

/// Independent scorer: for each label, scans every column and asks whether
/// the label is in the gold set and in the usable prediction set.
pub struct BruteForce {
    pub per_label: BTreeMap<String, (u64, u64, u64)>,
    pub oov: u64,
    pub unanswered: u64,
    pub f1: f64,
    pub hamming: Option<f64>,
}

pub fn brute_force_score(run: &Run, corpus: &Corpus) -> BruteForce {
    let vocab: BTreeSet<&str> = corpus.vocabulary.labels.iter().map(String::as_str).collect();
    let multi = corpus.vocabulary.multi_label;
    let mut columns: Vec<(BTreeSet<String>, Option<Vec<String>>)> = Vec::new();
    for t in corpus.tables.iter().filter(|t| t.split == run.split) {
        for c in 0..t.n_columns() {
            if t.column_roles[c] != ColumnRole::Target || t.excluded.contains(&c) || !t.gold.contains_key(&c) {
                continue;
            }
            let pred = run
                .predictions
                .get(&t.table_id)
                .and_then(|ps| ps.iter().find(|p| p.column_index == c))
                .map(|p| p.labels.clone());
            columns.push((t.gold[&c].clone(), pred));
        }
    }
    let usable = |pred: &Option<Vec<String>>| -> BTreeSet<String> {
        match pred {
            None => BTreeSet::new(),
            Some(ls) if multi => ls.iter().filter(|l| vocab.contains(l.as_str())).cloned().collect(),
            Some(ls) => ls
                .iter()
                .take(1)
                .filter(|l| vocab.contains(l.as_str()))
                .cloned()
                .collect(),
        }
    };
    let mut per_label = BTreeMap::new();
    for label in &corpus.vocabulary.labels {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (gold, pred) in &columns {
            let p = usable(pred);
            match (gold.contains(label), p.contains(label)) {
                (true, true) => tp += 1,
                (true, false) => fn_ += 1,
                (false, true) => fp += 1,
                (false, false) => {}
            }
        }
        per_label.insert(label.clone(), (tp, fp, fn_));
    }
    let oov = columns
        .iter()
        .map(|(_, p)| match p {
            None => 0,
            Some(ls) if multi => ls.iter().filter(|l| !vocab.contains(l.as_str())).count() as u64,
            Some(ls) => u64::from(!vocab.contains(ls[0].as_str())),
        })
        .sum();
    let unanswered = columns.iter().filter(|(_, p)| p.is_none()).count() as u64;
    let (tp, fp, fn_) = per_label
        .values()
        .fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    let hamming = multi.then(|| {
        let sum: f64 = columns
            .iter()
            .map(|(g, p)| {
                let p = usable(p);
                let union = g.union(&p).count();
                if union == 0 {
                    1.0
                } else {
                    g.intersection(&p).count() as f64 / union as f64
                }
            })
            .sum();
        sum / columns.len() as f64
    });
    BruteForce {
        per_label,
        oov,
        unanswered,
        f1,
        hamming,
    }
}

/// Runs self-consistency over one single-column table where the run at
/// temperature 0, 0.5 and 1.0 answers `triple[0]`, `triple[1]` and
/// `triple[2]`. Returns the voted label and the brute-force expectation.
pub fn vote_on_triple(triple: [&'static str; 3]) -> (String, String) {
    use ctakit::gateway::MockBackend;
    use ctakit::runner::{annotate_self_consistency, AnnotateConfig};
    use ctakit::RunContext;

    let corpus = Corpus {
        name: "votes".into(),
        vocabulary: Vocabulary::new(["A", "B", "C"]),
        tables: vec![table("t", Split::Test, &[&["x"]], &[(0, &["A"])])],
    };
    let backend = MockBackend::rule(move |req| {
        let i = (req.temperature * 2.0).round() as usize;
        Ok(format!("{{\"Column 1\": \"{}\"}}", triple[i]))
    });
    let run = annotate_self_consistency(
        &corpus,
        Split::Test,
        &AnnotateConfig::default(),
        &backend,
        &RunContext::deterministic(0, 1),
        &[1.0, 0.0, 0.5],
    )
    .expect("self-consistency run");
    let got = run.prediction("t", 0).expect("voted answer").labels[0].clone();
    let expected = ["A", "B", "C"]
        .into_iter()
        .find(|l| triple.iter().filter(|t| *t == l).count() >= 2)
        .unwrap_or(triple[0]);
    (got, expected.to_string())
}

/// All 27 answer triples over a three-label alphabet.
pub fn all_triples() -> Vec<[&'static str; 3]> {
    let abc = ["A", "B", "C"];
    let mut out = Vec::new();
    for a in abc {
        for b in abc {
            for c in abc {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Prior run on the test split with `k` planted errors (Review answered as
/// RecipeDescription in the first `k` test tables).
pub fn prior_with_errors(corpus: &Corpus, k: usize) -> Run {
    let ids: Vec<String> = corpus.split(Split::Test).take(k).map(|t| t.table_id.clone()).collect();
    run_with(corpus, Split::Test, |t, _, g| {
        let gold = g.iter().next().unwrap().clone();
        Some(vec![if gold == "Review" && ids.contains(&t.table_id) {
            "RecipeDescription".to_string()
        } else {
            gold
        }])
    })
}

/// A reviewer that repeats the first model's answer.
pub fn identity_reviewer(corpus: &Corpus) -> ctakit::gateway::MockBackend {
    let vocab = corpus.vocabulary.clone();
    ctakit::gateway::MockBackend::rule(move |req| {
        let user = req.last_user();
        let prior = user
            .split_once("by the first model:\n")
            .and_then(|(_, rest)| rest.split_once("\n\nReview"))
            .map(|(p, _)| p)
            .ok_or_else(|| ctakit::GatewayError::Mock("no prior".into()))?;
        let cols: Vec<usize> = (0..10).collect();
        let parsed = ctakit::prompts::parse_annotation_response(prior, &vocab, &cols, false)
            .map_err(|e| ctakit::GatewayError::Mock(e.to_string()))?;
        let entries: Vec<(usize, String, String)> = parsed
            .predictions
            .into_iter()
            .map(|p| (p.column_index, p.labels[0].clone(), "agreed".to_string()))
            .collect();
        Ok(ctakit::prompts::render_labelled_explanations(&entries))
    })
}
