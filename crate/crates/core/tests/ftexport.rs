mod common;

use ctakit::corpus::Split;
use ctakit::definitions::{Definition, DefinitionKind, Provenance};
use ctakit::ftexport::{
    build_definitions_set, build_multitask_set, build_simple_set, explanation, export_hyperparameter_manifest,
    export_jsonl, read_jsonl, Hyperparameters, ModelClass, SetOptions, Task,
};
use ctakit::gateway::Role;
use ctakit::prompts::parse_annotation_response;

fn defs_for(labels: &[String]) -> Vec<Definition> {
    labels
        .iter()
        .map(|l| Definition {
            label: l.clone(),
            kind: DefinitionKind::Demonstration,
            text: format!("{l} refers to values of kind {l}."),
            provenance: Provenance {
                generator_model: "m".into(),
                source_run: None,
                round: 0,
            },
        })
        .collect()
}

#[test]
fn sotab_shaped_counts() {
    let corpus = common::sotab_shaped(698, 50);
    let defs = defs_for(&corpus.vocabulary.labels);
    let opts = SetOptions::default();
    assert_eq!(build_simple_set(&corpus, &opts).unwrap().records.len(), 698);
    let multi = build_multitask_set(&corpus, &defs, true, 3, 1, &opts).unwrap();
    assert_eq!(multi.records.len(), 748);
    assert_eq!(
        multi
            .records
            .iter()
            .filter(|r| r.task == Task::DefinitionGeneration)
            .count(),
        50
    );
    assert!(multi.failures.is_empty());
    let def_set = build_definitions_set(&corpus, &defs, &opts).unwrap();
    assert_eq!(def_set.records.len(), 698);
}

#[test]
fn simple_answers_are_gold() {
    let corpus = common::recipe_corpus();
    let set = build_simple_set(&corpus, &SetOptions::default()).unwrap();
    assert_eq!(set.records.len(), corpus.split_len(Split::Train));
    for r in &set.records {
        let t = corpus.table(&r.source).unwrap();
        let roles: Vec<Role> = r.messages.iter().map(|m| m.role).collect();
        assert_eq!(roles, [Role::System, Role::User, Role::Assistant]);
        assert!(!r.messages[0].content.contains("Your instructions are"));
        let parsed =
            parse_annotation_response(r.assistant(), &corpus.vocabulary, &t.annotated_columns(), false).unwrap();
        for p in parsed.predictions {
            assert!(t.gold[&p.column_index].contains(&p.labels[0]));
        }
    }
}

#[test]
fn explanations_follow_template() {
    let corpus = common::recipe_corpus();
    let defs = defs_for(&corpus.vocabulary.labels);
    let set = build_definitions_set(&corpus, &defs, &SetOptions::default()).unwrap();
    assert_eq!(
        explanation("Review", "a written opinion"),
        "Label Review is correct because the term a written opinion"
    );
    for r in &set.records {
        let answer: serde_json::Value = serde_json::from_str(r.assistant()).unwrap();
        for (_, pair) in answer.as_object().unwrap() {
            let label = pair[0].as_str().unwrap();
            let text = pair[1].as_str().unwrap();
            let def = &defs.iter().find(|d| d.label == label).unwrap().text;
            assert_eq!(text, format!("Label {label} is correct because the term {def}"));
        }
    }
    let simple = build_simple_set(&corpus, &SetOptions::default()).unwrap();
    assert!(set.estimated_tokens() > simple.estimated_tokens());
}

#[test]
fn multi_label_explanations_are_lists_of_pairs() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let mut corpus = common::random_corpus(&mut rng, 20, 5, true);
    for t in corpus.tables.iter_mut() {
        t.split = Split::Train;
    }
    let defs = defs_for(&corpus.vocabulary.labels);
    let set = build_definitions_set(&corpus, &defs, &SetOptions::default()).unwrap();
    for r in &set.records {
        let t = corpus.table(&r.source).unwrap();
        let answer: serde_json::Value = serde_json::from_str(r.assistant()).unwrap();
        for (c, gold) in &t.gold {
            let pairs = answer[format!("Column {}", c + 1)].as_array().unwrap();
            let labels: Vec<&str> = pairs.iter().map(|p| p[0].as_str().unwrap()).collect();
            assert_eq!(labels, gold.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }
}

#[test]
fn missing_definitions_are_reported() {
    let corpus = common::recipe_corpus();
    let defs = defs_for(&corpus.vocabulary.labels[..4]);
    let set = build_definitions_set(&corpus, &defs, &SetOptions::default()).unwrap();
    assert!(set.records.is_empty());
    assert_eq!(set.failures.len(), 6);
    let multi = build_multitask_set(&corpus, &defs, false, 3, 1, &SetOptions::default()).unwrap();
    assert_eq!(multi.failures.keys().collect::<Vec<_>>(), ["Cuisine"]);
    assert_eq!(multi.records.len(), 6 + 4);
}

#[test]
fn jsonl_round_trip() {
    let corpus = common::recipe_corpus();
    let set = build_multitask_set(
        &corpus,
        &defs_for(&corpus.vocabulary.labels),
        true,
        2,
        9,
        &SetOptions {
            shuffle_seed: Some(3),
            ..SetOptions::default()
        },
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ft").join("train.jsonl");
    export_jsonl(&set.records, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), set.records.len());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v.as_object().unwrap().keys().collect::<Vec<_>>(), ["messages"]);
    }
    let back = read_jsonl(&path).unwrap();
    assert_eq!(back, set.records.iter().map(|r| r.messages.clone()).collect::<Vec<_>>());
}

#[test]
fn hyperparameters_per_class() {
    let small = Hyperparameters::for_class(ModelClass::Open8b);
    assert_eq!(
        (small.epochs, small.batch_size, small.max_input_length),
        (10, 16, Some(5020))
    );
    assert_eq!(
        (small.lora_r, small.lora_alpha, small.lora_dropout),
        (Some(32), Some(32), Some(0.1))
    );
    assert_eq!(small.learning_rate, Some(1e-4));
    assert_eq!(Hyperparameters::for_class(ModelClass::Open70b).batch_size, 8);
    let hosted = Hyperparameters::for_class(ModelClass::Hosted);
    assert_eq!((hosted.epochs, hosted.batch_size, hosted.learning_rate), (3, 1, None));
    assert_eq!("open-70b".parse::<ModelClass>().unwrap(), ModelClass::Open70b);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hp.json");
    export_hyperparameter_manifest(ModelClass::Hosted, &path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["epochs"], 3);
    assert!(v.get("learning_rate").is_none());
}
