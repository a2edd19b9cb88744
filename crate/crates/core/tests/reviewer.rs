mod common;

use ctakit::corpus::Split;
use ctakit::definitions::{Definition, DefinitionKind, Provenance};
use ctakit::gateway::{GatewayError, MockBackend};
use ctakit::metrics::score;
use ctakit::prompts::PromptKind;
use ctakit::reviewer::{build_review_prompt, select_comparative_for_prediction, self_correct, Scenario};
use ctakit::serializer::SerializationOptions;
use ctakit::workflow::oracle_backend;
use ctakit::RunContext;

#[test]
fn identity_reviewer_changes_nothing() {
    let corpus = common::recipe_corpus();
    let prior = common::prior_with_errors(&corpus, 2);
    let ctx = RunContext::deterministic(1, 2);
    let opts = SerializationOptions::default();
    let reviewed = self_correct(
        &prior,
        &corpus,
        &common::identity_reviewer(&corpus),
        Scenario::Plain,
        None,
        &opts,
        &ctx,
    )
    .unwrap();
    assert_eq!(score(&reviewed, &corpus).unwrap(), score(&prior, &corpus).unwrap());
    assert!(reviewed.flags.is_empty());
    assert_eq!(reviewed.strategy.name, "review:plain");
    assert_eq!(reviewed.strategy.prior_run.as_deref(), Some(prior.run_id.as_str()));
    assert!(reviewed.usage.iter().all(|u| u.tag.as_deref() == Some("review:plain")));
}

#[test]
fn gold_reviewer_recovers_planted_errors() {
    let corpus = common::recipe_corpus();
    let opts = SerializationOptions::default();
    for k in 0..=3 {
        let prior = common::prior_with_errors(&corpus, k);
        let reviewed = self_correct(
            &prior,
            &corpus,
            &oracle_backend(&corpus, &opts, 0),
            Scenario::Plain,
            None,
            &opts,
            &RunContext::deterministic(1, 2),
        )
        .unwrap();
        let before = common::brute_force_score(&prior, &corpus);
        let after = common::brute_force_score(&reviewed, &corpus);
        assert_eq!(after.f1, 1.0);
        let got = score(&reviewed, &corpus).unwrap().micro_f1 - score(&prior, &corpus).unwrap().micro_f1;
        assert!((got - (after.f1 - before.f1)).abs() < 1e-12, "k={k}");
        assert_eq!(got == 0.0, k == 0);
    }
}

#[test]
fn reviewer_failures_keep_prior() {
    let corpus = common::recipe_corpus();
    let prior = common::prior_with_errors(&corpus, 1);
    let opts = SerializationOptions::default();
    let ctx = RunContext::deterministic(1, 1);
    let down = MockBackend::rule(|_| Err(GatewayError::Timeout));
    let reviewed = self_correct(&prior, &corpus, &down, Scenario::Plain, None, &opts, &ctx).unwrap();
    assert_eq!(reviewed.predictions, prior.predictions);
    assert!(reviewed.flags.values().all(|f| f.contains("reviewer-failed")));
    assert_eq!(reviewed.flags.len(), 3);

    let garbled = MockBackend::rule(|_| Ok("I think they are fine.".into()));
    let reviewed = self_correct(&prior, &corpus, &garbled, Scenario::Plain, None, &opts, &ctx).unwrap();
    assert_eq!(reviewed.predictions, prior.predictions);

    // Only Column 1 reviewed: the rest keep the prior answer, flagged.
    let partial = MockBackend::rule(|_| Ok(r#"{"Column 1": ["RecipeName", "ok"]}"#.into()));
    let reviewed = self_correct(&prior, &corpus, &partial, Scenario::Plain, None, &opts, &ctx).unwrap();
    assert_eq!(score(&reviewed, &corpus).unwrap(), score(&prior, &corpus).unwrap());
    let flags = reviewed.flags.values().next().unwrap();
    assert!(flags.contains("reviewer-kept-prior:Column 2"));
    assert!(!flags.contains("reviewer-kept-prior:Column 1"));
}

fn def(label: &str, kind: DefinitionKind) -> Definition {
    Definition {
        label: label.into(),
        kind,
        text: format!("About {label}."),
        provenance: Provenance {
            generator_model: "m".into(),
            source_run: None,
            round: 0,
        },
    }
}

#[test]
fn comparative_selection_follows_predictions() {
    let corpus = common::recipe_corpus();
    let prior = common::prior_with_errors(&corpus, 1);
    let comparative = vec![
        def("Review", DefinitionKind::Comparative),
        def("RecipeDescription", DefinitionKind::Comparative),
        def("Calories", DefinitionKind::Comparative),
    ];
    let first = corpus.split(Split::Test).next().unwrap();
    let picked = select_comparative_for_prediction(prior.table_predictions(&first.table_id), &comparative);
    // The first table predicts RecipeDescription twice and never Review.
    assert_eq!(
        picked.iter().map(|d| d.label.as_str()).collect::<Vec<_>>(),
        ["RecipeDescription"]
    );

    let msgs = build_review_prompt(
        first,
        prior.table_predictions(&first.table_id),
        &corpus.vocabulary,
        Some(&picked),
        &SerializationOptions::default(),
    );
    assert_eq!(PromptKind::detect(&msgs), PromptKind::Review);
    assert!(msgs[0].content.contains("RecipeDescription: About RecipeDescription."));
    assert!(!msgs[0].content.contains("Review: About Review."));
    assert!(msgs[1].content.contains("\"Column 3\": \"RecipeDescription\""));
}

#[test]
fn scenario_needs_matching_definitions() {
    let corpus = common::recipe_corpus();
    let prior = common::prior_with_errors(&corpus, 0);
    let opts = SerializationOptions::default();
    let ctx = RunContext::deterministic(1, 1);
    let backend = oracle_backend(&corpus, &opts, 0);
    let demo = [def("Review", DefinitionKind::Demonstration)];
    assert!(self_correct(&prior, &corpus, &backend, Scenario::DemoDefs, None, &opts, &ctx).is_err());
    assert!(self_correct(
        &prior,
        &corpus,
        &backend,
        Scenario::SelectedComparative,
        Some(&demo),
        &opts,
        &ctx
    )
    .is_err());
    let run = self_correct(&prior, &corpus, &backend, Scenario::DemoDefs, Some(&demo), &opts, &ctx).unwrap();
    assert_eq!(run.strategy.name, "review:demo_defs");
    assert_eq!(
        "selected-comparative".parse::<Scenario>().unwrap(),
        Scenario::SelectedComparative
    );
}
