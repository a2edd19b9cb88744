mod common;

use approx::assert_abs_diff_eq;
use ctakit::corpus::Split;
use ctakit::metrics::{diff_runs, error_table, score};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check_against_brute_force(seed: u64, multi: bool) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = common::random_corpus(&mut rng, 40, 7, multi);
    let run = common::random_run(&mut rng, &corpus);
    let got = score(&run, &corpus).unwrap();
    let want = common::brute_force_score(&run, &corpus);
    for (label, c) in &got.per_label {
        prop_assert_eq!((c.tp, c.fp, c.fn_), want.per_label[label], "label {}", label);
    }
    prop_assert_eq!(got.out_of_vocab_count, want.oov);
    prop_assert_eq!(got.unanswered_count, want.unanswered);
    prop_assert!((got.micro_f1 - want.f1).abs() < 1e-12);
    match (got.hamming_score, want.hamming) {
        (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
        (a, b) => prop_assert_eq!(a, b),
    }
    Ok(())
}

proptest! {
    #[test]
    fn single_label_matches_brute_force(seed in any::<u64>()) {
        check_against_brute_force(seed, false)?;
    }

    #[test]
    fn multi_label_matches_brute_force(seed in any::<u64>()) {
        check_against_brute_force(seed, true)?;
    }

    #[test]
    fn scores_are_bounded(seed in any::<u64>(), multi in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = common::random_corpus(&mut rng, 30, 5, multi);
        let run = common::random_run(&mut rng, &corpus);
        let r = score(&run, &corpus).unwrap();
        for x in [r.micro_f1, r.precision, r.recall, r.hamming_score.unwrap_or(0.5)] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        // Every single-label column lands in exactly one of TP or FN.
        if !multi {
            let t = r.totals();
            prop_assert_eq!(t.tp + t.fn_, r.columns);
        }
    }
}

#[test]
fn gold_predictions_are_perfect() {
    let corpus = common::recipe_corpus();
    let r = score(&common::gold_run(&corpus, Split::Test), &corpus).unwrap();
    assert_eq!(r.micro_f1, 1.0);
    assert_eq!(r.columns, 15);
}

#[test]
fn hand_counted_fixture() {
    // 15 test columns: Review always mislabelled as RecipeDescription,
    // one Cuisine column unanswered, one Duration answered out of vocabulary.
    let corpus = common::recipe_corpus();
    let run = common::run_with(&corpus, Split::Test, |t, c, g| {
        let gold = g.iter().next().unwrap().as_str();
        match (t.table_id.as_str(), gold) {
            (_, "Review") => Some(vec!["RecipeDescription".into()]),
            ("recipe_09", "Cuisine") => None,
            ("recipe_10", "Duration") => Some(vec!["CookTime".into()]),
            _ => Some(vec![gold.into()]),
        }
        .filter(|_| c < 5)
    });
    let r = score(&run, &corpus).unwrap();
    let t = r.totals();
    assert_eq!((t.tp, t.fp, t.fn_), (10, 3, 5));
    assert_eq!(r.per_label["Review"].fn_, 3);
    assert_eq!(r.per_label["RecipeDescription"].fp, 3);
    assert_eq!((r.out_of_vocab_count, r.unanswered_count), (1, 1));
    assert_abs_diff_eq!(r.micro_f1, 20.0 / 28.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r.precision, 10.0 / 13.0, epsilon = 1e-12);
    assert_abs_diff_eq!(r.recall, 10.0 / 15.0, epsilon = 1e-12);

    let errors = error_table(&run, &corpus, 0).unwrap();
    assert_eq!(errors[0], ("Review".to_string(), 3));
    assert_eq!(errors.len(), 3);
    assert_eq!(error_table(&run, &corpus, 2).unwrap().len(), 1);

    let deltas = diff_runs(&run, &common::gold_run(&corpus, Split::Test), &corpus).unwrap();
    let review = deltas.iter().find(|d| d.label == "Review").unwrap();
    assert_eq!((review.errors_a, review.errors_b, review.delta), (3, 0, -3));
}

#[test]
fn mismatched_split_is_rejected() {
    let corpus = common::recipe_corpus();
    let mut run = common::gold_run(&corpus, Split::Validation);
    run.split = Split::Test;
    assert!(score(&run, &corpus).is_err());
}

#[test]
fn excluded_columns_are_ignored() {
    let mut corpus = common::recipe_corpus();
    for t in corpus.tables.iter_mut() {
        t.excluded.insert(2);
    }
    let run = common::run_with(&corpus, Split::Test, |_, _, _| Some(vec!["Cuisine".into()]));
    let r = score(&run, &corpus).unwrap();
    assert_eq!(r.columns, 12);
    assert_eq!(r.per_label["Review"].fn_, 0);
}
