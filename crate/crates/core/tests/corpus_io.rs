mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use ctakit::corpus::{downsample, filter_domains, load_corpus, save_corpus, Split};
use ctakit::{CorpusError, Error};
use proptest::prelude::*;

#[test]
fn fixture_loads() {
    let c = load_corpus(common::fixture_dir("fixtures/recipes")).unwrap();
    assert_eq!(c.name, "recipes");
    assert_eq!(c.tables.len(), 1);
    let t = &c.tables[0];
    assert_eq!((t.n_rows(), t.n_columns()), (6, 4));
    assert_eq!(t.split, Split::Test);
    assert_eq!(c.annotated_column_count(Split::Test), 4);
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = common::recipe_corpus();
    c.tables[0].excluded.insert(4);
    c.tables[1].original_headers = Some((0..6).map(|i| format!("h{i}")).collect());
    save_corpus(&c, dir.path()).unwrap();
    let back = load_corpus(dir.path()).unwrap();
    assert_eq!(back.tables, c.tables);
    assert_eq!(back.vocabulary, c.vocabulary);
}

fn copy_fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let c = load_corpus(common::fixture_dir("fixtures/recipes")).unwrap();
    save_corpus(&c, dir.path()).unwrap();
    dir
}

#[test]
fn unknown_label_names_the_record() {
    let dir = copy_fixture();
    let p = dir.path().join("annotations.jsonl");
    let text = fs::read_to_string(&p).unwrap().replace("\"Duration\"", "\"CookTime\"");
    fs::write(&p, text).unwrap();
    match load_corpus(dir.path()) {
        Err(Error::Corpus(CorpusError::UnknownLabel { label, .. })) => assert_eq!(label, "CookTime"),
        other => panic!("expected unknown label, got {other:?}"),
    }
}

#[test]
fn ragged_table_is_rejected() {
    let dir = copy_fixture();
    let p = dir.path().join("tables").join("recipes_1.csv");
    let mut text = fs::read_to_string(&p).unwrap();
    text.push_str("only,three,cells\n");
    fs::write(&p, text).unwrap();
    assert!(matches!(
        load_corpus(dir.path()),
        Err(Error::Corpus(CorpusError::NonRectangular { .. })) | Err(Error::Corpus(CorpusError::Malformed { .. }))
    ));
}

#[test]
fn missing_file_is_reported() {
    let dir = copy_fixture();
    fs::remove_file(dir.path().join("splits.json")).unwrap();
    assert!(matches!(
        load_corpus(dir.path()),
        Err(Error::Corpus(CorpusError::MissingFile(_)))
    ));
}

#[test]
fn domain_filter() {
    let mut c = common::recipe_corpus();
    c.tables[0].domain = "Music".into();
    let (kept, _) = filter_domains(&c, &BTreeSet::from(["Music".to_string()])).unwrap();
    assert_eq!(kept.tables.len(), 1);
}

proptest! {
    #[test]
    fn downsample_caps_and_preserves(cap in 1usize..6, seed in any::<u64>(), n in 10usize..80) {
        let c = common::sotab_shaped(n, 7);
        let d = downsample(&c, cap, seed).unwrap();
        let counts = d.label_column_counts(Split::Train);
        let before = c.label_column_counts(Split::Train);
        for (label, n_before) in &before {
            let after = counts.get(label).copied().unwrap_or(0);
            prop_assert_eq!(after, (*n_before).min(cap));
        }
        prop_assert_eq!(&d, &downsample(&c, cap, seed).unwrap());
        // Every kept column is an original column with unchanged gold.
        let orig: BTreeMap<&str, _> = c.tables.iter().map(|t| (t.table_id.as_str(), t)).collect();
        for t in &d.tables {
            prop_assert_eq!(&orig[t.table_id.as_str()].gold, &t.gold);
        }
    }
}
