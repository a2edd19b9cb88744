mod common;

use std::collections::BTreeSet;

use approx::assert_abs_diff_eq;
use ctakit::corpus::{Corpus, Split, Vocabulary};
use ctakit::definitions::{Definition, DefinitionKind, Provenance};
use ctakit::selector::{
    cosine, embed_text, mean_demo_similarity, select_definitions, select_demonstrations, table_text, DemoIndex,
    Embedder, EmbeddingVector, HashEmbedder,
};
use ctakit::serializer::SerializationOptions;
use proptest::prelude::*;

fn one_col(id: &str, split: Split, words: &[&str]) -> ctakit::TableDoc {
    let rows: Vec<Vec<&str>> = words.iter().map(|w| vec![*w]).collect();
    let rows: Vec<&[&str]> = rows.iter().map(Vec::as_slice).collect();
    common::table(id, split, &rows, &[(0, &["A"])])
}

/// Test table of four distinct words; train table `k` keeps `4 - k` of them
/// and adds `k` noise words, so similarity falls with `k`.
fn planted() -> Corpus {
    let base = ["apple", "banana", "cherry", "damson"];
    let noise = ["xylo", "yucca", "zebra", "quartz", "walrus", "vortex"];
    let mut tables = vec![one_col("test", Split::Test, &base)];
    for k in 0..6usize {
        let mut words: Vec<&str> = base[..4usize.saturating_sub(k)].to_vec();
        words.extend(&noise[..k]);
        tables.push(one_col(&format!("train_{k}"), Split::Train, &words));
    }
    Corpus {
        name: "planted".into(),
        vocabulary: Vocabulary::new(["A"]),
        tables,
    }
}

fn brute_force_top(corpus: &Corpus, test: &ctakit::TableDoc, k: usize) -> Vec<String> {
    let e = HashEmbedder::default();
    let opts = SerializationOptions::default();
    let q = embed_text(&e, &table_text(test, &opts), "q").unwrap();
    let mut all: Vec<(f64, String)> = corpus
        .split(Split::Train)
        .map(|t| {
            let v = embed_text(&e, &table_text(t, &opts), &t.table_id).unwrap();
            let dot: f64 = q.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
            (dot / (q.norm() * v.norm()), t.table_id.clone())
        })
        .collect();
    // Bubble sort: descending score, ascending id.
    for i in 0..all.len() {
        for j in 0..all.len() - 1 - i {
            let swap = all[j].0 < all[j + 1].0 || (all[j].0 == all[j + 1].0 && all[j].1 > all[j + 1].1);
            if swap {
                all.swap(j, j + 1);
            }
        }
    }
    all.into_iter().take(k).map(|(_, id)| id).collect()
}

#[test]
fn planted_ordering() {
    let c = planted();
    let test = c.table("test").unwrap();
    let got = select_demonstrations(test, &c, &HashEmbedder::default(), 5, &SerializationOptions::default()).unwrap();
    assert_eq!(got, brute_force_top(&c, test, 5));
    assert_eq!(got[0], "train_0");
    assert_eq!(got.len(), 5);
}

#[test]
fn exhaustion_and_duplicate_first() {
    let mut c = planted();
    let test = c.table("test").unwrap().clone();
    let mut dup = test.clone();
    dup.table_id = "zz_duplicate".into();
    dup.split = Split::Train;
    c.tables.push(dup);
    let got = select_demonstrations(
        &test,
        &c,
        &HashEmbedder::default(),
        50,
        &SerializationOptions::default(),
    )
    .unwrap();
    assert_eq!(got.len(), 7);
    // Both are identical to the query; the id breaks the tie.
    assert_eq!(got[..2], ["train_0", "zz_duplicate"]);
}

#[test]
fn empty_train_is_rejected() {
    let c = Corpus {
        name: "x".into(),
        vocabulary: Vocabulary::new(["A"]),
        tables: vec![one_col("t", Split::Test, &["a"])],
    };
    assert!(select_demonstrations(
        &c.tables[0],
        &c,
        &HashEmbedder::default(),
        5,
        &SerializationOptions::default()
    )
    .is_err());
}

#[test]
fn disjoint_vocabularies_are_orthogonal() {
    let e = HashEmbedder::default();
    let a = embed_text(&e, "apple banana", "a").unwrap();
    let b = embed_text(&e, "cherry damson", "b").unwrap();
    let buckets_a: BTreeSet<usize> = ["apple", "banana"].iter().map(|w| e.bucket(w)).collect();
    let buckets_b: BTreeSet<usize> = ["cherry", "damson"].iter().map(|w| e.bucket(w)).collect();
    assert!(buckets_a.is_disjoint(&buckets_b), "fixture words must not collide");
    assert_abs_diff_eq!(cosine(&a, &b).unwrap(), 0.0, epsilon = 1e-12);
}

fn def(label: &str, text: &str) -> Definition {
    Definition {
        label: label.into(),
        kind: DefinitionKind::Demonstration,
        text: text.into(),
        provenance: Provenance {
            generator_model: "m".into(),
            source_run: None,
            round: 0,
        },
    }
}

#[test]
fn definition_selection() {
    let test = one_col("t", Split::Test, &["apple", "banana", "cherry"]);
    let defs: Vec<Definition> = (0..8)
        .map(|i| def(&format!("L{i}"), &format!("unrelated words number{i}")))
        .collect();
    let e = HashEmbedder::default();
    let opts = SerializationOptions::default();
    assert_eq!(select_definitions(&test, &defs, &e, 10, &opts).unwrap().len(), 8);

    let mut defs = defs;
    defs.push(def("Fruit", "apple banana cherry"));
    let got = select_definitions(&test, &defs, &e, 10, &opts).unwrap();
    assert_eq!(got[0].label, "Fruit");

    // Brute force over 14 definitions with planted overlap.
    let words = ["apple", "banana", "cherry", "column", "one"];
    let defs: Vec<Definition> = (0..14)
        .map(|i| def(&format!("D{i:02}"), &format!("filler{i} {}", words[..i % 6].join(" "))))
        .collect();
    let got: Vec<String> = select_definitions(&test, &defs, &e, 10, &opts)
        .unwrap()
        .into_iter()
        .map(|d| d.label)
        .collect();
    let q = embed_text(&e, &table_text(&test, &opts), "q").unwrap();
    let mut expected: Vec<(f64, String)> = defs
        .iter()
        .map(|d| {
            (
                cosine(&q, &embed_text(&e, &d.text, &d.label).unwrap()).unwrap(),
                d.label.clone(),
            )
        })
        .collect();
    expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let expected: Vec<String> = expected.into_iter().take(10).map(|(_, l)| l).collect();
    assert_eq!(got, expected);
}

#[test]
fn mean_similarity_matches_recomputation() {
    let c = planted();
    let e = HashEmbedder::default();
    let opts = SerializationOptions::default();
    let index = DemoIndex::build(&c, Split::Train, &e, &opts).unwrap();
    let tests: Vec<&ctakit::TableDoc> = c.split(Split::Test).collect();
    let got = mean_demo_similarity(&index, &tests, &e, 3).unwrap().unwrap();
    let q = embed_text(&e, &table_text(tests[0], &opts), "q").unwrap();
    let top = brute_force_top(&c, tests[0], 3);
    let sims: Vec<f64> = top
        .iter()
        .map(|id| {
            cosine(
                &q,
                &embed_text(&e, &table_text(c.table(id).unwrap(), &opts), id).unwrap(),
            )
            .unwrap()
        })
        .collect();
    assert_abs_diff_eq!(got, sims.iter().sum::<f64>() / 3.0, epsilon = 1e-12);

    // A test table whose demonstrations all equal it.
    let mut same = c.clone();
    same.tables.retain(|t| t.split == Split::Test);
    let mut copy = same.tables[0].clone();
    copy.table_id = "copy".into();
    copy.split = Split::Train;
    same.tables.push(copy);
    let index = DemoIndex::build(&same, Split::Train, &e, &opts).unwrap();
    let tests: Vec<&ctakit::TableDoc> = same.split(Split::Test).collect();
    assert_abs_diff_eq!(
        mean_demo_similarity(&index, &tests, &e, 5).unwrap().unwrap(),
        1.0,
        epsilon = 1e-12
    );
}

struct Fixed(Vec<f64>);
impl Embedder for Fixed {
    fn model_id(&self) -> &str {
        "fixed"
    }
    fn embed(&self, _: &str) -> Result<Vec<f64>, ctakit::GatewayError> {
        Ok(self.0.clone())
    }
}

#[test]
fn non_finite_embeddings_are_rejected() {
    assert!(embed_text(&Fixed(vec![f64::NAN]), "x", "x").is_err());
}

fn vecs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..16).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

proptest! {
    #[test]
    fn cosine_is_scale_invariant_and_symmetric((u, v) in vecs(), c in 0.01f64..100.0) {
        let a = EmbeddingVector::new(u, "u");
        let b = EmbeddingVector::new(v.clone(), "v");
        let scaled = EmbeddingVector::new(v.iter().map(|x| x * c).collect(), "v");
        if let (Ok(x), Ok(y)) = (cosine(&a, &b), cosine(&a, &scaled)) {
            prop_assert!((x - y).abs() < 1e-9);
            prop_assert!((x - cosine(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn selection_ignores_train_order(seed in any::<u64>(), n in 1usize..40) {
        use rand::{seq::SliceRandom, Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pool = ["red", "green", "blue", "cyan", "teal", "gold", "gray", "pink"];
        let mut tables = vec![one_col("test", Split::Test, &pool[..3])];
        for i in 0..n {
            let k = rng.gen_range(1..5);
            let words: Vec<&str> = pool.choose_multiple(&mut rng, k).copied().collect();
            tables.push(one_col(&format!("tr{i:02}"), Split::Train, &words));
        }
        let mut c = Corpus { name: "p".into(), vocabulary: Vocabulary::new(["A"]), tables };
        let e = HashEmbedder::default();
        let opts = SerializationOptions::default();
        let test = c.tables[0].clone();
        let a = select_demonstrations(&test, &c, &e, 5, &opts).unwrap();
        prop_assert_eq!(&a, &brute_force_top(&c, &test, 5));
        c.tables[1..].shuffle(&mut rng);
        let b = select_demonstrations(&test, &c, &e, 5, &opts).unwrap();
        prop_assert_eq!(a, b);
    }
}
