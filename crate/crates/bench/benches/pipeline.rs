use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ctakit::metrics::score;
use ctakit::prompts::parse_annotation_response;
use ctakit::selector::select_definitions;
use ctakit::serializer::serialize_table;
use ctakit::{HashEmbedder, SerializationOptions};

fn serialize(c: &mut Criterion) {
    let mut group = c.benchmark_group("serialize_table");
    for width in [4, 16, 64] {
        let corpus = ctakit_bench::corpus(1, width, 20, 50);
        let table = &corpus.tables[0];
        let opts = SerializationOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(width), table, |b, t| {
            b.iter(|| serialize_table(black_box(t), &opts))
        });
    }
    group.finish();
}

fn parse(c: &mut Criterion) {
    let corpus = ctakit_bench::corpus(1, 16, 3, 50);
    let table = &corpus.tables[0];
    let text = ctakit_bench::answer(table);
    let columns: Vec<usize> = (0..16).collect();
    c.bench_function("parse_annotation_response/16", |b| {
        b.iter(|| parse_annotation_response(black_box(&text), &corpus.vocabulary, &columns, false).unwrap())
    });
}

fn scoring(c: &mut Criterion) {
    let mut group = c.benchmark_group("score");
    for n in [100, 1000] {
        let corpus = ctakit_bench::corpus(n, 8, 2, 91);
        let run = ctakit_bench::run(&corpus);
        group.bench_with_input(BenchmarkId::from_parameter(n), &run, |b, r| {
            b.iter(|| score(black_box(r), &corpus).unwrap())
        });
    }
    group.finish();
}

fn selection(c: &mut Criterion) {
    let corpus = ctakit_bench::corpus(1, 8, 5, 91);
    let defs = ctakit_bench::definitions(&corpus);
    let embedder = HashEmbedder::new(ctakit::selector::HASH_DIM);
    let opts = SerializationOptions::default();
    c.bench_function("select_definitions/91", |b| {
        b.iter(|| select_definitions(black_box(&corpus.tables[0]), &defs, &embedder, 10, &opts).unwrap())
    });
}

criterion_group!(benches, serialize, parse, scoring, selection);
criterion_main!(benches);
