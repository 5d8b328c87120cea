use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use podfact_bench::{feed_xml, text_pair, triple};
use podfact_core::annotation::aggregate;
use podfact_core::feed::parse_feed;
use podfact_core::metrics::{align, error_rates, normalized_words};
use podfact_core::segment::split_sentences;
use podfact_core::synth::random_transcript;
use std::hint::black_box;

fn alignment(c: &mut Criterion) {
    let mut g = c.benchmark_group("align");
    for n in [10, 60, 500] {
        let (r, h) = text_pair(n as u64, n);
        let (rw, hw) = (normalized_words(&r), normalized_words(&h));
        g.throughput(Throughput::Elements((rw.len() * hw.len()) as u64));
        g.bench_with_input(BenchmarkId::new("words", n), &n, |b, _| b.iter(|| align(black_box(&rw), black_box(&hw))));
        g.bench_with_input(BenchmarkId::new("error_rates", n), &n, |b, _| {
            b.iter(|| error_rates(black_box(&r), black_box(&h)).unwrap())
        });
    }
    g.finish();
}

fn segmentation(c: &mut Criterion) {
    let mut g = c.benchmark_group("split_sentences");
    for n in [1_000, 20_000] {
        let t = random_transcript(7, n);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &t, |b, t| b.iter(|| split_sentences(t).unwrap()));
    }
    g.finish();
}

fn aggregation(c: &mut Criterion) {
    let (uid, unanimous) = triple(true);
    let (_, split) = triple(false);
    c.bench_function("aggregate/unanimous", |b| b.iter(|| aggregate(&uid, black_box(&unanimous))));
    c.bench_function("aggregate/split", |b| b.iter(|| aggregate(&uid, black_box(&split))));
}

fn feeds(c: &mut Criterion) {
    let mut g = c.benchmark_group("parse_feed");
    for items in [10, 500] {
        let xml = feed_xml(items);
        g.throughput(Throughput::Bytes(xml.len() as u64));
        g.bench_with_input(BenchmarkId::from_parameter(items), &xml, |b, xml| b.iter(|| parse_feed(xml).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, alignment, segmentation, aggregation, feeds);
criterion_main!(benches);
