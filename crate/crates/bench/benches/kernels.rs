use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fairicd::counterfactual::{augment_graph, find_counterfactuals};
use fairicd::dataset::standardize_features;
use fairicd::gnn::{stream_rng, LayerKind, Model, Propagation};
use fairicd::pipeline::{generate_synthetic, SyntheticConfig};
use fairicd::Dataset;
use std::hint::black_box;

fn dataset(n: usize) -> Dataset {
    generate_synthetic(&SyntheticConfig { n, ..Default::default() }).unwrap()
}

fn knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("find_counterfactuals");
    group.sample_size(10);
    for n in [500, 2000] {
        let ds = dataset(n);
        let x = standardize_features(&ds.features, &[]);
        group.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| find_counterfactuals(black_box(x), &ds.sensitive, 10, &[]).unwrap())
        });
    }
    group.finish();
}

fn rewiring(c: &mut Criterion) {
    let ds = dataset(2000);
    let x = standardize_features(&ds.features, &[]);
    let cf = find_counterfactuals(&x, &ds.sensitive, 10, &[]).unwrap();
    c.bench_function("augment_graph/2000", |b| {
        b.iter(|| augment_graph(black_box(&ds.graph), &ds.sensitive, &cf).unwrap())
    });
}

fn propagation(c: &mut Criterion) {
    let ds = dataset(2000);
    let prop = Propagation::new(&ds.graph);
    let h = standardize_features(&ds.features, &[]);
    c.bench_function("spmm/adjacency/2000x16", |b| b.iter(|| ds.graph.spmm(black_box(&h)).unwrap()));
    let mut group = c.benchmark_group("forward_backward");
    for kind in [LayerKind::Gcn, LayerKind::Gin, LayerKind::Sage] {
        let model = Model::build(kind, LayerKind::Dense, &[h.cols(), 16, 16, 2], 0.5, &mut stream_rng(0, 1));
        group.bench_function(kind.as_str(), |b| {
            b.iter(|| {
                let mut rng = stream_rng(0, 2);
                let (out, trace) = model.forward(&h, Some(&prop), Some(&mut rng)).unwrap();
                trace.backward(&model, Some(&prop), &out, None, false).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, knn, rewiring, propagation);
criterion_main!(benches);
