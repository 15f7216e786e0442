use archrank::data::{generate_patterns, hog_features, HogConfig, PatternsConfig};
use archrank::engine::{sgd_step, Network, SgdConfig};
use archrank::metrics::spearman;
use archrank::proxies::compute_proxy;
use archrank::space::build_network;
use archrank::{ArchId, CellSpec, MacroConfig, ProxyKind};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use std::hint::black_box;

const BATCH: usize = 64;

fn desk_macro() -> MacroConfig {
    MacroConfig {
        init_channels: 4,
        image_hw: 8,
        ..MacroConfig::desk()
    }
}

fn all_conv3x3() -> ArchId {
    "|nor_conv_3x3~0|+|nor_conv_3x3~0|nor_conv_3x3~1|+|nor_conv_3x3~0|nor_conv_3x3~1|nor_conv_3x3~2|"
        .parse::<CellSpec>()
        .unwrap()
        .encode()
}

fn batch() -> (Vec<f32>, Vec<usize>) {
    let ds = generate_patterns(&PatternsConfig::desk(2 * BATCH, BATCH, 8), 0)
        .unwrap()
        .normalize()
        .unwrap();
    ds.gather(ds.train())
}

fn net(arch: ArchId) -> Network<f32> {
    build_network(&arch.decode(), &desk_macro(), 0).unwrap()
}

fn train_step(c: &mut Criterion) {
    let (x, y) = batch();
    let sgd = SgdConfig::default().with_total_steps(1_000_000);
    let mut g = c.benchmark_group("train_step");
    for (name, arch) in [("all_conv3x3", all_conv3x3()), ("id_7000", ArchId::new(7000).unwrap())] {
        let mut n = net(arch);
        let mut step = 0;
        g.bench_function(name, |b| {
            b.iter(|| {
                n.loss_and_backward(black_box(&x), &y).unwrap();
                sgd_step(&mut n, step, &sgd).unwrap();
                step += 1;
            })
        });
    }
    g.finish();
}

fn proxies(c: &mut Criterion) {
    let (x, y) = batch();
    let n = net(all_conv3x3());
    let mut g = c.benchmark_group("proxy");
    g.sample_size(20);
    for kind in [ProxyKind::Synflow, ProxyKind::Snip, ProxyKind::Grasp, ProxyKind::JacobCov] {
        g.bench_function(format!("{kind:?}"), |b| {
            b.iter_batched(|| n.clone(), |n| compute_proxy(kind, &n, &x, &y).unwrap(), BatchSize::LargeInput)
        });
    }
    g.finish();
}

fn ranking(c: &mut Criterion) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let a: Vec<f64> = (0..1000).map(|_| rng.random_range(0..100) as f64).collect();
    let b: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
    c.bench_function("spearman_1000_tied", |bench| bench.iter(|| spearman(black_box(&a), black_box(&b)).unwrap()));
}

fn hog(c: &mut Criterion) {
    let (x, _) = batch();
    let cfg = HogConfig { cell: 2, ..HogConfig::default() };
    c.bench_function("hog_8x8_cell2", |b| b.iter(|| hog_features(black_box(&x[..192]), 3, 8, &cfg).unwrap()));
}

criterion_group!(benches, train_step, proxies, ranking, hog);
criterion_main!(benches);
