use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shapereg_bench::{random_points, random_tensor};
use shapereg_core::data::{generate_synthetic, SyntheticConfig};
use shapereg_core::experiment::{ExperimentConfig, Model, ModelKind};
use shapereg_core::gnn::{knn, GnnConfig};
use shapereg_core::tensor::Conv2dParams;
use shapereg_core::Tensor;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [32, 128, 240] {
        let a = random_tensor(&[n, 64], 1);
        let b = random_tensor(&[64, 64], 2);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()))
        });
    }
    g.finish();
}

fn conv2d(c: &mut Criterion) {
    let x = random_tensor(&[16, 32, 32], 3);
    let k = random_tensor(&[32, 16, 3, 3], 4);
    let p = Conv2dParams { padding: 1, ..Default::default() };
    c.bench_function("conv2d_16x32x32_to_32", |b| b.iter(|| black_box(x.conv2d(&k, p).unwrap())));
    c.bench_function("conv2d_backward", |b| {
        b.iter(|| {
            let xv = Tensor::param(x.shape(), x.data().to_vec()).unwrap();
            let y = xv.conv2d(&k, p).unwrap().sum();
            black_box(y.backward().unwrap())
        })
    });
}

fn knn_graph(c: &mut Criterion) {
    let pts = random_points(240, 64.0, 5);
    for k in [8, 16] {
        c.bench_function(&format!("knn_240_k{k}"), |b| b.iter(|| black_box(knn(&pts, k).unwrap())));
    }
}

fn forward_pass(c: &mut Criterion) {
    let ds = generate_synthetic(&SyntheticConfig { n_train: 8, n_test: 1, ..Default::default() }, 0).unwrap();
    let shapes = ds.train_shapes();
    let image = ds.image_tensor(0);
    let mut g = c.benchmark_group("forward");
    g.sample_size(20);
    for kind in [ModelKind::PointTransformer, ModelKind::PointNet, ModelKind::PixelBaseline] {
        let cfg = ExperimentConfig {
            model: kind,
            gnn: GnnConfig { k_neighbors: 8, n_layers: 1, feature_dim: 32 },
            ..Default::default()
        };
        let model = Model::new(&cfg, &shapes, 64).unwrap();
        g.bench_function(kind.as_str(), |b| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            b.iter(|| {
                let p = model.params.bind(false);
                black_box(model.forward(&p, &image, &shapes[1], &mut rng).unwrap());
            })
        });
    }
    g.finish();
}

criterion_group!(benches, matmul, conv2d, knn_graph, forward_pass);
criterion_main!(benches);
