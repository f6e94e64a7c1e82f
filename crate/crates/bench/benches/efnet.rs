use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use csifb_core::efnet::{backward, AdamHyper, AdamState, EfnetConfig, EfnetModel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut impl Rng, h: usize, w: usize) -> Tensor {
    Tensor::from_vec(h, w, 2, (0..h * w * 2).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_forward(c: &mut Criterion) {
    let model = EfnetModel::init(EfnetConfig::default(), 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random_tensor(&mut rng, 3, 28);
    let code = model.encode_tensor(&x).unwrap();
    c.bench_function("efnet_encode", |b| b.iter(|| model.encode_tensor(black_box(&x)).unwrap()));
    c.bench_function("efnet_decode", |b| b.iter(|| model.decode_tensor(black_box(&code)).unwrap()));
}

fn bench_train_step(c: &mut Criterion) {
    let cfg = EfnetConfig::default();
    let mut model = EfnetModel::init(cfg.clone(), 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch: Vec<_> = (0..32).map(|_| random_tensor(&mut rng, 3, 28)).collect();
    let hyper = AdamHyper { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps };
    let mut adam = AdamState::new(model.n_params());
    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    g.bench_function("batch32", |b| {
        b.iter(|| {
            let (_, grad) = backward(&model, black_box(&batch)).unwrap();
            adam.step(&hyper, model.params_mut(), &grad);
        })
    });
    g.finish();
}

criterion_group!(benches, bench_forward, bench_train_step);
criterion_main!(benches);
