use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zspad_core::bscan::Label;
use zspad_core::evaluator::{eval_score, LabeledScore};
use zspad_core::scorer::{iou_score, Polarity, ScanGaussian};
use zspad_core::{build_model, nlm_denoise, AEConfig, BScan, PreprocessConfig};

fn noisy(h: usize, w: usize, seed: u64) -> BScan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BScan::new(w, h, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn denoise(c: &mut Criterion) {
    let img = noisy(64, 192, 1);
    let cfg = PreprocessConfig::default();
    c.bench_function("nlm_denoise 64x192", |b| b.iter(|| nlm_denoise(black_box(&img), &cfg).unwrap()));
}

fn autoencoder(c: &mut Criterion) {
    let model = build_model(&AEConfig::default()).unwrap();
    let img = noisy(64, 192, 2);
    c.bench_function("reconstruct 64x192", |b| b.iter(|| model.reconstruct(black_box(&img)).unwrap()));
    c.bench_function("loss_and_gradient 64x192", |b| {
        b.iter(|| model.loss_and_gradient(black_box(&img)).unwrap())
    });
}

fn scoring(c: &mut Criterion) {
    let (p, q) = (ScanGaussian::new(0.01, 0.002), ScanGaussian::new(0.013, 0.004));
    c.bench_function("iou_score", |b| b.iter(|| iou_score(black_box(&p), black_box(&q)).unwrap()));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<LabeledScore> = (0..300)
        .map(|i| LabeledScore {
            scan_id: format!("v{i}"),
            truth: if i % 2 == 0 { Label::Bonafide } else { Label::PresentationAttack },
            value: rng.random_range(0.0..1.0) + (i % 2) as f64 * 0.3,
            polarity: Polarity::LargerIsAttack,
        })
        .collect();
    c.bench_function("eval_score 300 volumes", |b| b.iter(|| eval_score(black_box(&scores)).unwrap()));
}

criterion_group!(benches, denoise, autoencoder, scoring);
criterion_main!(benches);
