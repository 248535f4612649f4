//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use zspad_core::autoencoder::{build_model, AEConfig, Tensor3};
use zspad_core::bscan::{BScan, Label};
use zspad_core::evaluator::{eval_score, EvalReport, LabeledScore};
use zspad_core::finemap::{analyse_bscan, fine_map, refined_error, SaliencyMap};
use zspad_core::pipeline::{self, EvalSelection, PipelineConfig, SummaryRow};
use zspad_core::preprocess::{nlm_denoise, preprocess_volume, resize_bilinear, PreprocessConfig};
use zspad_core::scorer::{fit_scan_gaussian, iou_score, kl_divergence, score_volume, Polarity, ScanGaussian};
use zspad_core::synth::{generate_dataset, generate_volume, DatasetCounts, Preset, SynthParams};
use zspad_core::{derive_seed, load_model, raw_error, AutoencoderModel, FeatureMapSet};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: impl Into<String>) -> Outcome {
    let o = Outcome {
        name,
        pass,
        detail: detail.into(),
    };
    println!("[{}] {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    o
}

fn gaussian_mle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=10_000);
        let scale = 10f64.powf(rng.random_range(-4.0..2.0));
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale + scale).collect();
        let g = fit_scan_gaussian(&xs).unwrap();
        // Welford as the oracle
        let (mut mean, mut m2) = (0.0, 0.0);
        for (k, &x) in xs.iter().enumerate() {
            let d = x - mean;
            mean += d / (k + 1) as f64;
            m2 += d * (x - mean);
        }
        let std = (m2 / n as f64).sqrt();
        worst = worst.max((g.m - mean).abs()).max((g.s - std).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "gaussian MLE oracle",
        worst <= 1e-9 && secs < 1.0,
        format!("max |diff| {worst:.3e} (tol 1e-9), {secs:.3}s (limit 1s)"),
    )
}

fn kl_suite() -> Outcome {
    let g = ScanGaussian::new;
    let self_kl = kl_divergence(&g(0.3, 0.7), &g(0.3, 0.7)).unwrap();
    let shift = kl_divergence(&g(0.0, 1.0), &g(1.0, 1.0)).unwrap();
    let widen = kl_divergence(&g(0.0, 1.0), &g(0.0, 2.0)).unwrap();
    let back = kl_divergence(&g(0.0, 2.0), &g(0.0, 1.0)).unwrap();
    let expect_widen = 2f64.ln() - 0.375;
    let pass = self_kl.abs() <= 1e-12
        && (shift - 0.5).abs() <= 1e-12
        && (widen - expect_widen).abs() <= 1e-12
        && (back - widen).abs() > 1e-3;
    outcome(
        "KL analytic suite",
        pass,
        format!("KL(p||p)={self_kl:.1e}, shift={shift}, widen={widen} vs {expect_widen}, reverse={back}"),
    )
}

fn iou_closed_form() -> Outcome {
    let phi = Normal::standard();
    let mut worst: f64 = 0.0;
    let mut asym: f64 = 0.0;
    for d in [0.0, 1.0, 2.0, 4.0] {
        for s in [0.5, 1.0, 3.0] {
            let p = ScanGaussian::new(1.0, s);
            let q = ScanGaussian::new(1.0 + d * s, s);
            let ov = 2.0 * phi.cdf(-d / 2.0);
            let expect = ov / (2.0 - ov);
            let got = iou_score(&p, &q).unwrap();
            worst = worst.max((got - expect).abs());
            asym = asym.max((got - iou_score(&q, &p).unwrap()).abs());
        }
    }
    outcome(
        "IoU integrator vs closed form",
        worst <= 1e-4 && asym <= 1e-9,
        format!("max |diff| {worst:.3e} (tol 1e-4), asymmetry {asym:.1e} (tol 1e-9)"),
    )
}

/// Straight four-loop non-local means with clamped borders.
fn nlm_oracle(img: &BScan, cfg: &PreprocessConfig) -> Vec<f64> {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let at = |y: isize, x: isize| img.get(y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize);
    let (t, s) = ((cfg.nlm_template / 2) as isize, (cfg.nlm_search / 2) as isize);
    let hh = (cfg.nlm_filter_strength / 255.0).powi(2);
    let mut out = Vec::with_capacity((h * w) as usize);
    for y in 0..h {
        for x in 0..w {
            let (mut num, mut den) = (0.0, 0.0);
            for qy in y - s..=y + s {
                for qx in x - s..=x + s {
                    let mut d2 = 0.0;
                    for oy in -t..=t {
                        for ox in -t..=t {
                            let d = at(y + oy, x + ox) - at(qy + oy, qx + ox);
                            d2 += d * d;
                        }
                    }
                    let wt = (-(d2 / ((2 * t + 1) * (2 * t + 1)) as f64) / hh).exp();
                    num += wt * at(qy, qx);
                    den += wt;
                }
            }
            out.push(num / den);
        }
    }
    out
}

fn nlm_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let windows = [(3, 7), (5, 11), (7, 21)];
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let (tw, sw) = windows[i % windows.len()];
        let (h, w) = (rng.random_range(tw..=16), rng.random_range(tw..=16));
        let img = BScan::new(w, h, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let cfg = PreprocessConfig {
            nlm_template: tw,
            nlm_search: sw,
            nlm_filter_strength: rng.random_range(10.0..120.0),
            ..PreprocessConfig::default()
        };
        let got = nlm_denoise(&img, &cfg).unwrap();
        for (a, b) in got.pixels().iter().zip(nlm_oracle(&img, &cfg)) {
            worst = worst.max((a - b).abs());
        }
    }
    let flat = BScan::filled(16, 12, 0.37).unwrap();
    let flat_out = nlm_denoise(&flat, &PreprocessConfig::default()).unwrap();
    let exact = flat_out.pixels().iter().all(|&v| v == 0.37);
    outcome(
        "NLM oracle equivalence",
        worst <= 1e-6 && exact,
        format!("max L-inf {worst:.3e} (tol 1e-6), constant image exact: {exact}"),
    )
}

fn resize_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let img = BScan::new(13, 7, (0..91).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let same = resize_bilinear(&img, 7, 13).unwrap();
    let identity = same.pixels() == img.pixels();
    let checker = BScan::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let one = resize_bilinear(&checker, 1, 1).unwrap().pixels()[0];
    outcome(
        "resize properties",
        identity && one == 0.5,
        format!("identity bit-exact: {identity}, checkerboard -> {one}"),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = AEConfig {
        input_height: 8,
        input_width: 16,
        encoder_blocks: 2,
        decoder_blocks: 3,
        base_channels: 2,
        atrous_rates: vec![1, 2],
        seed: 5,
        ..AEConfig::default()
    };
    let model = build_model(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let x = BScan::new(16, 8, (0..128).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let (_, grad) = model.loss_and_gradient(&x).unwrap();
    let step = 1e-4;
    let mut good = 0;
    let mut probe = model.clone();
    for i in 0..grad.len() {
        let p0 = probe.params()[i];
        probe.params_mut()[i] = p0 + step;
        let up = probe.loss(&x).unwrap();
        probe.params_mut()[i] = p0 - step;
        let down = probe.loss(&x).unwrap();
        probe.params_mut()[i] = p0;
        let numeric = (up - down) / (2.0 * step);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-8);
        if rel <= 1e-3 {
            good += 1;
        }
    }
    let frac = good as f64 / grad.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        "autoencoder gradient check",
        frac >= 0.95 && secs < 60.0,
        format!("{good}/{} parameters within 1e-3 ({:.1}%), {secs:.1}s", grad.len(), 100.0 * frac),
    )
}

fn finemap_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut violations = 0;
    let mut worst_ones: f64 = 0.0;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let n = h * w;
        let mut img = || BScan::new(w, h, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let (x, xhat) = (img(), img());
        let stack = Tensor3 {
            channels: 2,
            height: h,
            width: w,
            data: (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let map = fine_map(&FeatureMapSet { layers: vec![stack] }, h, w).unwrap();
        let raw = raw_error(&x, &xhat).unwrap();
        if refined_error(&x, &xhat, &map).unwrap() > raw {
            violations += 1;
        }
        let ones = SaliencyMap {
            height: h,
            width: w,
            values: vec![1.0; n],
        };
        worst_ones = worst_ones.max((refined_error(&x, &xhat, &ones).unwrap() - raw).abs());
    }
    outcome(
        "FineMap bound",
        violations == 0 && worst_ones <= 1e-12,
        format!("{violations} bound violations in 100 triples, all-ones |diff| {worst_ones:.1e}"),
    )
}

/// Every threshold that separates the sorted values, checked directly.
fn brute_force(scores: &[LabeledScore]) -> (f64, f64, f64) {
    let sign = if scores[0].polarity == Polarity::LargerIsAttack { 1.0 } else { -1.0 };
    let mut cuts: Vec<f64> = scores.iter().map(|s| sign * s.value).collect();
    cuts.push(f64::NEG_INFINITY);
    let bona = scores.iter().filter(|s| s.truth == Label::Bonafide).count() as f64;
    let pa = scores.len() as f64 - bona;
    let (mut err, mut t10, mut t5) = (f64::INFINITY, 0.0f64, 0.0f64);
    for tau in cuts {
        let acc_b = scores.iter().filter(|s| s.truth == Label::Bonafide && sign * s.value <= tau).count() as f64;
        let acc_a = scores.iter().filter(|s| s.truth != Label::Bonafide && sign * s.value <= tau).count() as f64;
        err = err.min((bona - acc_b + acc_a) / scores.len() as f64);
        let (tpr, fpr) = (acc_b / bona, acc_a / pa);
        if fpr <= 0.10 {
            t10 = t10.max(tpr);
        }
        if fpr <= 0.05 {
            t5 = t5.max(tpr);
        }
    }
    (err, t10, t5)
}

fn evaluator_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut mismatches = 0;
    let mut order_violations = 0;
    for i in 0..50 {
        let n = rng.random_range(2..=200);
        let polarity = if i % 2 == 0 { Polarity::LargerIsAttack } else { Polarity::LargerIsBonafide };
        let mut scores: Vec<LabeledScore> = (0..n)
            .map(|k| LabeledScore {
                scan_id: format!("s{k}"),
                truth: if rng.random_bool(0.5) { Label::Bonafide } else { Label::PresentationAttack },
                // coarse values so ties occur
                value: rng.random_range(0..40) as f64 / 4.0,
                polarity,
            })
            .collect();
        scores[0].truth = Label::Bonafide;
        scores[1].truth = Label::PresentationAttack;
        let r: EvalReport = eval_score(&scores).unwrap();
        if (r.err, r.tpr_at_fpr10, r.tpr_at_fpr5) != brute_force(&scores) {
            mismatches += 1;
        }
        if r.tpr_at_fpr5 > r.tpr_at_fpr10 {
            order_violations += 1;
        }
    }
    outcome(
        "evaluator oracle",
        mismatches == 0 && order_violations == 0,
        format!("{mismatches}/50 mismatches against brute force, {order_violations} tpr@5 > tpr@10"),
    )
}

struct Run {
    cfg: PipelineConfig,
    scores_csv: String,
    summary: Vec<SummaryRow>,
    secs: f64,
}

fn full_run(root: &Path, speckle: f64, denoise: bool) -> Run {
    let start = Instant::now();
    let counts = DatasetCounts {
        model: 8,
        score: 4,
        test_bonafide: 6,
        test_attack: 6,
        test_transparent: 0,
    };
    let params = SynthParams {
        seed: 7,
        height: 64,
        width: 192,
        bscans_per_volume: 16,
        speckle_sigma: speckle,
        ..SynthParams::default()
    };
    let data = root.join("data");
    generate_dataset(&data, 7, &counts.requests(), &params).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.seed = 7;
    cfg.ae.epochs = 20;
    cfg.preprocess.denoise_enabled = denoise;
    cfg.paths.data_dir = data;
    cfg.paths.model_path = root.join("model.ckpt");
    cfg.paths.calibration_path = root.join("calibration.txt");
    cfg.paths.report_dir = root.join("reports");
    pipeline::run_train(&cfg, |_| {}).unwrap();
    pipeline::run_calibrate(&cfg).unwrap();
    pipeline::run_score(&cfg, &cfg.scores_path()).unwrap();
    let summary = pipeline::run_eval(&cfg.scores_path(), &cfg.paths.report_dir, EvalSelection::All).unwrap();
    Run {
        scores_csv: fs::read_to_string(cfg.scores_path()).unwrap(),
        cfg,
        summary,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn ms_err(run: &Run) -> f64 {
    run.summary.iter().find(|r| r.name == "ms_score").expect("ms row").report.err
}

fn separation(run: &Run) -> Outcome {
    let ms = ms_err(run);
    let worst = run
        .summary
        .iter()
        .filter(|r| r.name != "ms_score")
        .map(|r| r.report.err)
        .fold(0.0, f64::max);
    let listing: Vec<String> = run.summary.iter().map(|r| format!("{}={:.3}", r.name, r.report.err)).collect();
    outcome(
        "end-to-end synthetic separation",
        ms <= 0.10 && worst <= 0.25 && run.secs <= 600.0,
        format!(
            "MS err {ms:.3} (<= 0.10), worst single score {worst:.3} (<= 0.25), {:.0}s; {}",
            run.secs,
            listing.join(" ")
        ),
    )
}

fn ablation(root: &Path) -> Outcome {
    let denoised = full_run(&root.join("denoise"), 0.2, true);
    let noisy = full_run(&root.join("noise"), 0.2, false);
    let (a, b) = (ms_err(&denoised), ms_err(&noisy));
    outcome(
        "ablation direction",
        b >= a,
        format!("speckle 0.2: MS err denoised {a:.3}, without denoising {b:.3}"),
    )
}

fn transparent_failure_mode(run: &Run) -> Outcome {
    let model: AutoencoderModel = load_model(&run.cfg.paths.model_path).unwrap();
    let cal = zspad_core::scorer::load_calibration(&run.cfg.paths.calibration_path, None).unwrap();
    let mut worst: f64 = 0.0;
    let mut missed = 0;
    for i in 0..2 {
        let params = SynthParams {
            seed: derive_seed(7, "transparent", i),
            preset: Preset::PaiTransparent,
            ..SynthParams::default()
        };
        let vol = generate_volume(&params).unwrap();
        let pre = preprocess_volume(&vol, &run.cfg.preprocess).unwrap();
        for b in pre.bscans() {
            worst = worst.max(analyse_bscan(&model, b).unwrap().1.std_dev());
        }
        let report = score_volume(&vol, &model, &run.cfg.preprocess, &cal, run.cfg.thresholds).unwrap();
        if report.ms_decision == zspad_core::Decision::Bonafide {
            missed += 1;
        }
    }
    outcome(
        "transparent failure-mode regression",
        worst < 0.1,
        format!("max saliency std {worst:.3} (< 0.1); {missed}/2 transparent volumes accepted as bonafide"),
    )
}

fn determinism(first: &Run, root: &Path) -> Outcome {
    let second = full_run(root, 0.1, true);
    let same = first.scores_csv == second.scores_csv;
    outcome(
        "determinism",
        same,
        format!("score CSVs byte-identical: {same} ({} bytes)", first.scores_csv.len()),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outcomes = vec![
        gaussian_mle(),
        kl_suite(),
        iou_closed_form(),
        nlm_equivalence(),
        resize_properties(),
        gradient_check(),
        finemap_bound(),
        evaluator_oracle(),
    ];
    let main_run = full_run(&tmp.path().join("main"), 0.1, true);
    outcomes.push(separation(&main_run));
    outcomes.push(ablation(&tmp.path().join("ablation")));
    outcomes.push(transparent_failure_mode(&main_run));
    outcomes.push(determinism(&main_run, &tmp.path().join("repeat")));

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    println!(
        "acceptance: {} passed, {} failed",
        outcomes.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        eprintln!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
