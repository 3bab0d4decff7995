//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measured runtime. Oracles here are written independently of
//! the library code paths they check.

use std::time::Instant;

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;

use ausculta::audio::{AudioClip, InstanceKind, Label};
use ausculta::dsp::{
    self, amplitude_scale, hz_to_mel, mask_time_freq, mel_spectrogram, mel_spectrogram_power,
    resample, AugmentationPolicy, MelParams, MelSpectrogram,
};
use ausculta::encoders::quantile_pool;
use ausculta::encoders::{SpecBackbone, SpecEncoderConfig, WaveBackbone, WaveEncoderConfig};
use ausculta::fusion::FusionConfig;
use ausculta::metrics::compute_auc;
use ausculta::model::{ExperimentModel, ModelConfig, ModelInput, Representation};
use ausculta::nn::attention::MultiheadSelfAttention;
use ausculta::nn::gradcheck::{check_param_gradients, GradCheckSettings};
use ausculta::nn::ops::bce_with_logits;
use ausculta::nn::{zero_grads, Net};
use ausculta::rng::stream;
use ausculta::training::split_folds;
use ausculta::RngSeed;

fn clip_of(samples: Vec<f64>, rate: u32) -> AudioClip<f64> {
    AudioClip {
        samples,
        sample_rate: rate,
        subject_id: "acc".into(),
        instance: InstanceKind::HeavyCough,
        label: Label::Negative,
    }
}

/// Criterion 1: attention rows are stochastic and the vectorized forward
/// matches a naive loop-based oracle, over 1000 random token sets.
#[test]
fn criterion_01_attention_correctness() {
    let t0 = Instant::now();
    let mut rng = stream(RngSeed(101), "acc1", &[], &[]);
    let mut checked = 0usize;
    for trial in 0..1000u64 {
        let c = rng.gen_range(1..=16usize);
        let h = [1usize, 2, 4][rng.gen_range(0..3)];
        let dim = if trial % 2 == 0 { 128 } else { 256 };
        let msa = MultiheadSelfAttention::<f64>::new(dim, h, &mut rng).unwrap();
        let x = Array3::from_shape_fn((1, c, dim), |_| rng.gen_range(-1.5..1.5));
        let (y, cache) = msa.forward(&x);

        for b in 0..1 {
            for head in 0..h {
                let w = cache.attention(b, head, h);
                for row in w.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-6, "row sum off at trial {trial}");
                }
            }
        }

        // independent loop-based oracle
        let dh = dim / h;
        let wq = msa.wq.v2();
        let wk = msa.wk.v2();
        let wv = msa.wv.v2();
        let mut oracle = Array3::<f64>::zeros((1, c, dim));
        for head in 0..h {
            let col0 = head * dh;
            // project
            let mut q = vec![vec![0.0; dh]; c];
            let mut k = vec![vec![0.0; dh]; c];
            let mut v = vec![vec![0.0; dh]; c];
            for i in 0..c {
                for j in 0..dh {
                    let (mut aq, mut ak, mut av) = (0.0, 0.0, 0.0);
                    for e in 0..dim {
                        aq += x[(0, i, e)] * wq[(e, col0 + j)];
                        ak += x[(0, i, e)] * wk[(e, col0 + j)];
                        av += x[(0, i, e)] * wv[(e, col0 + j)];
                    }
                    q[i][j] = aq;
                    k[i][j] = ak;
                    v[i][j] = av;
                }
            }
            // scaled dot-product attention with a plain softmax
            let scale = 1.0 / (dh as f64).sqrt();
            for i in 0..c {
                let mut logits = vec![0.0; c];
                for jj in 0..c {
                    let mut dot = 0.0;
                    for e in 0..dh {
                        dot += q[i][e] * k[jj][e];
                    }
                    logits[jj] = dot * scale;
                }
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                for j in 0..dh {
                    let mut acc = 0.0;
                    for jj in 0..c {
                        acc += exps[jj] / z * v[jj][j];
                    }
                    oracle[(0, i, col0 + j)] = acc;
                }
            }
        }
        for (a, b) in y.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-6, "oracle mismatch at trial {trial}: {a} vs {b}");
        }
        checked += 1;
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 30.0, "criterion 1 exceeded its 30 s budget: {dt:.1}s");
    println!("ACCEPTANCE 01 attention-correctness: PASS ({checked} token sets, {dt:.1}s)");
}

fn micro_model_config(repr: Representation, c: usize, attention: bool) -> ModelConfig {
    let wave = WaveEncoderConfig {
        channels: vec![6, 8],
        kernels: vec![16, 4],
        strides: vec![16, 4],
        input_len: 512,
        ..Default::default()
    };
    let spec = SpecEncoderConfig {
        n_mels: 16,
        n_frames: 20,
        patch: 8,
        embed_dim: 16,
        layers: 2,
        heads: 2,
        mlp_hidden: 24,
        ..Default::default()
    };
    ModelConfig {
        representation: repr,
        n_instances: c,
        wave_backbone: repr.uses_wave().then(|| WaveBackbone::ScratchConv(wave)),
        spec_backbone: repr.uses_spec().then(|| SpecBackbone::ScratchPatchTransformer(spec)),
        fusion: FusionConfig {
            attention,
            heads: 4,
            mlp_hidden: 24,
            instance_embedding: false,
        },
    }
}

fn micro_input(cfg: &ModelConfig, batch: usize, rng: &mut impl Rng) -> ModelInput<f64> {
    let c = cfg.n_instances;
    let mut input = ModelInput::default();
    if cfg.representation.uses_wave() {
        input.wave =
            Some(Array3::from_shape_fn((batch, c, 512), |_| rng.gen_range(-0.5..0.5)));
    }
    if cfg.representation.uses_spec() {
        input.spec =
            Some(Array4::from_shape_fn((batch, c, 16, 20), |_| rng.gen_range(-1.0..1.0)));
    }
    input
}

/// Criterion 2: analytic gradients match central finite differences at
/// float64 on >= 20 random micro-inputs, covering the fusion unit, both
/// scratch encoders, and the classifier.
#[test]
fn criterion_02_gradient_checks() {
    let t0 = Instant::now();
    let settings = GradCheckSettings {
        step: 1e-5,
        tolerance: 1e-4,
        floor: 1e-6,
        samples_per_param: 3,
    };
    let configs = [
        micro_model_config(Representation::Dual, 2, true),
        micro_model_config(Representation::Waveform, 3, true),
        micro_model_config(Representation::Spectrogram, 2, true),
        micro_model_config(Representation::Dual, 1, false),
    ];
    let mut inputs_checked = 0usize;
    let mut coords = 0usize;
    let mut worst: f64 = 0.0;
    for (ci, cfg) in configs.iter().enumerate() {
        for round in 0..6u64 {
            let mut rng = stream(RngSeed(7), "acc2", &[], &[ci as u64, round]);
            let mut model =
                ExperimentModel::<f64>::new(cfg.clone(), RngSeed(1000 + round)).unwrap();
            let batch = 2;
            let input = micro_input(cfg, batch, &mut rng);
            let targets =
                Array1::from_shape_fn(batch, |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });

            let loss_in = input.clone();
            let tgt = targets.clone();
            let mut forward_loss = |m: &mut ExperimentModel<f64>| {
                let (logits, _) = m.forward(&loss_in).unwrap();
                bce_with_logits(&logits, &tgt).0
            };
            let bwd_in = input.clone();
            let tgt2 = targets.clone();
            let mut backward_pass = |m: &mut ExperimentModel<f64>| {
                zero_grads(m);
                let (logits, cache) = m.forward(&bwd_in).unwrap();
                let (_, dlogits) = bce_with_logits(&logits, &tgt2);
                m.backward(&cache, &dlogits).unwrap();
            };
            let report = check_param_gradients(
                &mut model,
                &mut forward_loss,
                &mut backward_pass,
                &settings,
                &mut rng,
            );
            assert!(
                report.passed(settings.tolerance),
                "config {ci} round {round}: max rel err {} at {}",
                report.max_rel_err,
                report.worst
            );
            worst = worst.max(report.max_rel_err);
            coords += report.checked;
            inputs_checked += 1;
        }
    }

    // input gradients: d loss / d model input vs finite differences
    let cfg = micro_model_config(Representation::Dual, 2, true);
    let mut rng = stream(RngSeed(8), "acc2-in", &[], &[]);
    let mut model = ExperimentModel::<f64>::new(cfg.clone(), RngSeed(77)).unwrap();
    let input = micro_input(&cfg, 2, &mut rng);
    let targets = Array1::from_vec(vec![1.0, 0.0]);
    zero_grads(&mut model);
    let (logits, cache) = model.forward(&input).unwrap();
    let (_, dlogits) = bce_with_logits(&logits, &targets);
    let grads = model.backward(&cache, &dlogits).unwrap();
    let h = 1e-5;
    for _ in 0..20 {
        let (b, c, i) = (rng.gen_range(0..2), rng.gen_range(0..2), rng.gen_range(0..512));
        let analytic = grads.wave.as_ref().unwrap()[(b, c, i)];
        let mut plus = input.clone();
        plus.wave.as_mut().unwrap()[(b, c, i)] += h;
        let (lp, _) = model.forward(&plus).unwrap();
        let mut minus = input.clone();
        minus.wave.as_mut().unwrap()[(b, c, i)] -= h;
        let (lm, _) = model.forward(&minus).unwrap();
        let fd = (bce_with_logits(&lp, &targets).0 - bce_with_logits(&lm, &targets).0)
            / (2.0 * h);
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
        assert!(rel < 1e-4, "input grad rel err {rel}");
        coords += 1;
    }

    let dt = t0.elapsed().as_secs_f64();
    assert!(inputs_checked >= 20, "only {inputs_checked} micro-inputs");
    assert!(dt < 120.0, "criterion 2 exceeded its 2 min budget: {dt:.1}s");
    println!(
        "ACCEPTANCE 02 gradient-checks: PASS ({inputs_checked} micro-inputs, {coords} coords, max rel err {worst:.2e}, {dt:.1}s)"
    );
}

/// Criterion 3: exact pipeline shapes.
#[test]
fn criterion_03_spectrogram_contract() {
    let t0 = Instant::now();
    let four_sec_44k = clip_of(vec![0.3; 4 * 44100], 44100);
    let spec = mel_spectrogram(&four_sec_44k, &MelParams::default()).unwrap();
    assert_eq!(spec.values.dim(), (128, 173));

    let wave = resample(&four_sec_44k, 8000).unwrap();
    assert_eq!(wave.samples.len(), 32000);
    println!(
        "ACCEPTANCE 03 spectrogram-contract: PASS (128 x 173, 32000 samples, {:.2}s)",
        t0.elapsed().as_secs_f64()
    );
}

/// Criterion 4: mel formula values and monotonicity.
#[test]
fn criterion_04_mel_formula() {
    let t0 = Instant::now();
    assert_eq!(hz_to_mel(0.0f64).unwrap(), 0.0);
    let m700 = hz_to_mel(700.0f64).unwrap();
    assert!((m700 - 1127.0 * std::f64::consts::LN_2).abs() < 1e-9);
    let mut prev = f64::NEG_INFINITY;
    for i in 0..10000 {
        let f = 22050.0 * i as f64 / 9999.0;
        let m = hz_to_mel(f).unwrap();
        assert!(m > prev);
        prev = m;
    }
    println!(
        "ACCEPTANCE 04 mel-formula: PASS (hz_to_mel(700) = {m700:.9}, {:.2}s)",
        t0.elapsed().as_secs_f64()
    );
}

/// Criterion 5: quantile pooling equals a sort-based oracle exactly.
#[test]
fn criterion_05_quantile_pooling() {
    let t0 = Instant::now();
    let mut rng = stream(RngSeed(55), "acc5", &[], &[]);
    for trial in 0..1000u64 {
        let t = if trial % 10 == 0 { 1 } else { rng.gen_range(1..200usize) };
        let d = rng.gen_range(1..24usize);
        let frames = Array2::from_shape_fn((t, d), |_| rng.gen_range(-5.0..5.0f64));
        let (pooled, _) = quantile_pool(&frames.view(), 0.1, 0.9).unwrap();
        for c in 0..d {
            let mut col: Vec<f64> = (0..t).map(|i| frames[(i, c)]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (row, q) in [(0usize, 0.1f64), (1, 0.9)] {
                let pos = q * (t - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(t - 1);
                let frac = pos - lo as f64;
                let oracle = col[lo] * (1.0 - frac) + col[hi] * frac;
                assert!(
                    (pooled[(row, c)] - oracle).abs() <= 1e-12,
                    "trial {trial} channel {c}: {} vs {oracle}",
                    pooled[(row, c)]
                );
            }
        }
    }
    println!(
        "ACCEPTANCE 05 quantile-pooling: PASS (1000 matrices, {:.2}s)",
        t0.elapsed().as_secs_f64()
    );
}

/// Criterion 6: AUC equals pairwise brute force within 1e-12.
#[test]
fn criterion_06_auc_oracle() {
    let t0 = Instant::now();
    let mut rng = stream(RngSeed(66), "acc6", &[], &[]);
    for trial in 0..500u64 {
        let n = rng.gen_range(2..=200usize);
        // draw from a small grid so ties are common
        let levels = rng.gen_range(2..30u32);
        let scores: Vec<f64> =
            (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.35)).collect();
        labels[0] = true;
        labels[n - 1] = false;

        let fast = compute_auc(&scores, &labels).unwrap();
        let mut num = 0.0f64;
        let mut pairs = 0.0f64;
        for i in 0..n {
            if !labels[i] {
                continue;
            }
            for j in 0..n {
                if labels[j] {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        let brute = num / pairs;
        assert!((fast - brute).abs() < 1e-12, "trial {trial}: {fast} vs {brute}");
    }
    println!(
        "ACCEPTANCE 06 auc-oracle: PASS (500 score sets, {:.2}s)",
        t0.elapsed().as_secs_f64()
    );
}

/// Criterion 7: split integrity over 100 seeded splits.
#[test]
fn criterion_07_split_integrity() {
    use ausculta::manifest::{Manifest, ManifestRecord};
    let t0 = Instant::now();
    let mut rng = stream(RngSeed(77), "acc7", &[], &[]);
    for round in 0..100u64 {
        let n_neg = rng.gen_range(20..200usize);
        let n_pos = rng.gen_range(7..60usize);
        let records: Vec<ManifestRecord> = (0..n_neg + n_pos)
            .map(|i| ManifestRecord {
                subject_id: format!("s{i:04}"),
                label: if i < n_neg { Label::Negative } else { Label::Positive },
                instance: InstanceKind::HeavyCough,
                path: format!("s{i:04}.wav").into(),
                duration_sec: 4.0,
                sample_rate: 44100,
            })
            .collect();
        let manifest = Manifest::new(records).unwrap();
        let frac = rng.gen_range(0.1..0.3);
        let split = split_folds(&manifest, frac, 5, RngSeed(round)).unwrap();

        // zero leakage between test and any fold, and across folds
        split.validate_disjoint().unwrap();
        // every non-test subject validated exactly once across trials
        let mut seen = std::collections::HashMap::new();
        for trial in 1..=5 {
            let train = split.train_subjects(trial).unwrap();
            let val = split.validation_subjects(trial).unwrap();
            for s in val {
                assert!(!train.contains(s), "train/val overlap");
                assert!(!split.test_subjects.contains(s), "test/val overlap");
                *seen.entry(s.clone()).or_insert(0) += 1;
            }
        }
        let non_test = n_neg + n_pos - split.test_subjects.len();
        assert_eq!(seen.len(), non_test);
        assert!(seen.values().all(|&v| v == 1));
        // fold sizes differ by at most one
        let sizes: Vec<usize> = split.folds.iter().map(|f| f.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
    println!(
        "ACCEPTANCE 07 split-integrity: PASS (100 splits, {:.2}s)",
        t0.elapsed().as_secs_f64()
    );
}

/// Criterion 8: augmentation contracts.
#[test]
fn criterion_08_augmentation_contracts() {
    let t0 = Instant::now();
    let policy = AugmentationPolicy::default();

    // gains within [0.9, 1.3] over 1000 draws
    let clip = clip_of((0..8000).map(|i| ((i % 71) as f64 - 35.0) / 40.0).collect(), 8000);
    let mut rng = stream(RngSeed(88), "acc8-gain", &[], &[]);
    let peak_in = clip.samples.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    for _ in 0..1000 {
        let (out, g) = amplitude_scale(&clip, &policy, &mut rng);
        assert!((0.9..=1.3).contains(&g));
        let peak_out = out.samples.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let ratio = peak_out / peak_in;
        assert!((0.9 - 1e-9..=1.3 + 1e-9).contains(&ratio));
    }

    // masking zeroes exactly one 10-frame and one 10-bin contiguous block
    let mut rng = stream(RngSeed(88), "acc8-mask", &[], &[]);
    let spec = MelSpectrogram::<f64> {
        values: Array2::from_shape_fn((128, 173), |_| rng.gen_range(0.05..1.0)),
        params: MelParams::default(),
        log_compressed: false,
    };
    for _ in 0..50 {
        let out = mask_time_freq(&spec, &policy, &mut rng).unwrap();
        let zero_cols: Vec<usize> =
            (0..173).filter(|&t| (0..128).all(|m| out.values[(m, t)] == 0.0)).collect();
        let zero_rows: Vec<usize> =
            (0..128).filter(|&m| (0..173).all(|t| out.values[(m, t)] == 0.0)).collect();
        assert_eq!(zero_cols.len(), 10);
        assert_eq!(zero_rows.len(), 10);
        assert!(zero_cols.windows(2).all(|w| w[1] == w[0] + 1));
        assert!(zero_rows.windows(2).all(|w| w[1] == w[0] + 1));
        let changed = spec
            .values
            .iter()
            .zip(out.values.iter())
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 10 * 173 + 10 * 128 - 100);
    }

    // pre-log mel power of g x equals g^2 times mel power of x (1e-6 rel)
    let mut rng = stream(RngSeed(88), "acc8-mel", &[], &[]);
    let samples: Vec<f64> = (0..44100).map(|_| rng.gen_range(-0.6..0.6)).collect();
    let clip = clip_of(samples, 44100);
    for g in [0.9, 1.07, 1.3] {
        let scaled = clip.with_samples(clip.samples.iter().map(|&s| s * g).collect(), 44100);
        let base = mel_spectrogram_power(&clip, &MelParams::default()).unwrap();
        let out = mel_spectrogram_power(&scaled, &MelParams::default()).unwrap();
        for (a, b) in base.values.iter().zip(out.values.iter()) {
            let expect = a * g * g;
            assert!((b - expect).abs() <= 1e-6 * expect.abs().max(1e-300));
        }
    }
    println!(
        "ACCEPTANCE 08 augmentation-contracts: PASS ({:.2}s)",
        t0.elapsed().as_secs_f64()
    );
}

/// Criterion 10: bit-level training determinism for identical seeds.
#[test]
fn criterion_10_determinism() {
    use ausculta::synth::{generate_and_ingest, SynthSpec};
    use ausculta::training::experiment::{run_experiment, ExperimentConfig, MatrixRow};

    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { n_subjects: 36, class_balance: 0.5, seed: 23, ..Default::default() };
    let (manifest, _, _) = generate_and_ingest(&spec, dir.path()).unwrap();
    let split = split_folds(&manifest, 0.25, 5, RngSeed(23)).unwrap();

    let mut cfg =
        ExperimentConfig::for_row(MatrixRow::Ba2, None, Some(InstanceKind::HeavyCough), 23);
    cfg.train.epochs = 3;
    cfg.train.warmup_epochs = 1;
    cfg.train.batch_size = 8;
    cfg.train.base_lr = 5e-4;

    let run = || {
        let results =
            run_experiment::<ausculta::Real>(&cfg, &manifest, &split, &[1], false).unwrap();
        let r = results.into_iter().next().unwrap();
        (r.logs[0].train_loss, r.report)
    };
    let (loss_a, report_a) = run();
    let (loss_b, report_b) = run();

    assert!(
        (loss_a - loss_b).abs() < 1e-6,
        "epoch-0 losses differ: {loss_a} vs {loss_b}"
    );
    assert_eq!(report_a, report_b, "final reports differ");
    println!(
        "ACCEPTANCE 10 determinism: PASS (epoch-0 loss {loss_a:.6}, AUC {:.4}, {:.1}s)",
        report_a.auc,
        t0.elapsed().as_secs_f64()
    );
}
