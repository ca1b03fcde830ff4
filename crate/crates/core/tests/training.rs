use neuroheed::data::{MixtureExample, Segment, Split};
use neuroheed::dsp::{eeg_frames_for, energy_ratio_db, EegRecording};
use neuroheed::model::{load_checkpoint, save_checkpoint, ExtractorKind, Model, ModelConfig};
use neuroheed::numerics::{Adam, AdamConfig};
use neuroheed::training::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn example(seed: u64, samples: usize, trial: usize, start: usize) -> MixtureExample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sig = |f: f32| -> Vec<f32> {
        (0..samples)
            .map(|i| (i as f32 * f).sin() * 0.5 + rng.random_range(-0.3..0.3))
            .collect()
    };
    let target = sig(0.05);
    let interferer = sig(0.21);
    let mixture = target.iter().zip(&interferer).map(|(a, b)| a + b).collect();
    let frames = eeg_frames_for(samples);
    let data = (0..4 * frames).map(|_| rng.random_range(-1.0..1.0)).collect();
    MixtureExample {
        id: format!("ex{seed}"),
        split: Split::Train,
        attended: (seed % 2) as usize,
        segment: Segment { trial, start, len: samples },
        mixture,
        target,
        interferer,
        eeg: EegRecording::new(4, 128.0, data, true).unwrap(),
    }
}

fn tiny(kind: ExtractorKind) -> Model<f32> {
    Model::new(ModelConfig::reduced(kind), 11).unwrap()
}

fn quick(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        batch_size: 1,
        warmup_n: 200,
        lr_scale: 1.0,
        augment: false,
        buffer_range_s: (0.2, 0.6),
        steps_per_epoch: 3,
        max_epochs: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn warmup_schedule_values() {
    let cfg = TrainConfig::default();
    let first = lr_at(1, &cfg);
    assert!((first / 6.80e-9 - 1.0).abs() < 0.01, "{first}");
    let peak = lr_at(15_000, &cfg);
    assert!((peak / 1.0206e-4 - 1.0).abs() < 0.001, "{peak}");
    assert_eq!(lr_at(15_001, &cfg), peak);
    assert_eq!(lr_at(1_000_000, &cfg), peak);
    assert!((lr_at(14_999, &cfg) / peak - 1.0).abs() < 1e-4);
    assert_eq!(lr_at(0, &cfg), first);
    let c = LrController {
        halvings: 2,
        ..LrController::default()
    };
    assert!((c.lr(20_000, &cfg) / 2.55e-5 - 1.0).abs() < 0.001);
}

#[test]
fn plateau_halving_and_early_stop() {
    let cfg = TrainConfig::default();
    let mut c = LrController::default();
    assert!(c.on_epoch(5.0, &cfg).improved);
    for i in 1..=5 {
        let d = c.on_epoch(5.0, &cfg);
        assert!(!d.improved && !d.halved && !d.stop, "epoch {i}");
    }
    assert!(c.on_epoch(6.0, &cfg).halved);
    assert_eq!(c.halvings, 1);
    for _ in 0..3 {
        assert!(!c.on_epoch(5.5, &cfg).stop);
    }
    assert!(c.on_epoch(5.5, &cfg).stop);
    let d = c.on_epoch(4.0, &cfg);
    assert!(d.improved && !d.stop);
    assert_eq!(c.best, Some(4.0));
}

#[test]
fn training_windows_are_valid_and_seeded() {
    let cfg = TrainConfig::default();
    let len = 12 * 8000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut draws = Vec::new();
    for _ in 0..500 {
        let w = sample_training_window(len, &cfg, &mut rng).unwrap();
        assert!(w.m < w.k && w.k < w.n && w.n <= len);
        assert!([400, 800, 1600].contains(&(w.n - w.k)));
        assert!((8000..=80000).contains(&(w.k - w.m)));
        assert_eq!(w.eeg_k, eeg_frames_for(w.k));
        draws.push(w);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let again: Vec<_> = (0..500).map(|_| sample_training_window(len, &cfg, &mut rng).unwrap()).collect();
    assert_eq!(draws, again);
    assert_eq!(eeg_frames_for(8000), 128);

    let short = 12_000;
    for _ in 0..100 {
        let w = sample_training_window(short, &cfg, &mut rng).unwrap();
        assert!(w.n <= short && w.m < w.k);
    }
    assert!(sample_training_window(300, &cfg, &mut rng).is_none());
}

#[test]
fn augmentation_contract() {
    let pool: Vec<MixtureExample> = (0..4).map(|i| example(i, 8000, 0, i as usize * 8000)).collect();
    let ex = &pool[0];
    let off = TrainConfig {
        augment: false,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert_eq!(&augment_mixture(ex, &pool, &mut rng, &off).unwrap(), ex);
    let on = TrainConfig::default();
    for seed in 0..40 {
        let a = augment_mixture(ex, &pool, &mut ChaCha8Rng::seed_from_u64(seed), &on).unwrap();
        let b = augment_mixture(ex, &pool, &mut ChaCha8Rng::seed_from_u64(seed), &on).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.target, ex.target);
        let snr = energy_ratio_db(&a.target, &a.interferer);
        assert!((-10.0 - 1e-3..=10.0 + 1e-3).contains(&snr), "{snr}");
        for i in 0..a.mixture.len() {
            assert_eq!(a.mixture[i], a.target[i] + a.interferer[i]);
        }
    }
    // only the example itself in the pool: falls back to its own interferer
    let lone = augment_mixture(ex, std::slice::from_ref(ex), &mut ChaCha8Rng::seed_from_u64(3), &on).unwrap();
    let scale = lone.interferer[10] / ex.interferer[10];
    assert!((lone.interferer[100] - scale * ex.interferer[100]).abs() < 1e-5);
}

#[test]
fn pseudo_past_pass_contributes_no_gradient() {
    let m = Model::<f64>::new(ModelConfig::reduced(ExtractorKind::Dprnn), 3).unwrap();
    let ex = example(5, 3000, 0, 0);
    let x: Vec<f64> = ex.mixture.iter().map(|&v| v as f64).collect();
    let s: Vec<f64> = ex.target.iter().map(|&v| v as f64).collect();
    let w = TrainWindow {
        m: 1000,
        k: 2500,
        n: 3000,
        eeg_m: eeg_frames_for(1000),
        eeg_k: eeg_frames_for(2500),
        eeg_n: eeg_frames_for(3000),
    };
    let run = |p| two_pass_grads(&m.params, &m.config, &x, &ex.eeg, &s, &w, false, LossKind::SiSdr, p).unwrap();
    let a = run(Pass1::GradientFree);
    let b = run(Pass1::RecordedDetached);
    assert_eq!(a.passes, 2);
    assert_eq!(a.loss, b.loss);
    assert_eq!(a.grads, b.grads);
    assert!(a.grads.keys().any(|k| k.starts_with("spk.")));
}

#[test]
fn dropped_step_is_an_offline_step_on_the_window() {
    let m = tiny(ExtractorKind::Tcn);
    let ex = example(6, 4000, 0, 0);
    let w = TrainWindow {
        m: 500,
        k: 3000,
        n: 3800,
        eeg_m: eeg_frames_for(500),
        eeg_k: eeg_frames_for(3000),
        eeg_n: eeg_frames_for(3800),
    };
    let d = two_pass_grads(&m.params, &m.config, &ex.mixture, &ex.eeg, &ex.target, &w, true, LossKind::SiSdr, Pass1::GradientFree).unwrap();
    let r = ex.eeg.slice_frames(w.eeg_m, w.eeg_n - w.eeg_m).unwrap();
    let o = offline_grads(&m.params, &m.config, &ex.mixture[500..3800], &r, &ex.target[500..3800], LossKind::SiSdr).unwrap();
    assert_eq!(d.passes, 1);
    assert_eq!(d.loss, o.loss);
    assert_eq!(d.grads, o.grads);
}

#[test]
fn dropout_probability_controls_pass_count() {
    let ex = example(7, 16000, 0, 0);
    for (p, passes) in [(0.0, 2), (1.0, 1)] {
        let mut m = tiny(ExtractorKind::Tcn);
        let cfg = TrainConfig {
            dropout_p: p,
            buffer_range_s: (0.2, 1.0),
            ..TrainConfig::default()
        };
        let mut adam = Adam::new(AdamConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            let r = two_pass_step(&mut m, &mut adam, &ex, &cfg, &mut rng, 1e-3).unwrap().unwrap();
            assert_eq!(r.passes, passes);
            assert_eq!(r.dropped, p == 1.0);
        }
        assert_eq!(adam.slots["dec.w"].step, 5);
    }
}

#[test]
fn overfitting_one_example_lowers_the_smoothed_loss() {
    let ex = vec![example(8, 2000, 0, 0)];
    let cfg = TrainConfig {
        lr_scale: 0.3,
        max_steps: Some(200),
        steps_per_epoch: 1000,
        ..quick(TrainMode::Offline)
    };
    let mut t = Trainer::new(tiny(ExtractorKind::Dprnn), cfg).unwrap();
    let mut losses = Vec::new();
    for _ in 0..200 {
        if let LogRecord::Step { loss, .. } = t.train_step(&ex).unwrap() {
            losses.push(loss);
        }
    }
    let ma: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for (i, p) in ma.windows(2).enumerate() {
        assert!(p[1] <= p[0], "moving average rose at step {}: {} -> {}", i + 5, p[0], p[1]);
    }
    assert!(ma.last().unwrap() < &(ma[0] - 3.0));
}

#[test]
fn fixed_seed_training_is_bit_reproducible() {
    let data: Vec<_> = (0..3).map(|i| example(i, 3000, 0, i as usize * 3000)).collect();
    let run = || {
        let mut t = Trainer::new(tiny(ExtractorKind::Dprnn), quick(TrainMode::Online)).unwrap();
        for _ in 0..4 {
            t.train_step(&data).unwrap();
        }
        t.checkpoint().unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn resumed_run_continues_where_it_stopped() {
    let data: Vec<_> = (0..3).map(|i| example(i, 3000, 0, i as usize * 3000)).collect();
    let cfg = TrainConfig {
        augment: true,
        ..quick(TrainMode::Offline)
    };
    let dir = tempfile::tempdir().unwrap();
    let mut a = Trainer::new(tiny(ExtractorKind::Dprnn), cfg.clone())
        .unwrap()
        .with_run_dir(dir.path())
        .unwrap();
    for _ in 0..2 {
        a.train_step(&data).unwrap();
    }
    let path = a.save("mid").unwrap();
    a.train_step(&data).unwrap();

    let mut b = Trainer::resume(&path).unwrap();
    assert_eq!(b.step, 2);
    match b.train_step(&data).unwrap() {
        LogRecord::Step { step, .. } => assert_eq!(step, 3),
        other => panic!("{other:?}"),
    }
    assert_eq!(a.model.params, b.model.params);
}

#[test]
fn run_directory_contents() {
    let train: Vec<_> = (0..3).map(|i| example(i, 3000, 0, i as usize * 3000)).collect();
    let val = vec![example(9, 3000, 1, 0)];
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny(ExtractorKind::Tcn), quick(TrainMode::Offline))
        .unwrap()
        .with_run_dir(dir.path())
        .unwrap();
    let summary = t.run(&train, &val).unwrap();
    assert_eq!(summary.steps, 6);
    assert_eq!(summary.stop_reason, "max_epochs");
    for name in ["epoch-0001", "epoch-0002", "best", "last"] {
        let p = dir.path().join(CKPT_DIR).join(format!("{name}.ckpt"));
        load_checkpoint(&p).unwrap();
    }
    let text = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    let recs: Vec<LogRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let steps: Vec<u64> = recs
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step { step, .. } => Some(*step),
            _ => None,
        })
        .collect();
    assert_eq!(steps, (1..=6).collect::<Vec<_>>());
    assert_eq!(recs.iter().filter(|r| matches!(r, LogRecord::Epoch { .. })).count(), 2);
}

#[test]
fn warm_start_checks_compatibility() {
    let dir = tempfile::tempdir().unwrap();
    let offline = tiny(ExtractorKind::Tcn);
    let ok = dir.path().join("ok.ckpt");
    let ck = neuroheed::model::Checkpoint {
        config: offline.config.clone(),
        params: offline.params.clone(),
        extra: serde_json::Value::Null,
    };
    save_checkpoint(&ok, &ck).unwrap();
    let mut t = Trainer::new(Model::new(offline.config.clone(), 99).unwrap(), quick(TrainMode::Online)).unwrap();
    t.warm_start(&ok).unwrap();
    assert_eq!(t.model.params, offline.params);

    let mut other = Trainer::new(tiny(ExtractorKind::Dprnn), quick(TrainMode::Online)).unwrap();
    let err = other.warm_start(&ok).unwrap_err().to_string();
    assert!(err.contains("missing ext.block0"), "{err}");
    assert!(err.contains("unexpected ext.r0b0"), "{err}");
}

#[test]
fn config_validation() {
    TrainConfig::default().validate().unwrap();
    for bad in [
        TrainConfig { dropout_p: 1.5, ..TrainConfig::default() },
        TrainConfig { plateau_patience: 0, ..TrainConfig::default() },
        TrainConfig { early_stop_patience: 0, ..TrainConfig::default() },
        TrainConfig { chunk_choices_s: vec![], ..TrainConfig::default() },
    ] {
        assert!(bad.validate().is_err());
    }
    let t: TrainConfig = toml::from_str("warmup_n = 10\nmode = \"online\"").unwrap();
    assert_eq!((t.warmup_n, t.mode, t.batch_size), (10, TrainMode::Online, 4));
    assert!(toml::from_str::<TrainConfig>("bogus = 1").is_err());
}
