use neuroheed::data::*;
use neuroheed::dsp::eeg_frames_for;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> CorpusConfig {
    CorpusConfig {
        train: 6,
        val: 2,
        test: 2,
        trials: 2,
        trial_seconds: 48.0,
        train_len_s: (1.0, 3.0),
        test_len_s: (1.0, 3.0),
        ..CorpusConfig::default()
    }
}

fn rms(x: &[f32]) -> f64 {
    (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

fn power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n / 2)
        .map(|k| {
            let w = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, &v)| {
                let a = w * j as f64;
                (re + v * a.cos(), im + v * a.sin())
            });
            re * re + im * im
        })
        .collect()
}

#[test]
fn speech_is_unit_rms_and_seeded() {
    let style = SpeakerStyle::pair()[0];
    let cfg = SpeechConfig::default();
    let a = synth_speech(3.0, &style, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = synth_speech(3.0, &style, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a.len(), 24000);
    assert!((rms(&a) - 1.0).abs() < 1e-6);
    assert_eq!(a, b);
    assert!(synth_speech(0.5, &style, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
}

#[test]
fn speech_envelope_is_syllabic() {
    let cfg = SpeechConfig::default();
    let x = synth_speech(16.0, &SpeakerStyle::pair()[1], &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let env = envelope(&x, 30.0).unwrap();
    let mean = env.iter().sum::<f64>() / env.len() as f64;
    let centered: Vec<f64> = env.iter().map(|v| v - mean).collect();
    let spec = power(&centered);
    let hz = |k: usize| k as f64 * 128.0 / centered.len() as f64;
    let peak = (1..spec.len()).filter(|&k| hz(k) >= 1.0).max_by(|&a, &b| spec[a].total_cmp(&spec[b])).unwrap();
    assert!((3.0..=6.0).contains(&hz(peak)), "peak at {} Hz", hz(peak));
}

#[test]
fn noiseless_eeg_tracks_the_attended_envelope() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = EegSynthConfig {
        noise: 0.0,
        g_dis: 0.0,
        ..EegSynthConfig::default()
    };
    let sp = SpeechConfig::default();
    let [s0, s1] = SpeakerStyle::pair();
    let a = synth_speech(4.0, &s0, &sp, &mut rng).unwrap();
    let d = synth_speech(4.0, &s1, &sp, &mut rng).unwrap();
    let m = Montage::random(&cfg, &mut rng);
    let eeg = synth_eeg(&a, &d, &m, &cfg, &mut rng).unwrap();
    assert_eq!((eeg.channels, eeg.frames()), (64, 512));
    let env = envelope(&a, cfg.envelope_hz).unwrap();
    for c in [0, 17, 63] {
        let lag = m.att_lag[c];
        let ch: Vec<f64> = eeg.channel(c)[lag..].iter().map(|&v| v as f64).collect();
        let r = pearson(&ch, &env[..env.len() - lag]);
        assert!(r.abs() >= 0.99, "channel {c}: r = {r}");
    }
}

#[test]
fn equal_gains_carry_no_attention_information() {
    let cfg = EegSynthConfig {
        g_dis: 1.0,
        ..EegSynthConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sp = SpeechConfig::default();
    let [s0, s1] = SpeakerStyle::pair();
    let a = synth_speech(2.0, &s0, &sp, &mut rng).unwrap();
    let d = synth_speech(2.0, &s1, &sp, &mut rng).unwrap();
    let mut m = Montage::random(&cfg, &mut rng);
    m.dis_lag = m.att_lag.clone();
    m.dis_weight = m.att_weight.clone();
    let x = synth_eeg(&a, &d, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let y = synth_eeg(&d, &a, &m, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for (p, q) in x.data.iter().zip(&y.data) {
        assert!((p - q).abs() <= 1e-5 * p.abs().max(1.0));
    }
}

#[test]
fn small_corpus_round_trip() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let recs = build_corpus(&cfg, dir.path()).unwrap();
    assert_eq!(recs.len(), 10);
    assert_eq!(split_overlaps(&recs), 0);
    let corpus = Corpus::open(dir.path()).unwrap();
    assert_eq!(corpus.config, cfg);
    assert_eq!(corpus.records, recs);
    for r in &recs {
        let ex = corpus.load(r).unwrap();
        assert_eq!(ex.eeg.frames(), eeg_frames_for(ex.mixture.len()));
        assert_eq!(ex.eeg.frames(), (ex.mixture.len() as f64 / 62.5).floor() as usize);
        for i in 0..ex.mixture.len() {
            assert_eq!(ex.mixture[i], ex.target[i] + ex.interferer[i]);
        }
        let len = ex.seconds();
        assert!((1.0..=3.0).contains(&len), "{len}");
    }

    let again = tempfile::tempdir().unwrap();
    let recs2 = build_corpus(&cfg, again.path()).unwrap();
    let shas = |rs: &[ExampleRecord]| rs.iter().map(|r| r.mixture.sha256.clone() + &r.eeg.sha256).collect::<Vec<_>>();
    assert_eq!(shas(&recs), shas(&recs2));
    assert_eq!(
        std::fs::read(dir.path().join(MANIFEST)).unwrap(),
        std::fs::read(again.path().join(MANIFEST)).unwrap()
    );
}

#[test]
fn corrupt_arrays_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let recs = build_corpus(&small(), dir.path()).unwrap();
    let corpus = Corpus::open(dir.path()).unwrap();
    let r = &recs[0];
    let path = dir.path().join(&r.target.path);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    let err = corpus.load(r).unwrap_err().to_string();
    assert!(err.contains(&r.id), "{err}");

    let path = dir.path().join(&recs[1].eeg.path);
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(corpus.load(&recs[1]).is_err());
}

#[test]
fn config_validation() {
    small().validate().unwrap();
    let bad = CorpusConfig {
        trial_seconds: 20.0,
        ..CorpusConfig::default()
    };
    assert!(bad.validate().is_err());
    let d = CorpusConfig::default();
    assert_eq!(d.count(Split::Train) + d.count(Split::Val) + d.count(Split::Test), 260);
    let (a, b) = d.region(Split::Train);
    let (c, e) = d.region(Split::Test);
    assert!(b <= c && a == 0);
    let ratio = (b - a) as f64 / e as f64;
    assert!((ratio - 0.75).abs() < 1e-3);
}

#[test]
fn default_corpus_is_attention_identifiable() {
    let dir = tempfile::tempdir().unwrap();
    build_corpus(&CorpusConfig::default(), dir.path()).unwrap();
    let corpus = Corpus::open(dir.path()).unwrap();
    let train = corpus.load_split(Split::Train).unwrap();
    let test = corpus.load_split(Split::Test).unwrap();
    assert_eq!((train.len(), test.len()), (200, 30));
    let id = identifiability(&train, &test, corpus.config.eeg.envelope_hz).unwrap();
    assert!(id.fraction >= 0.9, "{id:?}");
}
