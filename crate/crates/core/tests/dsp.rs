use neuroheed::dsp::*;
use neuroheed::numerics::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn overlap_add_examples() {
    let f = [0.5, -1.0, 2.0, 3.0];
    assert_eq!(overlap_add(&f, 4, 2).unwrap(), f.to_vec());
    let two = [1.0; 8];
    assert_eq!(overlap_add(&two, 4, 2).unwrap(), vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0]);
    assert!(overlap_add(&two, 4, 0).is_err());
    assert!(overlap_add(&two, 4, 5).is_err());
}

#[test]
fn overlap_add_of_half_overlapped_frames_doubles_interior() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
    let frames = frame(&s, 10, 5).unwrap();
    let y = overlap_add(&frames, 10, 5).unwrap();
    assert_eq!(y.len(), 100);
    for i in 5..95 {
        assert!((y[i] - 2.0 * s[i]).abs() < 1e-12);
    }
}

#[test]
fn decoded_length_for_one_second() {
    let frames = vec![0.0f32; 799 * 20];
    assert_eq!(overlap_add(&frames, 20, 10).unwrap().len(), 8000);
}

proptest! {
    #[test]
    fn overlap_add_is_adjoint_of_frame(seed in 0u64..10_000, t in 8usize..200, l in 2usize..12) {
        let hop = (l / 2).max(1);
        prop_assume!(t >= l);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (t - l) / hop + 1;
        let t_used = (n - 1) * hop + l;
        let s: Vec<f64> = (0..t_used).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f: Vec<f64> = (0..n * l).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = frame(&s, l, hop).unwrap().iter().zip(&f).map(|(a, b)| a * b).sum();
        let rhs: f64 = s.iter().zip(overlap_add(&f, l, hop).unwrap()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn interp_preserves_monotonicity(seed in 0u64..10_000, t_in in 1usize..30, t_out in 1usize..90) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = 0.0;
        let x: Vec<f64> = (0..t_in).map(|_| { acc += rng.random_range(0.0..1.0); acc }).collect();
        let y = interp_linear(&Tensor::new([1, t_in], x.clone()).unwrap(), t_out).unwrap();
        let y = y.data();
        prop_assert!(y.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(y[0], x[0]);
        if t_out > 1 { prop_assert_eq!(y[t_out - 1], x[t_in - 1]); }
    }

    #[test]
    fn mix_decomposition_holds(seed in 0u64..10_000, snr in -10.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<f32> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let i: Vec<f32> = (0..240).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (m, s) = mix_at_snr(&t, &i, snr).unwrap();
        prop_assert_eq!(m.len(), 200);
        for k in 0..200 {
            prop_assert_eq!(m[k], t[k] + s[k]);
        }
    }
}

#[test]
fn mix_examples() {
    let t = vec![1.0f64, -1.0, 1.0, -1.0];
    let i = vec![-1.0f64, -1.0, 1.0, 1.0];
    let (_, s) = mix_at_snr(&t, &i, 0.0).unwrap();
    assert_eq!(s, i);
    let (_, s) = mix_at_snr(&t, &i, 20.0).unwrap();
    for (a, b) in s.iter().zip(&i) {
        assert!((a - 0.1 * b).abs() < 1e-15);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
    let i: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..3.0)).collect();
    for snr in [-10.0, -3.3, 0.0, 7.25, 10.0] {
        let (_, s) = mix_at_snr(&t, &i, snr).unwrap();
        assert!((energy_ratio_db(&t, &s) - snr).abs() < 1e-9);
    }
    assert!(mix_at_snr(&t, &[0.0; 500], 0.0).is_err());
}

#[test]
fn bandpass_response_contract() {
    let f = design_bandpass(1.0, 32.0, 128.0, 257).unwrap();
    assert!(f.is_symmetric());
    assert!(f.response_db(0.0) <= -40.0, "{}", f.response_db(0.0));
    assert!(f.response_db(10.0).abs() <= 1.0);
    assert!(f.response_db((1.0f64 * 32.0).sqrt()).abs() <= 1.0);
    assert!(f.response_db(0.45 * 128.0) <= -40.0, "{}", f.response_db(57.6));
    assert!(f.taps.iter().sum::<f64>().abs() < 1e-12);
    assert!(design_bandpass(32.0, 1.0, 128.0, 257).is_err());
    assert!(design_bandpass(1.0, 70.0, 128.0, 257).is_err());
    assert!(design_bandpass(1.0, 32.0, 128.0, 256).is_err());
}

fn probe(freq: f64, fs: f64, secs: f64) -> EegRecording {
    let c = 4;
    let t = (fs * secs) as usize;
    let mut data = vec![0.0f32; c * t];
    for j in 0..t {
        data[j] = (2.0 * std::f64::consts::PI * freq * j as f64 / fs).sin() as f32;
    }
    EegRecording::new(c, fs, data, false).unwrap()
}

fn interior_power(r: &EegRecording, edge: usize) -> f64 {
    let t = r.frames();
    (0..r.channels)
        .map(|c| r.channel(c)[edge..t - edge].iter().map(|&v| (v as f64).powi(2)).sum::<f64>())
        .sum()
}

#[test]
fn preprocess_rejects_50hz_relative_to_10hz() {
    let cfg = EegPreprocess::default();
    for fs in [8192.0, 128.0] {
        let a = preprocess_eeg(&probe(50.0, fs, 12.0), &cfg).unwrap();
        let b = preprocess_eeg(&probe(10.0, fs, 12.0), &cfg).unwrap();
        assert_eq!(a.sample_rate, 128.0);
        assert_eq!(a.frames(), 12 * 128);
        let ratio = 10.0 * (interior_power(&a, 256) / interior_power(&b, 256)).log10();
        assert!(ratio <= -40.0, "fs {fs}: {ratio} dB");
    }
}

#[test]
fn preprocess_examples() {
    let cfg = EegPreprocess::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = 8192;
    let common: Vec<f32> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
    let data: Vec<f32> = (0..8).flat_map(|_| common.clone()).collect();
    let r = preprocess_eeg(&EegRecording::new(8, 8192.0, data, false).unwrap(), &cfg).unwrap();
    assert!(r.data.iter().all(|&v| v == 0.0));

    let data: Vec<f32> = (0..8 * t).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r = preprocess_eeg(&EegRecording::new(8, 8192.0, data, false).unwrap(), &cfg).unwrap();
    let peak = r.data.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    for j in 0..r.frames() {
        let mean: f64 = (0..8).map(|c| r.channel(c)[j] as f64).sum::<f64>() / 8.0;
        assert!(mean.abs() <= 1e-6 * peak, "frame {j}: {mean}");
    }
    assert!(preprocess_eeg(&r, &cfg).is_err());
    let odd = EegRecording::new(2, 1000.0, vec![0.0; 2000], false).unwrap();
    assert!(preprocess_eeg(&odd, &cfg).is_err());
}

#[test]
fn rereference_zeroes_channel_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = 64;
    let mut x: Vec<f64> = (0..c * 300).map(|_| rng.random_range(-50.0..50.0)).collect();
    rereference(&mut x, c);
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for j in 0..300 {
        let mean = (0..c).map(|ch| x[ch * 300 + j]).sum::<f64>() / c as f64;
        assert!(mean.abs() <= 1e-9 * peak);
    }
}

#[test]
fn preprocess_is_linear() {
    let cfg = EegPreprocess::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 4 * 4096;
    let x: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (a, b) = (1.5f32, -0.75f32);
    let z: Vec<f32> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
    let run = |d: Vec<f32>| preprocess_eeg(&EegRecording::new(4, 4096.0, d, false).unwrap(), &cfg).unwrap();
    let (px, py, pz) = (run(x), run(y), run(z));
    let peak = pz.data.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    for k in 0..pz.data.len() {
        let lin = a as f64 * px.data[k] as f64 + b as f64 * py.data[k] as f64;
        assert!((pz.data[k] as f64 - lin).abs() <= 1e-6 * peak.max(1e-30));
    }
}

#[test]
fn interp_examples() {
    let y = interp_linear(&Tensor::new([1, 2], vec![0.0, 1.0]).unwrap(), 3).unwrap();
    assert_eq!(y.data(), &[0.0, 0.5, 1.0]);
    let c = Tensor::full([3, 5], 2.0);
    assert!(interp_linear(&c, 17).unwrap().data().iter().all(|&v| v == 2.0));
    let r = Tensor::new([1, 3], vec![0.1, 0.9, -0.4]).unwrap();
    assert_eq!(interp_linear(&r, 3).unwrap(), r);
    assert!(interp_linear(&r, 0).is_err());
}

#[test]
fn rate_mapping() {
    assert_eq!(eeg_frames_for(8000), 128);
    assert_eq!(eeg_frames_for(32000), 512);
    assert_eq!(eeg_frames_for(125), 2);
    assert_eq!(audio_sample_for_frame(128), 8000);
}
