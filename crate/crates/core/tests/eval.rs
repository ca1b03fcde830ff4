use neuroheed::data::{MixtureExample, Segment, Split};
use neuroheed::dsp::EegRecording;
use neuroheed::eval::*;
use proptest::prelude::*;

fn result(id: &str, length_s: f64, si_sdri: f64, vs_b: f64) -> UtteranceResult {
    UtteranceResult {
        id: id.into(),
        mode: EvalMode::Offline,
        length_s,
        si_sdr_in: Db::Value(0.0),
        si_sdr_out: Db::Value(si_sdri),
        si_sdri: Db::Value(si_sdri),
        sdr_plain_in: Db::Value(0.0),
        sdr_plain_out: Db::Value(si_sdri),
        sdri_plain: Db::Value(si_sdri),
        si_sdri_vs_interferer: Db::Value(vs_b),
        positive: si_sdri > 0.0,
        beats_interferer: si_sdri > vs_b,
        config_fingerprint: "f".into(),
    }
}

fn example(s: &[f32], b: &[f32], x: &[f32]) -> MixtureExample {
    MixtureExample {
        id: "u".into(),
        split: Split::Test,
        attended: 0,
        segment: Segment { trial: 0, start: 0, len: s.len() },
        mixture: x.to_vec(),
        target: s.to_vec(),
        interferer: b.to_vec(),
        eeg: EegRecording::new(1, 128.0, vec![0.0], true).unwrap(),
    }
}

#[test]
fn si_sdri_examples() {
    let s = [1.0f32, 0.0, 0.0, 0.0];
    let x = [1.0f32, 1.0, 0.0, 0.0];
    let est = [1.0f32, 0.1, 0.0, 0.0];
    assert!((si_sdr_db(&s, &x).unwrap().to_f64()).abs() < 1e-6);
    assert!((si_sdr_db(&s, &est).unwrap().to_f64() - 20.0).abs() < 1e-6);
    assert!((si_sdri(&s, &est, &x).unwrap().to_f64() - 20.0).abs() < 1e-6);
    assert_eq!(si_sdri(&s, &x, &x).unwrap(), Db::Value(0.0));
    assert_eq!(si_sdri(&s, &s, &x).unwrap(), Db::PlusInf);
    assert!(si_sdri(&s, &est[..3], &x).is_err());
}

#[test]
fn sdri_plain_examples() {
    let s = [0.5f32, -1.0, 0.25, 2.0];
    let x = [0.1f32, 0.3, -0.2, 1.0];
    let twice: Vec<f32> = s.iter().map(|v| 2.0 * v).collect();
    let x_snr = sdri_plain(&s, &x, &x).unwrap();
    assert_eq!(x_snr, Db::Value(0.0));
    let zero_in = [0.0f32; 4];
    // x = 0 has SNR 0 dB against any s, so the improvement equals the output SNR.
    assert!(sdri_plain(&s, &twice, &zero_in).unwrap().to_f64().abs() < 1e-9);
    let close: Vec<f32> = s.iter().map(|v| v + 0.01 * v).collect();
    assert!((sdri_plain(&s, &close, &zero_in).unwrap().to_f64() - 40.0).abs() < 1e-3);
    assert_eq!(sdri_plain(&s, &s, &zero_in).unwrap(), Db::PlusInf);
}

#[test]
fn ppr_examples() {
    let rs = vec![result("a", 2.0, 3.0, -1.0), result("b", 2.0, 1.0, 0.0), result("c", 2.0, -1.0, -4.0)];
    assert!((ppr(&rs).unwrap() - 200.0 / 3.0).abs() < 1e-9);
    assert!(ppr(&[]).is_err());

    let s = [0.5f32, -1.0, 0.25, 2.0, 0.0, 1.0];
    let b = [1.0f32, 0.5, -0.5, 0.1, 1.0, -1.0];
    let x: Vec<f32> = s.iter().zip(&b).map(|(p, q)| p + q).collect();
    let ex = example(&s, &b, &x);
    let oracle = score(&ex, &s, EvalMode::Offline, "f").unwrap();
    let wrong = score(&ex, &b, EvalMode::Offline, "f").unwrap();
    let identity = score(&ex, &x, EvalMode::Offline, "f").unwrap();
    assert_eq!(ppr(&[oracle.clone(), oracle]).unwrap(), 100.0);
    assert_eq!(ppr(&[wrong.clone(), wrong]).unwrap(), 0.0);
    assert_eq!(identity.si_sdri, Db::Value(0.0));
    assert_eq!(ppr(&[identity]).unwrap(), 0.0);
}

#[test]
fn buckets() {
    let rs = vec![
        result("a", 1.5, 2.0, 0.0),
        result("b", 2.5, 4.0, 0.0),
        result("c", 3.5, 9.0, 0.0),
        result("d", 15.0, 1.0, 0.0),
    ];
    let all = bucket_by_length(&rs, &[1.0, 15.0]);
    assert_eq!(all.len(), 1);
    assert_eq!(all[0].count, 4);
    assert!((all[0].mean_si_sdri.unwrap() - 4.0).abs() < 1e-12);
    let def = bucket_by_length(&rs, &default_edges());
    assert_eq!(def.len(), 7);
    assert_eq!(def[0].count, 2);
    assert_eq!(def[2].mean_si_sdri, None);
    assert_eq!(def[6].count, 1);
    let total: f64 = def
        .iter()
        .filter_map(|b| b.mean_si_sdri.map(|m| m * b.count as f64))
        .sum();
    assert!((total / 4.0 - 4.0).abs() < 1e-9);
}

#[test]
fn infinities_are_counted_not_averaged() {
    let st = mean_stat([Db::Value(1.0), Db::PlusInf, Db::Value(3.0), Db::MinusInf]);
    assert_eq!(st.mean, Some(2.0));
    assert_eq!((st.finite, st.plus_inf, st.minus_inf), (2, 1, 1));
    assert_eq!(mean_stat([Db::PlusInf]).mean, None);
}

#[test]
fn report_round_trips_and_detects_tampering() {
    let rs = vec![result("a", 1.5, 2.0, 0.0), result("b", 4.5, -1.0, 2.0)];
    let report = EvalReport::new(rs, None);
    assert!(report.summary.sdr_note.contains("sdr_plain"));
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let back = EvalReport::read(dir.path()).unwrap();
    assert_eq!(back, report);
    let path = dir.path().join(RECORDS_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.lines().next().unwrap()).unwrap();
    assert!(EvalReport::read(dir.path()).is_err());
}

proptest! {
    #[test]
    fn si_sdri_is_scale_invariant(
        seed in prop::collection::vec(-1.0f32..1.0, 24),
        exp in -7i32..7,
    ) {
        // powers of two scale f32 exactly, so rounding cannot mask a violation
        let scale = 2f32.powi(exp);
        let (s, rest) = seed.split_at(8);
        let (x, est) = rest.split_at(8);
        let energy = |v: &[f32]| v.iter().map(|a| a * a).sum::<f32>();
        prop_assume!(energy(s) > 1e-3 && energy(x) > 1e-3 && energy(est) > 1e-3);
        let scaled: Vec<f32> = est.iter().map(|v| v * scale).collect();
        let a = si_sdri(s, est, x).unwrap().to_f64();
        let b = si_sdri(s, &scaled, x).unwrap().to_f64();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn si_sdri_is_output_minus_input(seed in prop::collection::vec(-1.0f32..1.0, 30)) {
        let (s, rest) = seed.split_at(10);
        let (x, est) = rest.split_at(10);
        let d = si_sdr_db(s, est).unwrap().to_f64() - si_sdr_db(s, x).unwrap().to_f64();
        prop_assert_eq!(si_sdri(s, est, x).unwrap().to_f64(), d);
    }
}
