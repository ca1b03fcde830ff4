use neuroheed::numerics::fault::Fault;
use neuroheed::verify::{check_names, run_verify, VerifyOptions};

fn only(prefixes: &[&str]) -> VerifyOptions {
    VerifyOptions {
        only: prefixes.iter().map(|s| s.to_string()).collect(),
        ..VerifyOptions::default()
    }
}

#[test]
fn check_names_are_unique() {
    let names = check_names();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
    assert!(names.contains(&"streaming.offline_equivalence"));
}

#[test]
fn filter_selects_by_prefix() {
    let r = run_verify(&only(&["sisdr."]));
    let names: Vec<_> = r.checks.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["sisdr.examples", "sisdr.scale_invariance"]);
}

#[test]
fn arithmetic_checks_pass() {
    let r = run_verify(&only(&["sisdr.", "lr.", "framing.", "eeg.", "checkpoint."]));
    assert_eq!(r.checks.len(), 6);
    assert!(r.passed(), "{}", r.to_text());
}

#[test]
fn gradient_checks_pass() {
    let r = run_verify(&VerifyOptions {
        grad_points: 2,
        ..only(&["grad."])
    });
    assert_eq!(r.checks.len(), 6);
    assert!(r.passed(), "{}", r.to_text());
}

#[test]
fn causality_checks_pass() {
    let r = run_verify(&only(&["causality."]));
    assert_eq!(r.checks.len(), 3);
    assert!(r.passed(), "{}", r.to_text());
}

#[test]
fn streaming_contract_checks_pass() {
    let r = run_verify(&only(&[
        "streaming.chunk_accounting",
        "streaming.enrollment_identity",
        "streaming.normalization_guards",
    ]));
    assert_eq!(r.checks.len(), 3);
    assert!(r.passed(), "{}", r.to_text());
}

#[test]
fn injected_lookahead_is_named() {
    let mut opts = only(&["causality.", "grad.ops"]);
    opts.grad_points = 1;
    opts.fault = Some(Fault::ClnLookahead);
    let r = run_verify(&opts);
    assert!(!r.passed());
    let failed: Vec<_> = r.failures().iter().map(|c| c.name.clone()).collect();
    assert!(failed.contains(&"causality.cln".to_string()), "{failed:?}");
    assert!(failed.contains(&"causality.causal_tcn".to_string()), "{failed:?}");
    assert!(!failed.contains(&"causality.conv1d".to_string()));
    assert!(r.to_text().contains("FAIL causality.cln"));

    // the fault does not leak past the run
    assert!(run_verify(&only(&["causality.cln"])).passed());
}
