use robself::diffengine::GradCheckOptions;
use robself::suite::{run_suite, SUITE_OPS};

#[test]
fn every_operator_and_preset_passes() {
    let cases = run_suite(&GradCheckOptions::default(), None).unwrap();
    assert_eq!(cases.iter().filter(|c| c.op == "model").count(), 12);
    for c in &cases {
        assert!(c.report.passed(), "{}: {:#?}", c.label, c.report.failures().collect::<Vec<_>>());
        assert!(c.report.max_error() < 1e-3);
    }
    for op in SUITE_OPS {
        assert!(cases.iter().any(|c| c.op == op), "{op}");
    }
}

#[test]
fn rounding_floor_is_unattainable() {
    let opts = GradCheckOptions { tolerance: 1e-12, ..GradCheckOptions::default() };
    let cases = run_suite(&opts, Some("resize")).unwrap();
    assert_eq!(cases.len(), 1);
    assert!(!cases[0].report.passed());
}

#[test]
fn unknown_operator_is_rejected() {
    assert!(run_suite(&GradCheckOptions::default(), Some("softmax")).is_err());
}
