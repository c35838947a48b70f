use std::io::Write;

use anyview::docsbench::{run_acceptance, Status, CRITERIA};

#[test]
fn acceptance_suite() {
    let report = run_acceptance(None);
    // Written to the raw handle so the lines survive test output capture.
    let mut err = std::io::stderr().lock();
    for c in &report.criteria {
        let tag = match c.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        writeln!(err, "{tag} [{:>2}] {} ({:.1} s of {:.0} s): {}", c.id, c.name, c.seconds, c.budget_seconds, c.detail).unwrap();
    }
    drop(err);
    let ids: Vec<u32> = report.criteria.iter().map(|c| c.id).collect();
    assert_eq!(ids, CRITERIA.iter().map(|c| c.id).collect::<Vec<_>>());
    let failed: Vec<u32> = report.failures().iter().map(|c| c.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn filter_runs_only_the_named_group() {
    let report = run_acceptance(Some("parameters"));
    assert_eq!(report.criteria.len(), CRITERIA.len());
    for c in &report.criteria {
        assert_eq!(c.status == Status::Skipped, c.group != "parameters", "criterion {}", c.id);
    }
    assert!(report.passed());
    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["criteria"].as_array().unwrap().len(), 11);
}
