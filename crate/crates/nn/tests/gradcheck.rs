mod support;

use support::fd;

fn assert_all(cases: Vec<fd::CaseResult>) {
    for c in &cases {
        println!("{:<28} max rel err {:.3e} over {} entries", c.name, c.max_rel_err, c.checked);
    }
    let bad: Vec<_> = cases.iter().filter(|c| !c.passed()).collect();
    assert!(bad.is_empty(), "failing gradient checks: {bad:?}");
}

#[test]
fn every_layer_kind_matches_finite_differences() {
    assert_all(fd::layer_cases(11));
}

#[test]
fn losses_match_finite_differences() {
    assert_all(fd::loss_cases(12));
}

#[test]
fn whole_networks_match_finite_differences() {
    assert_all(fd::network_cases(13));
}
