//! The thirteen acceptance criteria, one line each. Lines go straight to
//! stderr so they show up without `--nocapture`.

use std::io::Write;

use mallows_cli::suite::{format_line, run, SuiteConfig, CHECKS};

#[test]
fn acceptance() {
    let cfg = SuiteConfig { quick: false, seed: 20240601 };
    let results = run(&cfg, &[], |c| {
        let _ = writeln!(std::io::stderr(), "{}", format_line(c));
    });
    assert_eq!(results.len(), CHECKS.len());
    let failed: Vec<u32> = results.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    let _ = writeln!(
        std::io::stderr(),
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
