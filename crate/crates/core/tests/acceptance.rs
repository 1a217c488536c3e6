//! Runs the ten acceptance criteria against a freshly generated fixture
//! bundle and prints one pass/fail line per criterion. Built without the
//! libtest harness so the lines are always shown; exits non-zero on failure.

use std::process::ExitCode;

use qloc_core::bench::acceptance::{run_acceptance, AcceptancePaths, Thresholds};
use qloc_core::bench::synthetic::{generate_corpus, SyntheticSpec};

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let fixtures = dir.path().join("fixtures");
    generate_corpus(&SyntheticSpec::default())
        .and_then(|c| c.write_bundle(&fixtures))
        .expect("fixture bundle");
    let paths = AcceptancePaths {
        fixtures,
        work: dir.path().join("work"),
    };
    let report = match run_acceptance(&paths, &Thresholds::default()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("acceptance setup failed: {e}");
            return ExitCode::FAILURE;
        }
    };
    for line in report.lines() {
        println!("{line}");
    }
    let failed = report.criteria.iter().filter(|c| !c.passed).count();
    println!(
        "acceptance: {} of {} criteria passed",
        report.criteria.len() - failed,
        report.criteria.len()
    );
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
