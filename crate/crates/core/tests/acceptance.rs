//! Runs every numbered acceptance check and prints one PASS/FAIL line each.
//! Exits non-zero when any check fails.

use std::process::ExitCode;

use plimit_core::acceptance::{run_criterion, CRITERIA};

fn main() -> ExitCode {
    let mut failed = 0;
    for id in CRITERIA {
        let outcome = run_criterion(id);
        println!("{outcome}");
        if !outcome.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of {} criteria pass", CRITERIA.count() - failed, CRITERIA.count());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
