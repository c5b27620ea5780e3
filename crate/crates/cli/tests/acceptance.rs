//! The numbered acceptance checks through the `plimit check --all` binary,
//! one PASS/FAIL line each. Exits non-zero when any check fails.

use std::process::{Command, ExitCode};

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let report = dir.path().join("acceptance.json");
    let out = Command::new(env!("CARGO_BIN_EXE_plimit"))
        .args(["check", "--all", "--out"])
        .arg(&report)
        .output()
        .expect("run plimit");
    let stdout = String::from_utf8_lossy(&out.stdout);
    print!("{stdout}");
    eprint!("{}", String::from_utf8_lossy(&out.stderr));

    let outcomes: Vec<serde_json::Value> = match std::fs::read_to_string(&report).map(|t| serde_json::from_str(&t)) {
        Ok(Ok(v)) => v,
        _ => {
            println!("acceptance: no report written");
            return ExitCode::FAILURE;
        }
    };
    let passed = outcomes.iter().filter(|o| o["pass"] == true).count();
    println!("acceptance: {passed} of {} criteria pass", outcomes.len());
    // the exit code must agree with the report
    let consistent = out.status.code() == Some(if passed == outcomes.len() { 0 } else { 1 });
    if !consistent {
        println!("acceptance: exit code {:?} disagrees with the report", out.status.code());
    }
    if consistent && outcomes.len() == 10 && stdout.lines().count() == 10 && passed == outcomes.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
