//! Acceptance suite: runs every verification criterion at its pinned
//! tolerance and prints one pass/fail line per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use musielak::suites::{run_suite, suite_names};

fn run_criterion(index: usize, name: &str) {
    let report = run_suite(name, 7).unwrap_or_else(|e| panic!("criterion {index} ({name}): {e}"));
    let status = if report.pass { "PASS" } else { "FAIL" };
    println!("criterion {index:02} [{name}]: {status}");
    for check in &report.checks {
        println!(
            "    {} {}: measured {:.6e} vs bound {:.6e} ({})",
            if check.pass { "ok  " } else { "FAIL" },
            check.name,
            check.measured,
            check.bound,
            check.detail
        );
    }
    assert!(report.pass, "criterion {index} ({name}) failed: {report:#?}");
}

macro_rules! criterion_test {
    ($fn_name:ident, $index:expr, $name:expr) => {
        #[test]
        fn $fn_name() {
            run_criterion($index, $name);
        }
    };
}

criterion_test!(criterion_01_fenchel_young, 1, "fenchel-young");
criterion_test!(criterion_02_envelope, 2, "envelope");
criterion_test!(criterion_03_luxemburg, 3, "luxemburg");
criterion_test!(criterion_04_balance, 4, "balance");
criterion_test!(criterion_05_mollifier, 5, "mollifier");
criterion_test!(criterion_06_lemma32, 6, "lemma32");
criterion_test!(criterion_07_solver_oracle, 7, "solver-oracle");
criterion_test!(criterion_08_a_priori, 8, "a-priori");
criterion_test!(criterion_09_decay, 9, "decay");
criterion_test!(criterion_10_comparison, 10, "comparison");
criterion_test!(criterion_11_residual, 11, "residual");
criterion_test!(criterion_12_determinism, 12, "determinism");

#[test]
fn suite_registry_matches_criteria() {
    assert_eq!(suite_names().len(), 12);
}
