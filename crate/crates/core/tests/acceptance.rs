//! Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
//! Criteria that are known to be unattainable with the full-commutator closed forms
//! are reported, not hidden; see the README for the analysis.

use overtone_core::validation::{run_criterion, ValidationOptions};

#[test]
fn acceptance() {
    let opts = ValidationOptions::default();
    let mut failed = Vec::new();
    for id in 1..=11u8 {
        let o = run_criterion(id, &opts);
        println!(
            "[{}] criterion {:>2} {:<40} {} ({:.2} s)",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail,
            o.elapsed_s
        );
        for line in &o.info {
            println!("       info: {line}");
        }
        if !o.passed {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
