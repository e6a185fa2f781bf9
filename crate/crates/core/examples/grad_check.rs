//! Check every differentiable op and the full model against finite differences.
//!
//! `cargo run --release --example grad_check [seeds]`

use focusflow::gradsuite::{run_grad_suite, SUITE_TOLERANCE};

fn main() -> focusflow::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let report = run_grad_suite(0..seeds)?;

    // Worst case per check, across seeds.
    let mut worst = std::collections::BTreeMap::<&str, f64>::new();
    for case in &report.cases {
        let e = worst.entry(case.name.as_str()).or_insert(0.0);
        *e = e.max(case.report.max_rel_error);
    }
    for (name, err) in &worst {
        println!("{name:<24} {err:.2e}");
    }
    let verdict = if report.passed(SUITE_TOLERANCE) { "pass" } else { "FAIL" };
    println!("{} cases, worst {:.2e}: {verdict} at tolerance {SUITE_TOLERANCE:e}", report.cases.len(), report.max_rel_error());
    Ok(())
}
