//! Verify every differentiable primitive and assembled loss against
//! central finite differences in f64.
//!
//!     cargo run --release --example gradient_check

use vcgan::harness::{gradcheck_battery, GRAD_TOL};

fn main() {
    let results = gradcheck_battery();
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("{verdict}  {:<38} max_rel_err={:.3e}", r.name, r.max_rel_err);
        if !r.passed {
            failed += 1;
        }
    }
    println!("--");
    println!(
        "{}/{} checks within tolerance {GRAD_TOL:.0e}",
        results.len() - failed,
        results.len()
    );
    std::process::exit(if failed == 0 { 0 } else { 1 });
}
