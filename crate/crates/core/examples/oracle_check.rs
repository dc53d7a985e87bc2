//! Compare the event-driven simulator with the exhaustive reference executor
//! on the enumerated family of small scenarios.

use servesim::reference::{compare_with_oracle, oracle_family};

fn main() {
    let family = oracle_family();
    let mut failed = 0;
    for s in &family {
        if let Err(e) = compare_with_oracle(s) {
            failed += 1;
            println!("{e}");
        }
    }
    println!("{} scenarios, {failed} mismatches", family.len());
    std::process::exit(if failed == 0 { 0 } else { 1 });
}
