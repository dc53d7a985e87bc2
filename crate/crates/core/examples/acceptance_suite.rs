//! Run the full acceptance suite and print one line per criterion.

use servesim::validate::{validate, ValidateOptions};

fn main() {
    env_logger::init();
    let v = validate(&ValidateOptions::default());
    print!("{}", v.render());
    std::process::exit(if v.passed() { 0 } else { 1 });
}
