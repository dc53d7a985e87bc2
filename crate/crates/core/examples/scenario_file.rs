//! Load a scenario file (with `extends` layering) and run it.
//!
//! `cargo run --release --example scenario_file -- crates/core/scenarios/resnet50_gdr_priority.toml`

use std::path::PathBuf;

use servesim::metrics::{analyse, text_report, View};
use servesim::run;
use servesim::scenario::ScenarioFile;

fn main() {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/resnet50_gdr_priority.toml")
    });
    let file = match ScenarioFile::load(&path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    println!("layers: {:?}", file.sources);
    let traces = run(&file.scenario).expect("scenario runs");
    let stats = analyse(&traces).expect("enough measured requests");
    print!("{}", text_report(&traces, &stats, View::Folded));
}
