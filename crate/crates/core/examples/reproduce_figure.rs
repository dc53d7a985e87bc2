//! Run shipped reproduction figures and print their checks.
//!
//! `cargo run --release --example reproduce_figure -- fig11 fig12`

use std::time::Instant;

use servesim::pack;

fn main() {
    let mut ids: Vec<String> = std::env::args().skip(1).collect();
    if ids.is_empty() {
        ids = pack::figure_ids().into_iter().map(String::from).collect();
    }
    for id in ids {
        let fig = match pack::load(&id) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("{e}");
                std::process::exit(2);
            }
        };
        let t0 = Instant::now();
        let run = fig.run();
        print!("{}", run.checks_text());
        println!("  {} cells in {:.1}s\n", run.cells.len(), t0.elapsed().as_secs_f64());
    }
}
