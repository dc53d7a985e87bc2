//! One high-priority client among normal ones, under GDR and RDMA.

use servesim::metrics::analyse;
use servesim::{run, DataMode, Scenario};

fn main() {
    println!("{:<5} {:>7} {:>12} {:>12}", "conn", "clients", "high ms", "normal ms");
    for conn in ["gdr", "rdma"] {
        for n in [2, 4, 8, 16] {
            let s = Scenario::new("YoloV4", DataMode::Preprocessed, conn.parse().unwrap(), n)
                .with_requests(60)
                .with_high_priority(1);
            let stats = analyse(&run(&s).expect("scenario runs")).expect("stats");
            let high = stats.high.as_ref().map_or(f64::NAN, |c| c.mean("total") / 1e6);
            let normal = stats.normal.as_ref().map_or(f64::NAN, |c| c.mean("total") / 1e6);
            println!("{conn:<5} {n:>7} {high:>12.3} {normal:>12.3}");
        }
    }
}
