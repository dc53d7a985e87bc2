//! Compare multi-stream, MPS and multi-context sharing as clients grow.

use servesim::gpu::SharingMode;
use servesim::metrics::analyse;
use servesim::{run, DataMode, Scenario};

fn main() {
    println!("{:>7} {:>14} {:>10} {:>14}", "clients", "multi_stream", "mps", "multi_context");
    for n in [1, 2, 4, 8, 16] {
        let mean = |sharing| {
            let s = Scenario::new("EfficientNetB0", DataMode::Raw, "gdr".parse().unwrap(), n)
                .with_requests(40)
                .with_sharing(sharing);
            analyse(&run(&s).expect("scenario runs")).expect("stats").overall.mean("total") / 1e6
        };
        println!(
            "{n:>7} {:>14.3} {:>10.3} {:>14.3}",
            mean(SharingMode::MultiStream { max_streams: n }),
            mean(SharingMode::Mps),
            mean(SharingMode::MultiContext)
        );
    }
}
