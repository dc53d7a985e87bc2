//! Run the framed echo server and a closed-loop client on loopback, then fit
//! the affine wire model to the samples.

use std::time::Duration;

use servesim::calibrate::{drop_outliers, fit_linear, Sample, FAR_OUT_FENCE};
use servesim::wirebench::{measure, measure_concurrent, serve, MeasureConfig, ServerConfig};

fn main() {
    let server = serve("127.0.0.1:0", ServerConfig::default()).expect("bind loopback");
    let addr = server.local_addr().to_string();
    println!("server on {addr}");

    let cfg = MeasureConfig {
        warmup: 10,
        timeout: Duration::from_secs(10),
        ..MeasureConfig::new(addr.clone(), vec![0, 4 << 10, 64 << 10, 1 << 20], 200)
    };
    let report = measure(&cfg);
    let samples: Vec<Sample> = report
        .samples
        .iter()
        .map(|s| Sample {
            bytes: s.size_bytes,
            duration: s.duration_ns as f64,
        })
        .collect();
    let raw = fit_linear(&samples).expect("fit");
    let (kept, dropped) = drop_outliers(&samples, FAR_OUT_FENCE);
    let fit = fit_linear(&kept).expect("fit");
    println!("all {} samples: r2 {:.4}", raw.n, raw.r2);
    println!(
        "{} samples after dropping {dropped} far outliers: round trip {:.1} us + {:.4} ns/B (r2 {:.4})",
        fit.n,
        fit.intercept / 1e3,
        fit.slope,
        fit.r2
    );
    // Echo moves every byte twice.
    println!("one-way bandwidth {:.0} B/ms", 2.0 * fit.bytes_per_ms());

    let reports = measure_concurrent(&MeasureConfig::new(addr, vec![64, 64 << 10], 50), 4);
    for (i, r) in reports.iter().enumerate() {
        println!(
            "client {i}: {} samples, max in flight {}, foreign responses {}",
            r.samples.len(),
            r.max_in_flight,
            r.foreign_responses
        );
    }
    server.shutdown();
}
