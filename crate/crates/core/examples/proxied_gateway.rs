//! Client traffic relayed through a gateway, against direct connections.

use servesim::metrics::analyse;
use servesim::{run, DataMode, Scenario};

fn main() {
    for n in [1, 16] {
        println!("{n} clients");
        for conn in ["tcp", "tcp/tcp", "tcp/rdma", "tcp/gdr", "rdma/gdr", "gdr"] {
            let s = Scenario::new("MobileNetV3", DataMode::Raw, conn.parse().unwrap(), n).with_requests(60);
            let traces = run(&s).expect("scenario runs");
            let stats = analyse(&traces).expect("stats");
            let gateway_cpu: u64 = traces.measured().map(|r| r.gateway_cpu_ns).sum();
            println!(
                "  {conn:<9} total {:>8.3} ms  gateway cpu {:>8.1} us/request",
                stats.overall.mean("total") / 1e6,
                gateway_cpu as f64 / stats.overall.get("total").count as f64 / 1e3
            );
        }
    }
}
