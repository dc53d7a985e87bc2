//! Build a scenario in code, run it and print the stage breakdown.

use servesim::metrics::{analyse, text_report, View};
use servesim::{run, DataMode, Scenario};

fn main() {
    let scenario = Scenario::new("ResNet50", DataMode::Raw, "rdma".parse().unwrap(), 4).with_requests(40);
    let traces = run(&scenario).expect("scenario runs");
    let stats = analyse(&traces).expect("enough measured requests");
    print!("{}", text_report(&traces, &stats, View::Separate));

    let first = &traces.measured().next().expect("a measured request");
    println!("\nclient {} request {}:", first.client, first.request);
    for s in &first.stages {
        println!(
            "  {:<10} on {:<10} ready {:>10} start {:>10} end {:>10}",
            s.stage.label(),
            s.resource.label(),
            s.ready,
            s.start,
            s.end
        );
    }
}
