//! Scale the client count for each mechanism and print one plot row per cell.

use rayon::prelude::*;
use servesim::metrics::{analyse, plot_row, PLOT_CSV_HEADER};
use servesim::{run, DataMode, Scenario};

fn main() {
    let cells: Vec<(&str, u32)> = ["tcp", "rdma", "gdr"]
        .into_iter()
        .flat_map(|m| [1, 2, 4, 8, 16].map(|n| (m, n)))
        .collect();
    let rows: Vec<String> = cells
        .par_iter()
        .map(|&(conn, n)| {
            let s = Scenario::new("MobileNetV3", DataMode::Raw, conn.parse().unwrap(), n).with_requests(60);
            let stats = analyse(&run(&s).expect("cell runs")).expect("stats");
            plot_row(conn, n as usize, &stats)
        })
        .collect();
    println!("{PLOT_CSV_HEADER}");
    for r in rows {
        println!("{r}");
    }
}
