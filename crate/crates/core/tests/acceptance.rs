//! The thirteen acceptance criteria, one PASS/FAIL line each.
//!
//! Tolerances are pinned here and compared with the shipped pack, so a pack
//! edit that loosens a check fails this target. Criteria in `KNOWN_RED` are
//! model limitations analysed in the README; the target fails if the red set
//! changes in either direction.

use servesim::pack;
use servesim::validate::{
    validate, ValidateOptions, CALIBRATION_TOLERANCE, CRITERIA, WIRE_CLIENTS, WIRE_MIN_R2, WIRE_SIZES,
};

const KNOWN_RED: [u32; 3] = [5, 7, 9];

/// (figure, check, target, tolerance, min, max) for every counted check.
type Pin = (&'static str, &'static str, Option<f64>, Option<f64>, Option<f64>, Option<f64>);

const PINNED: &[Pin] = &[
    ("fig5", "gdr_saving_raw", Some(0.203), Some(0.03), None, None),
    ("fig5", "rdma_saving_raw", Some(0.114), Some(0.03), None, None),
    ("fig5", "gdr_saving_preprocessed", Some(0.232), Some(0.03), None, None),
    ("fig5", "rdma_saving_preprocessed", Some(0.152), Some(0.03), None, None),
    ("fig6", "tcp_minus_rdma_request_raw", Some(0.73), Some(0.0365), None, None),
    ("fig6", "tcp_minus_rdma_request_preprocessed", Some(0.61), Some(0.0305), None, None),
    ("fig6", "gdr_copy_saving_raw", Some(0.3), Some(0.015), None, None),
    ("fig6", "gdr_copy_saving_preprocessed", Some(0.2), Some(0.01), None, None),
    ("fig6", "local_has_no_transfer", None, None, None, Some(0.0)),
    ("fig7", "tcp_over_gdr_cpu_deeplabv3", None, None, Some(2.0), None),
    ("fig8", "rdma_converges_to_tcp_deeplabv3", Some(1.0), Some(0.10), None, None),
    ("fig8", "gdr_stays_below_tcp_deeplabv3", None, None, Some(0.15), None),
    ("fig9", "tcp_copy_fraction_one_client", None, None, None, Some(0.10)),
    ("fig9", "tcp_copy_fraction_sixteen_clients", None, None, Some(0.30), None),
    ("fig10", "tcp_rdma_saving_one_client", Some(0.23), Some(0.05), None, None),
    ("fig10", "tcp_gdr_saving_one_client", Some(0.57), Some(0.08), None, None),
    ("fig10", "tcp_gdr_saving_sixteen_clients", None, None, Some(0.20), None),
    ("fig10", "tcp_gdr_near_rdma_gdr_sixteen_clients", Some(1.0), Some(0.10), None, None),
    ("fig11", "gdr_one_stream_penalty", Some(1.33), Some(0.10), None, None),
    ("fig11", "gdr_total_non_increasing_in_streams", None, Some(0.001), None, None),
    ("fig11", "processing_cov_gdr_below_rdma", None, None, None, None),
    ("fig12", "gdr_priority_flat", None, Some(0.20), None, None),
    ("fig12", "rdma_priority_degrades", None, None, Some(1.5), None),
    ("fig13", "gdr_mps_not_worse_than_multi_context", None, None, None, None),
    ("fig13", "rdma_mps_not_worse_than_multi_context", None, None, None, None),
    ("fig13", "gdr_mps_matches_multi_stream", None, Some(0.05), None, None),
];

fn pack_matches_pins() -> Vec<String> {
    let mut problems = Vec::new();
    let figures = pack::load_all().expect("shipped pack loads");
    let mut seen = 0;
    for f in &figures {
        for c in f.checks.iter().filter(|c| !c.informational) {
            match PINNED.iter().find(|p| p.0 == f.id && p.1 == c.name) {
                None => problems.push(format!("{}/{} is counted but not pinned", f.id, c.name)),
                Some(p) => {
                    seen += 1;
                    if (p.2, p.3, p.4, p.5) != (c.target, c.tolerance, c.min, c.max) {
                        problems.push(format!(
                            "{}/{}: pack has target {:?} tolerance {:?} min {:?} max {:?}",
                            f.id, c.name, c.target, c.tolerance, c.min, c.max
                        ));
                    }
                }
            }
        }
    }
    if seen != PINNED.len() {
        problems.push(format!("{} pins, {seen} counted checks in the pack", PINNED.len()));
    }
    if CALIBRATION_TOLERANCE != 0.05 || WIRE_MIN_R2 != 0.9 || WIRE_CLIENTS != 8 {
        problems.push("calibration or wire thresholds changed".into());
    }
    if WIRE_SIZES != [0, 4 << 10, 64 << 10, 1 << 20] {
        problems.push("wire sizes changed".into());
    }
    problems
}

fn main() {
    let mut problems = pack_matches_pins();

    let dir = tempfile::tempdir().expect("temp dir");
    let v = validate(&ValidateOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..ValidateOptions::default()
    });
    for c in &v.criteria {
        let note = if KNOWN_RED.contains(&c.id) {
            "  (known red)"
        } else {
            ""
        };
        println!("{} C{:<2} {}{note}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.title);
        if !c.passed {
            for d in &c.details {
                println!("       {d}");
            }
        }
    }
    let passed = v.criteria.iter().filter(|c| c.passed).count();
    println!("{passed}/{} criteria pass", v.criteria.len());

    if v.criteria.len() != CRITERIA.len() {
        problems.push(format!("{} criteria evaluated", v.criteria.len()));
    }
    if v.failed_ids() != KNOWN_RED {
        problems.push(format!("failed set {:?}, expected {KNOWN_RED:?}", v.failed_ids()));
    }
    for f in ["criteria.txt", "determinism/pass1", "determinism/pass2", "figures/fig11/cells.csv"] {
        if !dir.path().join(f).exists() {
            problems.push(format!("{f} not written"));
        }
    }

    if problems.is_empty() {
        println!("acceptance: ok");
    } else {
        for p in &problems {
            println!("acceptance: {p}");
        }
        std::process::exit(1);
    }
}
