//! Deterministic simulator of GPU model serving over TCP, RDMA, GPUDirect
//! RDMA and local data paths, with calibration against measured deltas and a
//! real framed TCP echo benchmark.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod cli;
pub mod gpu;
pub mod metrics;
pub mod pack;
pub mod reference;
pub mod resource;
pub mod scenario;
pub mod sim;
pub mod transport;
pub mod units;
pub mod validate;
pub mod wirebench;
pub mod workload;

pub use sim::{run, Connection, Scenario, TraceSet};
pub use transport::{Mechanism, ParamSet};
pub use workload::{Catalog, DataMode};
