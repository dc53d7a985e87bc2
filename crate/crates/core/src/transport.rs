//! Transport mechanisms, their stage sequences and cost models.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::units::{TimeSpan, NS_PER_MS};
use crate::workload::DataMode;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("mechanism `local` has no network transfer")]
    LocalTransfer,
    #[error("invalid proxied connection {hop1}/{hop2}: {reason}")]
    InvalidProxy {
        hop1: Mechanism,
        hop2: Mechanism,
        reason: &'static str,
    },
    #[error("parameter `{name}` is invalid: {reason}")]
    InvalidParam { name: &'static str, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Tcp,
    Rdma,
    Gdr,
    Local,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [
        Mechanism::Tcp,
        Mechanism::Rdma,
        Mechanism::Gdr,
        Mechanism::Local,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Mechanism::Tcp => "tcp",
            Mechanism::Rdma => "rdma",
            Mechanism::Gdr => "gdr",
            Mechanism::Local => "local",
        }
    }

    /// Whether this mechanism moves data with memory read/write semantics.
    pub fn is_rdma_family(self) -> bool {
        matches!(self, Mechanism::Rdma | Mechanism::Gdr)
    }

    /// Whether payloads are staged in host memory and need H2D/D2H copies.
    pub fn needs_copies(self) -> bool {
        matches!(self, Mechanism::Tcp | Mechanism::Rdma)
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Mechanism {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tcp" => Ok(Mechanism::Tcp),
            "rdma" => Ok(Mechanism::Rdma),
            "gdr" => Ok(Mechanism::Gdr),
            "local" => Ok(Mechanism::Local),
            _ => Err(format!("unknown mechanism `{s}` (tcp|rdma|gdr|local)")),
        }
    }
}

/// Calibratable latency-model constants.
///
/// Bandwidths are in bytes per millisecond. Per-byte costs use the duration
/// notation (`"0.4ns"` means 0.4 ns per byte).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamSet {
    /// Per-message setup cost of a TCP send/receive.
    pub alpha_tcp: TimeSpan,
    /// Per-message cost of posting a work request and reaping its completion.
    pub alpha_rdma: TimeSpan,
    pub b_tcp_bytes_per_ms: f64,
    pub b_rdma_bytes_per_ms: f64,
    /// Line rate of the shared NIC link; bounds how long a message holds it.
    pub link_bytes_per_ms: f64,
    /// Server CPU time per TCP byte moved.
    pub gamma_tcp: TimeSpan,
    /// Server CPU time per RDMA/GDR message (control plane only).
    pub c_ctrl: TimeSpan,
    /// Server CPU time to issue one H2D/D2H copy.
    pub cpu_copy_issue: TimeSpan,
    pub beta_copy: TimeSpan,
    pub b_pcie_bytes_per_ms: f64,
    /// Gateway cost per byte when the two hops differ in memory semantics.
    pub gateway_translate_per_byte: TimeSpan,
    /// Gateway cost per message when both hops use the same semantics.
    pub gateway_forward: TimeSpan,
    /// GFLOP per execution engine per millisecond.
    pub engine_rate_gflops_per_ms: f64,
    /// Delay added to every execution engine's availability per copy issued.
    pub interference: TimeSpan,
    /// Further delay per byte of the issued copy.
    pub interference_per_byte: TimeSpan,
    /// One-time queue-pair and memory-registration setup; reported only.
    pub rdma_connection_setup: TimeSpan,
}

impl Default for ParamSet {
    /// The shipped calibration (`pack/params.toml`).
    fn default() -> Self {
        ParamSet {
            alpha_tcp: TimeSpan::from_ns(391_850.0),
            alpha_rdma: TimeSpan::from_us(8.0),
            b_tcp_bytes_per_ms: 1_388_000.0,
            b_rdma_bytes_per_ms: 2_900_000.0,
            link_bytes_per_ms: 3_125_000.0,
            gamma_tcp: TimeSpan::from_ns(0.00136),
            c_ctrl: TimeSpan::from_us(15.0),
            cpu_copy_issue: TimeSpan::from_us(3.0),
            beta_copy: TimeSpan::from_ns(5_143.0),
            b_pcie_bytes_per_ms: 3_194_880.0,
            gateway_translate_per_byte: TimeSpan::from_ns(0.05),
            gateway_forward: TimeSpan::ZERO,
            engine_rate_gflops_per_ms: 0.10405,
            interference: TimeSpan::from_us(20.0),
            interference_per_byte: TimeSpan::from_ns(0.856),
            rdma_connection_setup: TimeSpan::from_ms(2.0),
        }
    }
}

impl ParamSet {
    pub fn validate(&self) -> Result<(), TransportError> {
        let positive = [
            ("b_tcp_bytes_per_ms", self.b_tcp_bytes_per_ms),
            ("b_rdma_bytes_per_ms", self.b_rdma_bytes_per_ms),
            ("link_bytes_per_ms", self.link_bytes_per_ms),
            ("b_pcie_bytes_per_ms", self.b_pcie_bytes_per_ms),
            ("engine_rate_gflops_per_ms", self.engine_rate_gflops_per_ms),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(TransportError::InvalidParam {
                    name,
                    reason: "must be a finite positive number",
                });
            }
        }
        let costs = [
            ("alpha_tcp", self.alpha_tcp),
            ("alpha_rdma", self.alpha_rdma),
            ("gamma_tcp", self.gamma_tcp),
            ("c_ctrl", self.c_ctrl),
            ("cpu_copy_issue", self.cpu_copy_issue),
            ("beta_copy", self.beta_copy),
            ("gateway_translate_per_byte", self.gateway_translate_per_byte),
            ("gateway_forward", self.gateway_forward),
            ("interference", self.interference),
            ("interference_per_byte", self.interference_per_byte),
            ("rdma_connection_setup", self.rdma_connection_setup),
        ];
        for (name, v) in costs {
            if !(v.ns() >= 0.0) || !v.ns().is_finite() {
                return Err(TransportError::InvalidParam {
                    name,
                    reason: "must be a finite non-negative duration",
                });
            }
        }
        Ok(())
    }

    /// Execution-engine delay caused by issuing one copy of `bytes`.
    pub fn copy_interference(&self, bytes: u64) -> f64 {
        self.interference.ns() + self.interference_per_byte.ns() * bytes as f64
    }

    /// The shipped calibration as text.
    pub const SHIPPED: &'static str = include_str!("../pack/params.toml");

    pub fn from_toml(text: &str) -> Result<ParamSet, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("ParamSet serialises")
    }
}

/// One stage of the serving pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    RequestXfer,
    GatewayRequest,
    H2d,
    Preprocess,
    Inference,
    D2h,
    GatewayResponse,
    ResponseXfer,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::RequestXfer => "request_xfer",
            Stage::GatewayRequest => "gateway_request",
            Stage::H2d => "h2d",
            Stage::Preprocess => "preprocess",
            Stage::Inference => "inference",
            Stage::D2h => "d2h",
            Stage::GatewayResponse => "gateway_response",
            Stage::ResponseXfer => "response_xfer",
        }
    }

    pub fn is_copy(self) -> bool {
        matches!(self, Stage::H2d | Stage::D2h)
    }

    pub fn is_transfer(self) -> bool {
        matches!(self, Stage::RequestXfer | Stage::ResponseXfer)
    }

    pub fn is_gpu(self) -> bool {
        matches!(self, Stage::H2d | Stage::Preprocess | Stage::Inference | Stage::D2h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkDir {
    /// Towards the GPU server.
    Forward,
    Reverse,
}

/// What a stage occupies while it runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResourceKind {
    /// Hop 0 is the client-facing hop; hop 1 exists only behind a gateway.
    Link { hop: u8, dir: LinkDir },
    Gateway,
    CopyEngines,
    ExecEngines,
}

impl ResourceKind {
    pub fn label(self) -> String {
        match self {
            ResourceKind::Link { hop, dir } => format!(
                "link{hop}_{}",
                match dir {
                    LinkDir::Forward => "fwd",
                    LinkDir::Reverse => "rev",
                }
            ),
            ResourceKind::Gateway => "gateway".into(),
            ResourceKind::CopyEngines => "copy".into(),
            ResourceKind::ExecEngines => "exec".into(),
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for ResourceKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanStep {
    pub stage: Stage,
    pub resource: ResourceKind,
    /// Wire mechanism for transfer stages.
    pub mechanism: Option<Mechanism>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelinePlan {
    pub steps: Vec<PlanStep>,
    /// Mechanism of the hop that lands data at the GPU server.
    pub server_mechanism: Mechanism,
    /// `(hop1, hop2)` when a store-and-forward gateway sits in the path.
    pub gateway: Option<(Mechanism, Mechanism)>,
}

impl PipelinePlan {
    pub fn stages(&self) -> Vec<Stage> {
        self.steps.iter().map(|s| s.stage).collect()
    }

    pub fn has_copies(&self) -> bool {
        self.steps.iter().any(|s| s.stage.is_copy())
    }
}

fn link(stage: Stage, hop: u8, dir: LinkDir, mech: Mechanism) -> PlanStep {
    PlanStep {
        stage,
        resource: ResourceKind::Link { hop, dir },
        mechanism: Some(mech),
    }
}

fn gpu(stage: Stage) -> PlanStep {
    let resource = if stage.is_copy() {
        ResourceKind::CopyEngines
    } else {
        ResourceKind::ExecEngines
    };
    PlanStep {
        stage,
        resource,
        mechanism: None,
    }
}

fn server_steps(mech: Mechanism, mode: DataMode) -> Vec<PlanStep> {
    let mut steps = Vec::with_capacity(4);
    if mech.needs_copies() {
        steps.push(gpu(Stage::H2d));
    }
    if mode == DataMode::Raw {
        steps.push(gpu(Stage::Preprocess));
    }
    steps.push(gpu(Stage::Inference));
    if mech.needs_copies() {
        steps.push(gpu(Stage::D2h));
    }
    steps
}

/// Stage sequence for a direct connection.
pub fn pipeline_events(mech: Mechanism, mode: DataMode) -> PipelinePlan {
    let mut steps = Vec::new();
    if mech != Mechanism::Local {
        steps.push(link(Stage::RequestXfer, 0, LinkDir::Forward, mech));
    }
    steps.extend(server_steps(mech, mode));
    if mech != Mechanism::Local {
        steps.push(link(Stage::ResponseXfer, 0, LinkDir::Reverse, mech));
    }
    PipelinePlan {
        steps,
        server_mechanism: mech,
        gateway: None,
    }
}

/// Stage sequence through a store-and-forward gateway: the full message is
/// received over `hop1`, translated, then sent over `hop2` to the server.
pub fn proxy_compose(
    hop1: Mechanism,
    hop2: Mechanism,
    mode: DataMode,
) -> Result<PipelinePlan, TransportError> {
    if hop1 == Mechanism::Local {
        return Err(TransportError::InvalidProxy {
            hop1,
            hop2,
            reason: "the client hop cannot be local",
        });
    }
    if hop2 == Mechanism::Local {
        return Err(TransportError::InvalidProxy {
            hop1,
            hop2,
            reason: "the server hop cannot be local",
        });
    }
    if hop1 == Mechanism::Gdr {
        return Err(TransportError::InvalidProxy {
            hop1,
            hop2,
            reason: "the gateway has no GPU; the client hop must be tcp or rdma",
        });
    }
    let gateway = |stage| PlanStep {
        stage,
        resource: ResourceKind::Gateway,
        mechanism: None,
    };
    let mut steps = vec![
        link(Stage::RequestXfer, 0, LinkDir::Forward, hop1),
        gateway(Stage::GatewayRequest),
        link(Stage::RequestXfer, 1, LinkDir::Forward, hop2),
    ];
    steps.extend(server_steps(hop2, mode));
    steps.extend([
        link(Stage::ResponseXfer, 1, LinkDir::Reverse, hop2),
        gateway(Stage::GatewayResponse),
        link(Stage::ResponseXfer, 0, LinkDir::Reverse, hop1),
    ]);
    Ok(PipelinePlan {
        steps,
        server_mechanism: hop2,
        gateway: Some((hop1, hop2)),
    })
}

/// All proxied configurations exercised by the reproduction pack.
pub const PROXY_CONFIGS: [(Mechanism, Mechanism); 5] = [
    (Mechanism::Rdma, Mechanism::Gdr),
    (Mechanism::Rdma, Mechanism::Rdma),
    (Mechanism::Tcp, Mechanism::Gdr),
    (Mechanism::Tcp, Mechanism::Rdma),
    (Mechanism::Tcp, Mechanism::Tcp),
];

/// Wire time of one message in nanoseconds (affine in size).
pub fn transfer_time(mech: Mechanism, bytes: u64, p: &ParamSet) -> Result<f64, TransportError> {
    let b = bytes as f64;
    match mech {
        Mechanism::Tcp => Ok(p.alpha_tcp.ns() + b / p.b_tcp_bytes_per_ms * NS_PER_MS),
        Mechanism::Rdma | Mechanism::Gdr => {
            Ok(p.alpha_rdma.ns() + b / p.b_rdma_bytes_per_ms * NS_PER_MS)
        }
        Mechanism::Local => Err(TransportError::LocalTransfer),
    }
}

/// Time a message holds the shared NIC link, never longer than its transfer.
pub fn link_hold_time(mech: Mechanism, bytes: u64, p: &ParamSet) -> Result<f64, TransportError> {
    let serialise = bytes as f64 / p.link_bytes_per_ms * NS_PER_MS;
    Ok(serialise.min(transfer_time(mech, bytes, p)?))
}

/// Server CPU time spent moving one message.
pub fn cpu_cost(mech: Mechanism, bytes: u64, p: &ParamSet) -> f64 {
    match mech {
        Mechanism::Tcp => p.gamma_tcp.ns() * bytes as f64,
        Mechanism::Rdma | Mechanism::Gdr => p.c_ctrl.ns(),
        Mechanism::Local => 0.0,
    }
}

/// Gateway processing for one message between the two hops.
pub fn gateway_time(hop1: Mechanism, hop2: Mechanism, bytes: u64, p: &ParamSet) -> f64 {
    if hop1.is_rdma_family() != hop2.is_rdma_family() {
        p.gateway_translate_per_byte.ns() * bytes as f64
    } else {
        p.gateway_forward.ns()
    }
}
