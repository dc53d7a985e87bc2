//! Discrete-event simulation core.
//!
//! Events are processed in `(time, seq)` order. All events sharing a
//! timestamp are applied first; then the resources are arbitrated in a fixed
//! order (links and gateway, stream tokens, copy queue, execution engines)
//! with simultaneous arrivals ordered by `(ready time, client)`. Slice
//! expiries are evaluated after all same-time completions. Outcomes thus do
//! not depend on the order in which same-time events were posted.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::gpu::{
    apply_sharing_mode, build_kernel_plan, copy_duration, CopyDir, CopyOp, GpuConfig, GpuError,
    GpuState, Kernel, KernelGroup, SharingMode,
};
use crate::resource::FcfsResource;
use crate::transport::{
    cpu_cost, gateway_time, link_hold_time, pipeline_events, proxy_compose, transfer_time,
    LinkDir, Mechanism, ParamSet, PipelinePlan, ResourceKind, Stage, TransportError,
};
use crate::units::{round_ns, Nanos};
use crate::workload::{
    payload_bytes, Catalog, ClientSpec, ClientState, DataMode, Direction, NextRequest, Priority,
    RawImage, WorkloadError,
};

pub const TRACE_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_WARMUP: u32 = 10;

pub const TRACE_CSV_HEADER: &str =
    "client,request,priority,stage,resource,ready_ns,start_ns,end_ns,stream_wait_ns,resource_wait_ns";

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Gpu(#[from] GpuError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("internal simulation error: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Connection {
    Direct(Mechanism),
    Proxied { hop1: Mechanism, hop2: Mechanism },
}

impl Connection {
    pub fn plan(&self, mode: DataMode) -> Result<PipelinePlan, TransportError> {
        match *self {
            Connection::Direct(m) => Ok(pipeline_events(m, mode)),
            Connection::Proxied { hop1, hop2 } => proxy_compose(hop1, hop2, mode),
        }
    }

    pub fn client_mechanism(&self) -> Mechanism {
        match *self {
            Connection::Direct(m) => m,
            Connection::Proxied { hop1, .. } => hop1,
        }
    }

    pub fn server_mechanism(&self) -> Mechanism {
        match *self {
            Connection::Direct(m) => m,
            Connection::Proxied { hop2, .. } => hop2,
        }
    }
}

impl fmt::Display for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Connection::Direct(m) => write!(f, "{m}"),
            Connection::Proxied { hop1, hop2 } => write!(f, "{hop1}/{hop2}"),
        }
    }
}

impl FromStr for Connection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            None => Ok(Connection::Direct(s.trim().parse()?)),
            Some((a, b)) => Ok(Connection::Proxied {
                hop1: a.trim().parse()?,
                hop2: b.trim().parse()?,
            }),
        }
    }
}

impl Serialize for Connection {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Connection {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A fully specified simulation input.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: String,
    pub catalog: Catalog,
    pub data_mode: DataMode,
    pub raw_image: RawImage,
    pub connection: Connection,
    pub clients: Vec<ClientSpec>,
    pub sharing: SharingMode,
    pub gpu: GpuConfig,
    pub params: ParamSet,
    pub seed: u64,
    pub warmup_requests: u32,
    /// Sigma of multiplicative lognormal noise on block and transfer times;
    /// zero disables noise.
    pub noise_sigma: f64,
}

impl Scenario {
    /// `clients` normal-priority clients, one stream each.
    pub fn new(model: &str, data_mode: DataMode, connection: Connection, clients: u32) -> Self {
        Scenario {
            model: model.to_string(),
            catalog: Catalog::builtin(),
            data_mode,
            raw_image: RawImage::default(),
            connection,
            clients: (0..clients).map(ClientSpec::new).collect(),
            sharing: SharingMode::MultiStream {
                max_streams: clients.max(1),
            },
            gpu: GpuConfig::default(),
            params: ParamSet::default(),
            seed: 0,
            warmup_requests: DEFAULT_WARMUP,
            noise_sigma: 0.0,
        }
    }

    pub fn with_requests(mut self, n: u32) -> Self {
        for c in &mut self.clients {
            c.request_count = n;
        }
        self
    }

    pub fn with_warmup(mut self, n: u32) -> Self {
        self.warmup_requests = n;
        self
    }

    pub fn with_sharing(mut self, sharing: SharingMode) -> Self {
        self.sharing = sharing;
        self
    }

    pub fn with_params(mut self, params: ParamSet) -> Self {
        self.params = params;
        self
    }

    /// Mark the first `n` clients high priority.
    pub fn with_high_priority(mut self, n: usize) -> Self {
        for (i, c) in self.clients.iter_mut().enumerate() {
            c.priority = if i < n {
                Priority::High
            } else {
                Priority::Normal
            };
        }
        self
    }

    pub fn label(&self) -> String {
        format!(
            "{} {} {} clients={} {}",
            self.model,
            self.data_mode,
            self.connection,
            self.clients.len(),
            self.sharing.label()
        )
    }

    /// Check every reference and bound before simulating.
    pub fn validate(&self) -> Result<(), SimError> {
        let model = self.catalog.get(&self.model)?;
        model.validate()?;
        self.params.validate()?;
        self.gpu.validate()?;
        self.connection.plan(self.data_mode)?;
        apply_sharing_mode(self.sharing, &self.clients)?;
        let mut ids: Vec<u32> = self.clients.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.clients.len() {
            return Err(SimError::Invalid("client ids must be unique".into()));
        }
        if self.clients.iter().any(|c| c.request_count == 0) {
            return Err(SimError::Invalid("request_count must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(SimError::Invalid("noise sigma must be >= 0".into()));
        }
        if self.connection.server_mechanism() == Mechanism::Gdr {
            let per_client = payload_bytes(model, self.data_mode, Direction::Request, self.raw_image)
                + payload_bytes(model, self.data_mode, Direction::Response, self.raw_image);
            let need = per_client.saturating_mul(self.clients.len() as u64);
            if need > self.gpu.memory_bytes {
                return Err(SimError::Invalid(format!(
                    "GDR buffers for {} clients need {need} bytes, more than the {} bytes of GPU memory",
                    self.clients.len(),
                    self.gpu.memory_bytes
                )));
            }
        }
        Ok(())
    }
}

/// One stage interval of one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub resource: ResourceKind,
    /// When the predecessor finished.
    pub ready: Nanos,
    pub start: Nanos,
    pub end: Nanos,
    /// Waiting for a stream token (first GPU stage only).
    pub stream_wait: Nanos,
    /// Waiting for the stage's own resource.
    pub resource_wait: Nanos,
}

impl StageRecord {
    pub fn duration(&self) -> Nanos {
        self.end - self.start
    }

    pub fn wait(&self) -> Nanos {
        self.stream_wait + self.resource_wait
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestTrace {
    pub client: u32,
    pub request: u32,
    pub priority: Priority,
    pub issue: Nanos,
    /// Response fully received; `None` until then.
    pub complete: Option<Nanos>,
    pub stages: Vec<StageRecord>,
    /// Server CPU time spent moving data for this request.
    pub cpu_ns: Nanos,
    pub gateway_cpu_ns: Nanos,
}

impl RequestTrace {
    pub fn total(&self) -> Option<Nanos> {
        self.complete.map(|c| c - self.issue)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub events: u64,
    pub makespan_ns: Nanos,
    pub copy_ops: u64,
    pub blocks_launched: u64,
    pub context_switches: u64,
    pub copy_busy_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSet {
    pub schema_version: u32,
    pub scenario: String,
    pub model: String,
    pub data_mode: DataMode,
    pub connection: Connection,
    pub seed: u64,
    pub warmup_requests: u32,
    /// Ordered by `(client, request)`.
    pub requests: Vec<RequestTrace>,
    pub stats: RunStats,
}

impl TraceSet {
    /// Requests counted in aggregates.
    pub fn measured(&self) -> impl Iterator<Item = &RequestTrace> {
        let w = self.warmup_requests;
        self.requests.iter().filter(move |r| r.request >= w)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRACE_CSV_HEADER}")?;
        for r in &self.requests {
            for s in &r.stages {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.client,
                    r.request,
                    r.priority.label(),
                    s.stage.label(),
                    s.resource.label(),
                    s.ready,
                    s.start,
                    s.end,
                    s.stream_wait,
                    s.resource_wait
                )?;
            }
        }
        Ok(())
    }

    /// Check the invariants every trace must satisfy: each request completes,
    /// stages are contiguous from issue to completion, each stage's waits
    /// explain the gap between ready and start, and the stage set matches the
    /// connection (no copies when the server path has none, no transfers for
    /// local serving).
    pub fn check_shape(&self) -> Result<(), String> {
        let plan = self.connection.plan(self.data_mode).map_err(|e| e.to_string())?;
        let local = self.connection == Connection::Direct(Mechanism::Local);
        for r in &self.requests {
            let at = || format!("client {} request {}", r.client, r.request);
            let complete = r.complete.ok_or_else(|| format!("{} never completed", at()))?;
            let mut cursor = r.issue;
            let mut sum: Nanos = 0;
            for st in &r.stages {
                if st.ready != cursor || st.start < st.ready || st.end < st.start {
                    return Err(format!("{}: {} is not contiguous", at(), st.stage.label()));
                }
                if st.start - st.ready != st.wait() {
                    return Err(format!("{}: {} waits do not cover its delay", at(), st.stage.label()));
                }
                if st.stage.is_copy() && !plan.has_copies() {
                    return Err(format!("{}: copy stage on a path without copies", at()));
                }
                if st.stage.is_transfer() && local {
                    return Err(format!("{}: transfer stage in local serving", at()));
                }
                sum += st.duration() + st.wait();
                cursor = st.end;
            }
            if cursor != complete || sum != complete - r.issue {
                return Err(format!(
                    "{}: stages sum to {sum} ns, total is {} ns",
                    at(),
                    complete - r.issue
                ));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serialises")
    }
}

enum StepCost {
    Link {
        hop: usize,
        dir: usize,
        transfer: f64,
        hold: f64,
    },
    Gateway {
        service: Nanos,
    },
    Copy {
        dir: CopyDir,
        bytes: u64,
        duration: Nanos,
        interference: Nanos,
    },
    Exec {
        kernels: Vec<Kernel>,
    },
}

struct Step {
    stage: Stage,
    resource: ResourceKind,
    cost: StepCost,
}

struct Compiled {
    steps: Vec<Step>,
    last_gpu: Option<usize>,
    hops: usize,
    cpu_ns: Nanos,
    gateway_cpu_ns: Nanos,
}

fn compile(s: &Scenario) -> Result<Compiled, SimError> {
    let model = s.catalog.get(&s.model)?;
    let plan = s.connection.plan(s.data_mode)?;
    let kplan = build_kernel_plan(model, s.data_mode, &s.gpu, &s.params)?;
    let req = payload_bytes(model, s.data_mode, Direction::Request, s.raw_image);
    let resp = payload_bytes(model, s.data_mode, Direction::Response, s.raw_image);
    let p = &s.params;
    let mut steps = Vec::with_capacity(plan.steps.len());
    let mut hops = 1;
    let mut cpu = 0.0;
    let mut gw_cpu = 0.0;
    let server_hop = if plan.gateway.is_some() { 1 } else { 0 };
    for ps in &plan.steps {
        let bytes = match ps.stage {
            Stage::RequestXfer | Stage::GatewayRequest | Stage::H2d => req,
            _ => resp,
        };
        let cost = match ps.resource {
            ResourceKind::Link { hop, dir } => {
                let mech = ps.mechanism.expect("link steps carry a mechanism");
                hops = hops.max(hop as usize + 1);
                if hop as usize == server_hop {
                    cpu += cpu_cost(mech, bytes, p);
                }
                StepCost::Link {
                    hop: hop as usize,
                    dir: match dir {
                        LinkDir::Forward => 0,
                        LinkDir::Reverse => 1,
                    },
                    transfer: transfer_time(mech, bytes, p)?,
                    hold: link_hold_time(mech, bytes, p)?,
                }
            }
            ResourceKind::Gateway => {
                let (h1, h2) = plan.gateway.expect("gateway steps imply a gateway");
                let t = gateway_time(h1, h2, bytes, p);
                gw_cpu += t;
                StepCost::Gateway { service: round_ns(t) }
            }
            ResourceKind::CopyEngines => {
                cpu += p.cpu_copy_issue.ns();
                StepCost::Copy {
                    dir: if ps.stage == Stage::H2d {
                        CopyDir::H2d
                    } else {
                        CopyDir::D2h
                    },
                    bytes,
                    duration: round_ns(copy_duration(bytes, p)?),
                    interference: round_ns(p.copy_interference(bytes)),
                }
            }
            ResourceKind::ExecEngines => {
                let group = if ps.stage == Stage::Preprocess {
                    KernelGroup::Preprocess
                } else {
                    KernelGroup::Inference
                };
                StepCost::Exec {
                    kernels: kplan.group(group),
                }
            }
        };
        steps.push(Step {
            stage: ps.stage,
            resource: ps.resource,
            cost,
        });
    }
    let last_gpu = steps.iter().rposition(|s| s.stage.is_gpu());
    Ok(Compiled {
        steps,
        last_gpu,
        hops,
        cpu_ns: round_ns(cpu),
        gateway_cpu_ns: round_ns(gw_cpu),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Issue(usize),
    StageDone(usize),
    BlockDone(usize),
    EngineWake,
    QuantumTick(u64),
}

struct Active {
    index: u32,
    issue: Nanos,
    step: usize,
    ready: Nanos,
    stream: Option<usize>,
    stream_wait: Nanos,
    stages: Vec<StageRecord>,
    current: Option<StageRecord>,
}

struct Noise {
    rng: ChaCha8Rng,
    dist: LogNormal<f64>,
}

impl Noise {
    fn factor(&mut self) -> f64 {
        self.dist.sample(&mut self.rng)
    }
}

struct Sim<'a> {
    scenario: &'a Scenario,
    plan: Compiled,
    heap: BinaryHeap<Reverse<(Nanos, u64, Ev)>>,
    seq: u64,
    now: Nanos,
    events: u64,
    clients: Vec<ClientState>,
    active: Vec<Option<Active>>,
    links: Vec<[FcfsResource; 2]>,
    gateway: FcfsResource,
    gpu: GpuState,
    pooled: bool,
    arrivals: Vec<usize>,
    stream_queue: BTreeSet<(Nanos, usize)>,
    posted_wakes: BTreeSet<Nanos>,
    due_ticks: Vec<u64>,
    noise: Option<Noise>,
    done: Vec<RequestTrace>,
}

/// Simulate a scenario with its own seed.
pub fn run(scenario: &Scenario) -> Result<TraceSet, SimError> {
    run_with_seed(scenario, scenario.seed)
}

pub fn run_with_seed(scenario: &Scenario, seed: u64) -> Result<TraceSet, SimError> {
    scenario.validate()?;
    let mut clients = scenario.clients.clone();
    clients.sort_by_key(|c| c.id);
    let variant = apply_sharing_mode(scenario.sharing, &clients)?;
    let plan = compile(scenario)?;
    let noise = if scenario.noise_sigma > 0.0 {
        let sigma = scenario.noise_sigma;
        Some(Noise {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dist: LogNormal::new(-sigma * sigma / 2.0, sigma)
                .map_err(|e| SimError::Invalid(e.to_string()))?,
        })
    } else {
        None
    };
    let n = clients.len();
    let mut sim = Sim {
        scenario,
        links: (0..plan.hops)
            .map(|_| [FcfsResource::new(1), FcfsResource::new(1)])
            .collect(),
        plan,
        heap: BinaryHeap::new(),
        seq: 0,
        now: 0,
        events: 0,
        clients: clients.into_iter().map(ClientState::new).collect(),
        active: (0..n).map(|_| None).collect(),
        gateway: FcfsResource::new(1),
        pooled: variant.pooled,
        gpu: GpuState::new(&scenario.gpu, variant),
        arrivals: Vec::new(),
        stream_queue: BTreeSet::new(),
        posted_wakes: BTreeSet::new(),
        due_ticks: Vec::new(),
        noise,
        done: Vec::with_capacity(scenario.clients.iter().map(|c| c.request_count as usize).sum()),
    };
    sim.start();
    sim.run_loop();
    sim.finish(seed)
}

impl Sim<'_> {
    fn post(&mut self, at: Nanos, ev: Ev) {
        debug_assert!(at >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.heap.push(Reverse((at, self.seq, ev)));
    }

    fn start(&mut self) {
        let t0 = if self.scenario.connection.client_mechanism().is_rdma_family() {
            self.scenario.params.rdma_connection_setup.nanos()
        } else {
            0
        };
        for slot in 0..self.clients.len() {
            self.schedule_issue(slot, t0);
        }
    }

    fn schedule_issue(&mut self, slot: usize, now: Nanos) {
        if let NextRequest::Issue { at, .. } = self.clients[slot].next_request(now) {
            self.post(at, Ev::Issue(slot));
        }
    }

    fn run_loop(&mut self) {
        while let Some(Reverse((t, _, ev))) = self.heap.pop() {
            self.now = t;
            self.apply(ev);
            while self.heap.peek().is_some_and(|Reverse(e)| e.0 == t) {
                let Reverse((_, _, ev)) = self.heap.pop().expect("peeked");
                self.apply(ev);
            }
            self.arbitrate();
        }
    }

    fn apply(&mut self, ev: Ev) {
        self.events += 1;
        match ev {
            Ev::Issue(slot) => {
                let index = self.clients[slot].issued() - 1;
                self.active[slot] = Some(Active {
                    index,
                    issue: self.now,
                    step: 0,
                    ready: self.now,
                    stream: None,
                    stream_wait: 0,
                    stages: Vec::with_capacity(self.plan.steps.len()),
                    current: None,
                });
                self.arrivals.push(slot);
            }
            Ev::StageDone(slot) => self.complete_stage(slot),
            Ev::BlockDone(engine) => {
                let d = self.gpu.block_done(engine, self.now);
                if d.group_finished.is_some() {
                    self.complete_stage(d.owner);
                }
            }
            Ev::EngineWake => {
                self.posted_wakes.remove(&self.now);
            }
            Ev::QuantumTick(generation) => self.due_ticks.push(generation),
        }
    }

    fn complete_stage(&mut self, slot: usize) {
        let now = self.now;
        let last_gpu = self.plan.last_gpu;
        let a = self.active[slot].as_mut().expect("stage completes for an active request");
        let mut rec = a.current.take().expect("stage was started");
        rec.end = now;
        a.stages.push(rec);
        if Some(a.step) == last_gpu {
            let s = a.stream.take().expect("gpu stages hold a stream");
            self.gpu.release_stream(s);
        }
        a.step += 1;
        a.ready = now;
        if a.step < self.plan.steps.len() {
            self.arrivals.push(slot);
            return;
        }
        let a = self.active[slot].take().expect("active");
        let spec = &self.clients[slot].spec;
        self.done.push(RequestTrace {
            client: spec.id,
            request: a.index,
            priority: spec.priority,
            issue: a.issue,
            complete: Some(now),
            stages: a.stages,
            cpu_ns: self.plan.cpu_ns,
            gateway_cpu_ns: self.plan.gateway_cpu_ns,
        });
        self.clients[slot].record_response(now);
        if let NextRequest::Issue { at, .. } = self.clients[slot].next_request(now) {
            self.post(at, Ev::Issue(slot));
        }
    }

    fn begin(&mut self, slot: usize, start: Nanos) {
        let a = self.active[slot].as_mut().expect("active");
        let step = &self.plan.steps[a.step];
        let stream_wait = a.stream_wait;
        a.stream_wait = 0;
        a.current = Some(StageRecord {
            stage: step.stage,
            resource: step.resource,
            ready: a.ready,
            start,
            end: start,
            stream_wait,
            resource_wait: start - a.ready - stream_wait,
        });
    }

    fn factor(&mut self) -> f64 {
        self.noise.as_mut().map_or(1.0, Noise::factor)
    }

    fn arbitrate(&mut self) {
        let now = self.now;
        for generation in std::mem::take(&mut self.due_ticks) {
            self.gpu.quantum_tick(generation, now);
        }
        let mut arrivals = std::mem::take(&mut self.arrivals);
        arrivals.sort_unstable();
        let mut gpu_ready = Vec::new();
        for slot in arrivals {
            let a = self.active[slot].as_ref().expect("arrival is active");
            let (ready, holds_stream, step) = (a.ready, a.stream.is_some(), a.step);
            match self.plan.steps[step].cost {
                StepCost::Link {
                    hop,
                    dir,
                    transfer,
                    hold,
                } => {
                    let f = self.factor();
                    let transfer = round_ns(transfer * f);
                    let hold = round_ns(hold * f).min(transfer);
                    let g = self.links[hop][dir].occupy(now, hold);
                    self.begin(slot, g.start);
                    self.post(g.start + transfer, Ev::StageDone(slot));
                }
                StepCost::Gateway { service } => {
                    let g = self.gateway.occupy(now, service);
                    self.begin(slot, g.start);
                    self.post(g.end, Ev::StageDone(slot));
                }
                StepCost::Copy { .. } | StepCost::Exec { .. } => {
                    if holds_stream {
                        gpu_ready.push((ready, slot));
                    } else {
                        self.stream_queue.insert((ready, slot));
                    }
                }
            }
        }

        let waiting: Vec<(Nanos, usize)> = self.stream_queue.iter().copied().collect();
        for (ready, slot) in waiting {
            match self.gpu.acquire_stream(slot) {
                Some(s) => {
                    self.stream_queue.remove(&(ready, slot));
                    let a = self.active[slot].as_mut().expect("active");
                    a.stream = Some(s);
                    a.stream_wait = now - ready;
                    gpu_ready.push((ready, slot));
                }
                None if self.pooled => break,
                None => {}
            }
        }

        gpu_ready.sort_unstable();
        for (_, slot) in gpu_ready {
            let a = self.active[slot].as_ref().expect("active");
            let stream = a.stream.expect("stream held");
            let priority = self.clients[slot].spec.priority;
            match &self.plan.steps[a.step].cost {
                StepCost::Copy {
                    dir,
                    bytes,
                    duration,
                    interference,
                } => {
                    let op = CopyOp {
                        direction: *dir,
                        bytes: *bytes,
                        duration: *duration,
                        owner_stream: stream,
                        priority,
                    };
                    let g = self.gpu.enqueue_copy(op, now, *interference);
                    self.begin(slot, g.start);
                    self.post(g.end, Ev::StageDone(slot));
                }
                StepCost::Exec { kernels } => {
                    let mut kernels = kernels.clone();
                    if self.noise.is_some() {
                        for k in &mut kernels {
                            let f = self.factor();
                            k.block_time = round_ns(k.block_time as f64 * f);
                        }
                    }
                    if kernels.is_empty() {
                        self.begin(slot, now);
                        self.post(now, Ev::StageDone(slot));
                    } else {
                        self.gpu.submit(stream, slot, priority, &kernels);
                    }
                }
                _ => unreachable!("only gpu steps wait for streams"),
            }
        }

        while let Some(l) = self.gpu.schedule_next_block(now) {
            self.post(l.ends_at, Ev::BlockDone(l.engine));
            if l.group_started.is_some() {
                self.begin(l.owner, now);
            }
        }
        for w in self.gpu.take_wakes() {
            if w > now && self.posted_wakes.insert(w) {
                self.post(w, Ev::EngineWake);
            }
        }
        for (t, generation) in self.gpu.take_ticks() {
            self.post(t, Ev::QuantumTick(generation));
        }
    }

    fn finish(mut self, seed: u64) -> Result<TraceSet, SimError> {
        if let Some(slot) = self.active.iter().position(Option::is_some) {
            return Err(SimError::Internal(format!(
                "event queue drained with client {slot} still in flight"
            )));
        }
        for c in &self.clients {
            if c.issued() != c.spec.request_count {
                return Err(SimError::Internal(format!(
                    "client {} issued {} of {} requests",
                    c.spec.id,
                    c.issued(),
                    c.spec.request_count
                )));
            }
        }
        self.done.sort_by_key(|r| (r.client, r.request));
        let counters = self.gpu.counters();
        let s = self.scenario;
        Ok(TraceSet {
            schema_version: TRACE_SCHEMA_VERSION,
            scenario: s.label(),
            model: s.model.clone(),
            data_mode: s.data_mode,
            connection: s.connection,
            seed,
            warmup_requests: s.warmup_requests,
            requests: self.done,
            stats: RunStats {
                events: self.events,
                makespan_ns: self.now,
                copy_ops: counters.copy_ops,
                blocks_launched: counters.blocks_launched,
                context_switches: counters.context_switches,
                copy_busy_ns: counters.copy_busy_ns,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{TimeSpan, NS_PER_MS};
    use crate::workload::ModelProfile;

    const MS: Nanos = NS_PER_MS as Nanos;

    /// A model whose response and request are `bytes` each and whose compute
    /// is one block of `ms` milliseconds at rate 1 GFLOP/ms.
    fn toy(ms: f64, connection: Connection, clients: u32) -> Scenario {
        let mut s = Scenario::new("Toy", DataMode::Preprocessed, connection, clients);
        s.catalog
            .insert(ModelProfile {
                name: "Toy".into(),
                gflops: ms,
                input_shape: vec![250],
                output_shapes: vec![vec![250]],
                preprocess_gflops: None,
            })
            .unwrap();
        s.gpu.exec_engines = 1;
        s.gpu.kernels_per_model = 1;
        s.gpu.blocks_per_kernel = 1;
        s.params.engine_rate_gflops_per_ms = 1.0;
        s.params.interference = TimeSpan::ZERO;
        s.params.interference_per_byte = TimeSpan::ZERO;
        s.params.rdma_connection_setup = TimeSpan::ZERO;
        s.warmup_requests = 0;
        s.with_requests(1)
    }

    #[test]
    fn local_single_client_is_exact() {
        let s = toy(10.0, Connection::Direct(Mechanism::Local), 1).with_requests(5);
        let t = run(&s).unwrap();
        assert_eq!(t.requests.len(), 5);
        for r in &t.requests {
            assert_eq!(r.total(), Some(10 * MS));
            assert_eq!(r.stages.len(), 1);
        }
    }

    #[test]
    fn two_gdr_clients_hand_schedule() {
        // 1 ms transfers that hold the link for the whole transfer
        let mut s = toy(10.0, Connection::Direct(Mechanism::Gdr), 2);
        s.params.alpha_rdma = TimeSpan::from_ms(1.0);
        s.params.b_rdma_bytes_per_ms = 1e18;
        s.params.link_bytes_per_ms = 1e-3;
        let t = run(&s).unwrap();
        let a = &t.requests[0];
        let b = &t.requests[1];
        let spans = |r: &RequestTrace| -> Vec<(Nanos, Nanos)> {
            r.stages.iter().map(|s| (s.start / MS, s.end / MS)).collect()
        };
        assert_eq!(spans(a), [(0, 1), (1, 11), (11, 12)]);
        assert_eq!(spans(b), [(1, 2), (11, 21), (21, 22)]);
        assert_eq!(a.total(), Some(12 * MS));
        assert_eq!(b.total(), Some(22 * MS));
        assert_eq!(b.stages[0].resource_wait, MS);
        assert_eq!(b.stages[1].resource_wait, 9 * MS);
    }

    #[test]
    fn deterministic_and_conserving() {
        let s = Scenario::new("ResNet50", DataMode::Raw, Connection::Direct(Mechanism::Tcp), 4)
            .with_requests(20);
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        for r in &a.requests {
            let sum: Nanos = r.stages.iter().map(|s| s.duration() + s.wait()).sum();
            assert_eq!(r.total(), Some(sum));
        }
        a.check_shape().unwrap();
    }

    #[test]
    fn gdr_has_no_copies() {
        let s = Scenario::new("ResNet50", DataMode::Raw, Connection::Direct(Mechanism::Gdr), 2)
            .with_requests(5);
        let t = run(&s).unwrap();
        assert_eq!(t.stats.copy_ops, 0);
        assert!(t
            .requests
            .iter()
            .all(|r| r.stages.iter().all(|s| !s.stage.is_copy())));
    }

    #[test]
    fn single_stream_serialises_requests() {
        let s = toy(10.0, Connection::Direct(Mechanism::Local), 3)
            .with_sharing(SharingMode::MultiStream { max_streams: 1 });
        let t = run(&s).unwrap();
        let mut totals: Vec<Nanos> = t.requests.iter().map(|r| r.total().unwrap()).collect();
        totals.sort_unstable();
        assert_eq!(totals, [10 * MS, 20 * MS, 30 * MS]);
        assert_eq!(t.requests[2].stages[0].stream_wait, 20 * MS);
    }

    #[test]
    fn connection_strings() {
        assert_eq!(
            "tcp/gdr".parse::<Connection>().unwrap(),
            Connection::Proxied {
                hop1: Mechanism::Tcp,
                hop2: Mechanism::Gdr
            }
        );
        assert_eq!("rdma".parse::<Connection>().unwrap().to_string(), "rdma");
        assert!("tcp/warp".parse::<Connection>().is_err());
    }

    #[test]
    fn invalid_references_fail_before_running() {
        let mut s = toy(1.0, Connection::Direct(Mechanism::Tcp), 1);
        s.model = "NoSuchNet".into();
        assert!(matches!(run(&s), Err(SimError::Workload(_))));
        let s = toy(1.0, "gdr/tcp".parse().unwrap(), 1);
        assert!(matches!(run(&s), Err(SimError::Transport(_))));
    }

    #[test]
    fn noise_is_seeded() {
        let mut s = Scenario::new("ResNet50", DataMode::Preprocessed, Connection::Direct(Mechanism::Rdma), 2)
            .with_requests(5);
        s.noise_sigma = 0.1;
        let a = run_with_seed(&s, 1).unwrap();
        let b = run_with_seed(&s, 1).unwrap();
        let c = run_with_seed(&s, 2).unwrap();
        assert_eq!(a.requests, b.requests);
        assert_ne!(a.requests, c.requests);
    }

    #[test]
    fn csv_header_is_stable() {
        let t = run(&toy(1.0, Connection::Direct(Mechanism::Tcp), 1)).unwrap();
        assert!(t.to_csv().starts_with(TRACE_CSV_HEADER));
        let v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v["schema_version"], TRACE_SCHEMA_VERSION);
    }
}
