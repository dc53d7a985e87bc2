//! Brute-force reference executor used as an oracle for the event core.
//!
//! It shares the cost formulas with the simulator but none of its machinery:
//! there is no event heap, each step scans every entity for the next instant
//! at which something is due, and links, the gateway and the copy engines are
//! explicit waiting lines drained when a unit frees (the simulator instead
//! computes each grant on arrival). It is quadratic in everything and meant
//! for scenarios of a few clients, requests and blocks.
//!
//! Ordering rules at one instant mirror the published ones: completions and
//! issues are applied first, then slice expiry, then links and gateway take
//! arrivals by client, stream tokens go by `(ready, client)`, GPU work is
//! dispatched by `(ready, client)`, and blocks go high priority first, then
//! round-robin. Anything that becomes due at the same instant during
//! dispatch is handled in a following pass at that instant.

use std::collections::VecDeque;

use crate::gpu::{SharingMode, apply_sharing_mode, build_kernel_plan, copy_duration, GpuError, Kernel, KernelGroup};
use crate::sim::{RequestTrace, Scenario, SimError, StageRecord};
use crate::transport::{
    gateway_time, link_hold_time, transfer_time, LinkDir, ResourceKind, Stage,
};
use crate::units::{round_ns, Nanos, TimeSpan};
use crate::workload::{payload_bytes, DataMode, Direction, Priority};

#[derive(Clone)]
enum Work {
    Link { line: usize, transfer: Nanos, hold: Nanos },
    Gateway { service: Nanos },
    Copy { duration: Nanos, stall: Nanos },
    Exec { kernels: Vec<Kernel> },
}

struct Step {
    stage: Stage,
    resource: ResourceKind,
    work: Work,
}

struct Req {
    index: u32,
    issue: Nanos,
    step: usize,
    ready: Nanos,
    stream: Option<usize>,
    stream_wait: Nanos,
    open: Option<StageRecord>,
    closed: Vec<StageRecord>,
}

struct Client {
    id: u32,
    priority: Priority,
    total: u32,
    think: Nanos,
    issued: u32,
    issue_at: Option<Nanos>,
    /// End of a link, gateway, copy or zero-length stage in progress.
    done_at: Option<Nanos>,
    req: Option<Req>,
}

/// A line of waiting clients in front of `free.len()` identical units.
struct Line {
    free: Vec<Nanos>,
    waiting: VecDeque<usize>,
}

impl Line {
    fn new(units: usize) -> Self {
        Line {
            free: vec![0; units],
            waiting: VecDeque::new(),
        }
    }

    fn next_free(&self, now: Nanos) -> Option<Nanos> {
        if self.waiting.is_empty() {
            return None;
        }
        self.free.iter().copied().filter(|&f| f > now).min()
    }
}

struct Pending {
    left: u32,
    running: u32,
    block: Nanos,
    first: bool,
    last: bool,
    touched: bool,
}

struct Queue {
    priority: Priority,
    owner: usize,
    kernels: VecDeque<Pending>,
    taken: bool,
}

struct Engine {
    /// Stream and end time of the block in service.
    block: Option<(usize, Nanos)>,
    next_free: Nanos,
}

struct Oracle {
    now: Nanos,
    steps: Vec<Step>,
    last_gpu: usize,
    clients: Vec<Client>,
    links: Vec<Line>,
    gateway: Line,
    copies: Line,
    engines: Vec<Engine>,
    queues: Vec<Queue>,
    pooled: bool,
    sliced: bool,
    stall_enabled: bool,
    quantum: Nanos,
    active: Option<usize>,
    slice_end: Option<Nanos>,
    cursor: usize,
    token_wait: Vec<(Nanos, usize)>,
    arrivals: Vec<usize>,
    finished: Vec<RequestTrace>,
}

/// Run `s` with the reference executor. Noise is not supported.
pub fn reference_run(s: &Scenario) -> Result<Vec<RequestTrace>, SimError> {
    s.validate()?;
    if s.noise_sigma > 0.0 {
        return Err(SimError::Invalid("the reference executor has no noise model".into()));
    }
    let model = s.catalog.get(&s.model)?;
    let plan = s.connection.plan(s.data_mode)?;
    let kplan = build_kernel_plan(model, s.data_mode, &s.gpu, &s.params)?;
    let req_b = payload_bytes(model, s.data_mode, Direction::Request, s.raw_image);
    let resp_b = payload_bytes(model, s.data_mode, Direction::Response, s.raw_image);
    let p = &s.params;

    let mut lines = 0;
    let mut steps = Vec::new();
    for ps in &plan.steps {
        let bytes = if matches!(ps.stage, Stage::RequestXfer | Stage::GatewayRequest | Stage::H2d) {
            req_b
        } else {
            resp_b
        };
        let work = match ps.resource {
            ResourceKind::Link { hop, dir } => {
                let line = 2 * hop as usize + usize::from(dir == LinkDir::Reverse);
                lines = lines.max(line + 1);
                let m = ps.mechanism.expect("transfer stage names its mechanism");
                let transfer = round_ns(transfer_time(m, bytes, p)?);
                let hold = round_ns(link_hold_time(m, bytes, p)?).min(transfer);
                Work::Link { line, transfer, hold }
            }
            ResourceKind::Gateway => {
                let (a, b) = plan.gateway.expect("gateway stage implies a gateway");
                Work::Gateway {
                    service: round_ns(gateway_time(a, b, bytes, p)),
                }
            }
            ResourceKind::CopyEngines => Work::Copy {
                duration: round_ns(copy_duration(bytes, p)?),
                stall: round_ns(p.copy_interference(bytes)),
            },
            ResourceKind::ExecEngines => Work::Exec {
                kernels: kplan.group(if ps.stage == Stage::Preprocess {
                    KernelGroup::Preprocess
                } else {
                    KernelGroup::Inference
                }),
            },
        };
        steps.push(Step {
            stage: ps.stage,
            resource: ps.resource,
            work,
        });
    }
    let last_gpu = steps
        .iter()
        .rposition(|st| st.stage.is_gpu())
        .unwrap_or(usize::MAX);

    let mut specs = s.clients.clone();
    specs.sort_by_key(|c| c.id);
    let variant = apply_sharing_mode(s.sharing, &specs)?;
    let t0 = if s.connection.client_mechanism().is_rdma_family() {
        p.rdma_connection_setup.nanos()
    } else {
        0
    };
    let clients = specs
        .iter()
        .map(|c| Client {
            id: c.id,
            priority: c.priority,
            total: c.request_count,
            think: c.think_time.nanos(),
            issued: 0,
            issue_at: Some(t0),
            done_at: None,
            req: None,
        })
        .collect();
    let mut o = Oracle {
        now: 0,
        steps,
        last_gpu,
        clients,
        links: (0..lines.max(2)).map(|_| Line::new(1)).collect(),
        gateway: Line::new(1),
        copies: Line::new(s.gpu.copy_engines),
        engines: (0..s.gpu.exec_engines)
            .map(|_| Engine {
                block: None,
                next_free: 0,
            })
            .collect(),
        queues: (0..variant.streams)
            .map(|_| Queue {
                priority: Priority::Normal,
                owner: 0,
                kernels: VecDeque::new(),
                taken: false,
            })
            .collect(),
        pooled: variant.pooled,
        sliced: variant.time_sliced,
        stall_enabled: !(s.gpu.context_copy_overlap && variant.multi_process),
        quantum: s.gpu.context_quantum.nanos().max(1),
        active: None,
        slice_end: None,
        cursor: 0,
        token_wait: Vec::new(),
        arrivals: Vec::new(),
        finished: Vec::new(),
    };
    while let Some(t) = o.next_instant() {
        o.now = t;
        o.apply_due();
        o.dispatch();
    }
    if o.clients.iter().any(|c| c.req.is_some() || c.issued != c.total) {
        return Err(SimError::Internal("reference executor stalled".into()));
    }
    o.finished.sort_by_key(|r| (r.client, r.request));
    Ok(o.finished)
}

impl Oracle {
    fn next_instant(&self) -> Option<Nanos> {
        let now = self.now;
        let mut c: Vec<Nanos> = Vec::new();
        for cl in &self.clients {
            c.extend(cl.issue_at);
            c.extend(cl.done_at);
        }
        for e in &self.engines {
            match e.block {
                Some((_, end)) => c.push(end),
                None if e.next_free > now => c.push(e.next_free),
                None => {}
            }
        }
        for l in self.links.iter().chain([&self.gateway, &self.copies]) {
            c.extend(l.next_free(now));
        }
        c.extend(self.slice_end);
        c.into_iter().min()
    }

    fn apply_due(&mut self) {
        let now = self.now;
        for e in 0..self.engines.len() {
            if let Some((q, end)) = self.engines[e].block {
                if end == now {
                    self.engines[e].block = None;
                    self.block_finished(q);
                }
            }
        }
        for slot in 0..self.clients.len() {
            if self.clients[slot].done_at == Some(now) {
                self.clients[slot].done_at = None;
                self.stage_finished(slot);
            }
        }
        for slot in 0..self.clients.len() {
            if self.clients[slot].issue_at == Some(now) {
                self.issue(slot);
            }
        }
        if self.slice_end == Some(now) {
            self.slice_expired();
        }
    }

    fn issue(&mut self, slot: usize) {
        let now = self.now;
        let c = &mut self.clients[slot];
        c.issue_at = None;
        c.req = Some(Req {
            index: c.issued,
            issue: now,
            step: 0,
            ready: now,
            stream: None,
            stream_wait: 0,
            open: None,
            closed: Vec::new(),
        });
        c.issued += 1;
        self.arrivals.push(slot);
    }

    fn block_finished(&mut self, q: usize) {
        let queue = &mut self.queues[q];
        let k = queue.kernels.front_mut().expect("a block was running");
        k.running -= 1;
        if k.left == 0 && k.running == 0 {
            let closes = k.last;
            queue.kernels.pop_front();
            if closes {
                let owner = queue.owner;
                self.stage_finished(owner);
            }
        }
    }

    fn open(&mut self, slot: usize, start: Nanos) {
        let r = self.clients[slot].req.as_mut().expect("request in flight");
        let st = &self.steps[r.step];
        r.open = Some(StageRecord {
            stage: st.stage,
            resource: st.resource,
            ready: r.ready,
            start,
            end: start,
            stream_wait: r.stream_wait,
            resource_wait: start - r.ready - r.stream_wait,
        });
        r.stream_wait = 0;
    }

    fn stage_finished(&mut self, slot: usize) {
        let now = self.now;
        let n_steps = self.steps.len();
        let last_gpu = self.last_gpu;
        let c = &mut self.clients[slot];
        let r = c.req.as_mut().expect("request in flight");
        let mut rec = r.open.take().expect("stage was open");
        rec.end = now;
        r.closed.push(rec);
        if r.step == last_gpu {
            let q = r.stream.take().expect("gpu stages hold a stream");
            self.queues[q].taken = false;
        }
        r.step += 1;
        r.ready = now;
        if r.step < n_steps {
            self.arrivals.push(slot);
            return;
        }
        let r = c.req.take().expect("request in flight");
        self.finished.push(RequestTrace {
            client: c.id,
            request: r.index,
            priority: c.priority,
            issue: r.issue,
            complete: Some(now),
            stages: r.closed,
            cpu_ns: 0,
            gateway_cpu_ns: 0,
        });
        if c.issued < c.total {
            let at = now + c.think;
            if at == now {
                self.issue(slot);
            } else {
                c.issue_at = Some(at);
            }
        }
    }

    fn has_work(&self, q: usize) -> bool {
        !self.queues[q].kernels.is_empty()
    }

    /// First context with work after `from`, wrapping, optionally skipping
    /// `from` itself.
    fn next_with_work(&self, from: Option<usize>, skip_from: bool) -> Option<usize> {
        let n = self.queues.len();
        let base = from.map_or(0, |f| f + 1);
        (0..n)
            .map(|i| (base + i) % n)
            .find(|&q| !(skip_from && Some(q) == from) && self.has_work(q))
    }

    fn begin_slice(&mut self, q: usize) {
        self.active = Some(q);
        self.slice_end = Some(self.now + self.quantum);
    }

    fn slice_expired(&mut self) {
        if !self.sliced {
            self.slice_end = None;
            return;
        }
        if let Some(q) = self.next_with_work(self.active, true) {
            self.begin_slice(q);
        } else if self.active.is_some_and(|a| self.has_work(a)) {
            self.begin_slice(self.active.expect("checked"));
        } else {
            self.slice_end = None;
        }
    }

    fn dispatch(&mut self) {
        let now = self.now;

        let mut arrivals = std::mem::take(&mut self.arrivals);
        arrivals.sort_unstable();
        let mut gpu_work: Vec<(Nanos, usize)> = Vec::new();
        for slot in arrivals {
            let r = self.clients[slot].req.as_ref().expect("request in flight");
            let (step, ready, holding) = (r.step, r.ready, r.stream.is_some());
            match self.steps[step].work {
                Work::Link { line, .. } => self.links[line].waiting.push_back(slot),
                Work::Gateway { .. } => self.gateway.waiting.push_back(slot),
                Work::Copy { .. } | Work::Exec { .. } if holding => gpu_work.push((ready, slot)),
                _ => self.token_wait.push((ready, slot)),
            }
        }
        for l in 0..self.links.len() {
            self.drain_line(Which::Link(l));
        }
        self.drain_line(Which::Gateway);

        self.token_wait.sort_unstable();
        let n = self.queues.len();
        let mut still = Vec::new();
        let mut blocked = false;
        for (ready, slot) in std::mem::take(&mut self.token_wait) {
            let home = slot % n;
            let pick = if blocked {
                None
            } else if !self.queues[home].taken {
                Some(home)
            } else if self.pooled {
                (0..n).find(|&q| !self.queues[q].taken)
            } else {
                None
            };
            match pick {
                Some(q) => {
                    self.queues[q].taken = true;
                    let r = self.clients[slot].req.as_mut().expect("request in flight");
                    r.stream = Some(q);
                    r.stream_wait = now - ready;
                    gpu_work.push((ready, slot));
                }
                None => {
                    blocked |= self.pooled;
                    still.push((ready, slot));
                }
            }
        }
        self.token_wait = still;

        gpu_work.sort_unstable();
        for (_, slot) in gpu_work {
            let r = self.clients[slot].req.as_ref().expect("request in flight");
            let q = r.stream.expect("holding a stream");
            match self.steps[r.step].work.clone() {
                Work::Copy { stall, .. } => {
                    self.copies.waiting.push_back(slot);
                    if stall > 0 && self.stall_enabled {
                        for e in &mut self.engines {
                            e.next_free = e.next_free.max(now) + stall;
                        }
                    }
                }
                Work::Exec { kernels } if kernels.is_empty() => {
                    self.open(slot, now);
                    self.clients[slot].done_at = Some(now);
                }
                Work::Exec { kernels } => {
                    let queue = &mut self.queues[q];
                    queue.priority = self.clients[slot].priority;
                    queue.owner = slot;
                    let k = kernels.len();
                    for (i, kern) in kernels.into_iter().enumerate() {
                        queue.kernels.push_back(Pending {
                            left: kern.blocks,
                            running: 0,
                            block: kern.block_time,
                            first: i == 0,
                            last: i + 1 == k,
                            touched: false,
                        });
                    }
                }
                _ => unreachable!("links and gateway never hold streams"),
            }
        }
        self.drain_line(Which::Copy);
        self.launch_blocks();
    }

    fn drain_line(&mut self, which: Which) {
        let now = self.now;
        loop {
            let line = match which {
                Which::Link(l) => &mut self.links[l],
                Which::Gateway => &mut self.gateway,
                Which::Copy => &mut self.copies,
            };
            if line.waiting.is_empty() {
                return;
            }
            let Some(unit) = (0..line.free.len()).find(|&u| line.free[u] <= now) else {
                return;
            };
            let slot = line.waiting.pop_front().expect("non-empty");
            let step = self.clients[slot].req.as_ref().expect("request in flight").step;
            let (hold, end) = match self.steps[step].work {
                Work::Link { transfer, hold, .. } => (hold, now + transfer),
                Work::Gateway { service } => (service, now + service),
                Work::Copy { duration, .. } => (duration, now + duration),
                Work::Exec { .. } => unreachable!("no waiting line for execution"),
            };
            let line = match which {
                Which::Link(l) => &mut self.links[l],
                Which::Gateway => &mut self.gateway,
                Which::Copy => &mut self.copies,
            };
            line.free[unit] = now + hold;
            self.open(slot, now);
            self.clients[slot].done_at = Some(end);
        }
    }

    fn launch_blocks(&mut self) {
        let now = self.now;
        loop {
            if self.sliced {
                let busy = self.active.is_some_and(|a| self.has_work(a));
                if !busy || self.slice_end.is_none() {
                    if let Some(q) = self.next_with_work(self.active, false) {
                        self.begin_slice(q);
                    }
                }
            }
            let Some(e) = self
                .engines
                .iter()
                .position(|e| e.block.is_none() && e.next_free <= now)
            else {
                return;
            };
            let n = self.queues.len();
            let eligible = |o: &Oracle, q: usize| {
                o.queues[q].kernels.front().is_some_and(|k| k.left > 0)
                    && (!o.sliced || o.active == Some(q))
            };
            let mut chosen = None;
            for class in [Priority::High, Priority::Normal] {
                chosen = (0..n)
                    .map(|i| (self.cursor + i) % n)
                    .find(|&q| eligible(self, q) && self.queues[q].priority == class);
                if chosen.is_some() {
                    break;
                }
            }
            let Some(q) = chosen else {
                return;
            };
            let queue = &mut self.queues[q];
            let owner = queue.owner;
            let k = queue.kernels.front_mut().expect("eligible");
            let opens = k.first && !k.touched;
            k.touched = true;
            k.left -= 1;
            k.running += 1;
            let end = now + k.block;
            self.engines[e].block = Some((q, end));
            self.engines[e].next_free = self.engines[e].next_free.max(end);
            self.cursor = (q + 1) % n;
            if opens {
                self.open(owner, now);
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Which {
    Link(usize),
    Gateway,
    Copy,
}

/// Error if a scenario is outside the family the oracle is checked on.
pub fn within_oracle_family(s: &Scenario) -> Result<(), GpuError> {
    let blocks = s.gpu.blocks_per_kernel * s.gpu.kernels_per_model;
    if s.clients.len() > 3 || s.clients.iter().any(|c| c.request_count > 2) || blocks > 4 {
        return Err(GpuError::Config(
            "oracle family is <= 3 clients, <= 2 requests, <= 4 blocks".into(),
        ));
    }
    Ok(())
}

/// The enumerated scenario family the oracle is compared on.
///
/// Every connection is crossed with every sharing mode and both data modes.
/// The remaining dimensions (clients, requests, model, kernel shape, engine
/// counts, priority, interference, think time, quantum, copy overlap) are
/// mixed-radix digits of the case index, so each value of each dimension
/// appears many times and in varied combinations.
pub fn oracle_family() -> Vec<Scenario> {
    const CONNECTIONS: [&str; 9] = [
        "tcp", "rdma", "gdr", "local", "tcp/tcp", "tcp/rdma", "tcp/gdr", "rdma/rdma", "rdma/gdr",
    ];
    const ROUNDS: usize = 3;
    let sharings = |n: u32| {
        [
            SharingMode::MultiStream { max_streams: 1 },
            SharingMode::MultiStream { max_streams: n },
            SharingMode::Mps,
            SharingMode::MultiContext,
        ]
    };
    let mut out = Vec::new();
    let mut case = 0usize;
    for round in 0..ROUNDS {
        for conn in CONNECTIONS {
            for sharing in 0..4 {
                for mode in [DataMode::Raw, DataMode::Preprocessed] {
                    let mut digit = {
                        let mut x = case * 7 + round;
                        move |radix: usize| {
                            let d = x % radix;
                            x = x / radix + d * 3 + 1;
                            d
                        }
                    };
                    case += 1;
                    let clients = 1 + digit(3) as u32;
                    let model = ["ResNet50", "MobileNetV3"][digit(2)];
                    let mut s = Scenario::new(model, mode, conn.parse().expect("connection"), clients)
                        .with_requests(1 + digit(2) as u32)
                        .with_warmup(0)
                        .with_sharing(sharings(clients)[sharing]);
                    s.gpu.kernels_per_model = 1 + digit(2) as u32;
                    s.gpu.blocks_per_kernel = 1 + digit(2) as u32;
                    s.gpu.exec_engines = 1 + digit(2);
                    s.gpu.copy_engines = 1 + digit(2);
                    s.gpu.context_quantum = TimeSpan::from_us([200.0, 2000.0][digit(2)]);
                    s.gpu.context_copy_overlap = digit(2) == 0;
                    match digit(3) {
                        0 => {
                            s.params.interference = TimeSpan::from_ns(0.0);
                            s.params.interference_per_byte = TimeSpan::from_ns(0.0);
                        }
                        1 => {}
                        _ => {
                            s.params.interference = TimeSpan::from_us(20.0);
                            s.params.interference_per_byte = TimeSpan::from_ns(0.0);
                        }
                    }
                    if digit(2) == 1 {
                        s = s.with_high_priority(1);
                    }
                    let think = TimeSpan::from_ms([0.0, 1.0][digit(2)]);
                    for c in &mut s.clients {
                        c.think_time = think;
                    }
                    s.seed = case as u64;
                    out.push(s);
                }
            }
        }
    }
    out
}

/// Compare the simulator with the oracle on one scenario. Returns a
/// description of the first difference.
pub fn compare_with_oracle(s: &Scenario) -> Result<(), String> {
    let sim = crate::sim::run(s).map_err(|e| format!("{}: simulator: {e}", s.label()))?;
    let oracle = reference_run(s).map_err(|e| format!("{}: oracle: {e}", s.label()))?;
    if sim.requests.len() != oracle.len() {
        return Err(format!(
            "{}: {} requests simulated, {} in oracle",
            s.label(),
            sim.requests.len(),
            oracle.len()
        ));
    }
    for (a, b) in sim.requests.iter().zip(&oracle) {
        if (a.client, a.request) != (b.client, b.request) || a.complete != b.complete {
            return Err(format!(
                "{}: client {} request {} completes at {:?}, oracle says client {} request {} at {:?}",
                s.label(),
                a.client,
                a.request,
                a.complete,
                b.client,
                b.request,
                b.complete
            ));
        }
        if a.stages != b.stages {
            return Err(format!(
                "{}: client {} request {} stage records differ",
                s.label(),
                a.client,
                a.request
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Connection;
    use crate::transport::Mechanism;

    fn same(s: &Scenario) {
        compare_with_oracle(s).unwrap();
    }

    fn small(conn: &str, n: u32) -> Scenario {
        let mut s = Scenario::new("ResNet50", DataMode::Raw, conn.parse().unwrap(), n).with_requests(2);
        s.gpu.kernels_per_model = 2;
        s.gpu.blocks_per_kernel = 2;
        s.gpu.exec_engines = 2;
        s.warmup_requests = 0;
        s
    }

    #[test]
    fn agrees_on_direct_mechanisms() {
        for m in ["tcp", "rdma", "gdr", "local"] {
            same(&small(m, 3));
        }
    }

    #[test]
    fn agrees_on_proxied_paths() {
        for c in ["tcp/tcp", "tcp/rdma", "tcp/gdr", "rdma/gdr"] {
            same(&small(c, 2));
        }
    }

    #[test]
    fn agrees_under_time_slicing() {
        let mut s = small("rdma", 3).with_sharing(SharingMode::MultiContext);
        s.gpu.context_quantum = TimeSpan::from_ms(1.0);
        s.gpu.context_copy_overlap = false;
        same(&s);
    }

    #[test]
    fn agrees_with_one_stream_and_priority() {
        let s = small("tcp", 3)
            .with_sharing(SharingMode::MultiStream { max_streams: 1 })
            .with_high_priority(1);
        same(&s);
    }

    #[test]
    fn rejects_noise() {
        let mut s = small("gdr", 1);
        s.noise_sigma = 0.1;
        assert!(reference_run(&s).is_err());
        assert!(within_oracle_family(&small("gdr", 3)).is_ok());
        assert!(within_oracle_family(&small("gdr", 4)).is_err());
        let _ = Connection::Direct(Mechanism::Tcp);
    }

    #[test]
    fn family_stays_in_bounds_and_covers_dimensions() {
        let fam = oracle_family();
        assert_eq!(fam.len(), 216);
        for s in &fam {
            within_oracle_family(s).unwrap();
            s.validate().unwrap();
        }
        let count = |f: &dyn Fn(&Scenario) -> bool| fam.iter().filter(|s| f(s)).count();
        assert!(count(&|s| s.clients.len() == 3) > 0);
        assert!(count(&|s| s.clients.len() == 1) > 0);
        assert!(count(&|s| s.clients[0].request_count == 2) > 0);
        assert!(count(&|s| s.gpu.copy_engines == 2) > 0);
        assert!(count(&|s| s.params.interference.ns() > 0.0) > 0);
        assert!(count(&|s| s.clients[0].priority == Priority::High && s.clients.len() > 1) > 0);
        assert!(count(&|s| s.clients[0].think_time.ns() > 0.0) > 0);
    }
}
