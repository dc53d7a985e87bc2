//! GPU model: execution engines fed block-by-block from streams, a shared
//! FIFO of copy operations served by the copy engines, and the sharing modes
//! (multi-stream, multi-context time slicing, MPS) layered on top.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::resource::FcfsResource;
use crate::transport::ParamSet;
use crate::units::{round_ns, Nanos, TimeSpan, NS_PER_MS};
use crate::workload::{ClientSpec, DataMode, ModelProfile, Priority};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GpuError {
    #[error("gpu configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpuConfig {
    pub exec_engines: usize,
    pub copy_engines: usize,
    pub blocks_per_kernel: u32,
    pub kernels_per_model: u32,
    /// Time slice of one context under multi-context sharing.
    pub context_quantum: TimeSpan,
    /// Copies issued by separate processes do not interfere with execution.
    pub context_copy_overlap: bool,
    /// Device memory, used only to bound GDR server buffers.
    pub memory_bytes: u64,
}

impl Default for GpuConfig {
    fn default() -> Self {
        GpuConfig {
            exec_engines: 10,
            copy_engines: 2,
            blocks_per_kernel: 16,
            kernels_per_model: 8,
            context_quantum: TimeSpan::from_ms(2.0),
            context_copy_overlap: true,
            memory_bytes: 16 << 30,
        }
    }
}

impl GpuConfig {
    pub fn validate(&self) -> Result<(), GpuError> {
        if self.exec_engines == 0 {
            return Err(GpuError::Config("exec_engines must be >= 1".into()));
        }
        if self.copy_engines == 0 {
            return Err(GpuError::Config("copy_engines must be >= 1".into()));
        }
        if self.blocks_per_kernel == 0 || self.kernels_per_model == 0 {
            return Err(GpuError::Config(
                "blocks_per_kernel and kernels_per_model must be >= 1".into(),
            ));
        }
        if !(self.context_quantum.ns() >= 1.0) {
            return Err(GpuError::Config("context_quantum must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelGroup {
    Preprocess,
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kernel {
    pub group: KernelGroup,
    pub blocks: u32,
    pub block_time: Nanos,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KernelPlan {
    pub kernels: Vec<Kernel>,
}

impl KernelPlan {
    /// Sum of block times: the plan's duration on a single engine.
    pub fn single_engine_time(&self) -> Nanos {
        self.kernels
            .iter()
            .map(|k| k.blocks as Nanos * k.block_time)
            .sum()
    }

    pub fn group(&self, group: KernelGroup) -> Vec<Kernel> {
        self.kernels
            .iter()
            .copied()
            .filter(|k| k.group == group)
            .collect()
    }
}

fn group_kernels(gflops: f64, group: KernelGroup, cfg: &GpuConfig, rate: f64) -> Vec<Kernel> {
    let total_ns = gflops / rate * NS_PER_MS;
    if round_ns(total_ns) == 0 {
        return Vec::new();
    }
    let blocks = cfg.blocks_per_kernel;
    let block_time = round_ns(total_ns / (cfg.kernels_per_model as f64 * blocks as f64));
    (0..cfg.kernels_per_model)
        .map(|_| Kernel {
            group,
            blocks,
            block_time,
        })
        .collect()
}

/// Decompose a model's compute into equal blocks. Raw-mode preprocessing is
/// a separate leading group of kernels.
pub fn build_kernel_plan(
    model: &ModelProfile,
    mode: DataMode,
    cfg: &GpuConfig,
    params: &ParamSet,
) -> Result<KernelPlan, GpuError> {
    let rate = params.engine_rate_gflops_per_ms;
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(GpuError::Config("engine rate must be positive".into()));
    }
    cfg.validate()?;
    let mut kernels = Vec::new();
    if mode == DataMode::Raw {
        kernels.extend(group_kernels(
            model.preprocess_cost(),
            KernelGroup::Preprocess,
            cfg,
            rate,
        ));
    }
    kernels.extend(group_kernels(model.gflops, KernelGroup::Inference, cfg, rate));
    Ok(KernelPlan { kernels })
}

/// Duration of one host/device copy in nanoseconds.
pub fn copy_duration(bytes: u64, params: &ParamSet) -> Result<f64, GpuError> {
    if !(params.b_pcie_bytes_per_ms > 0.0) {
        return Err(GpuError::Config("PCIe bandwidth must be positive".into()));
    }
    Ok(params.beta_copy.ns() + bytes as f64 / params.b_pcie_bytes_per_ms * NS_PER_MS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SharingMode {
    MultiStream { max_streams: u32 },
    MultiContext,
    Mps,
}

impl SharingMode {
    pub fn label(&self) -> String {
        match self {
            SharingMode::MultiStream { max_streams } => format!("multi_stream({max_streams})"),
            SharingMode::MultiContext => "multi_context".into(),
            SharingMode::Mps => "mps".into(),
        }
    }
}

/// How clients map onto streams and contexts for one scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulerVariant {
    pub streams: usize,
    /// Requests take any free stream (job queue) instead of a dedicated one.
    pub pooled: bool,
    /// One context per stream, time sliced.
    pub time_sliced: bool,
    /// Streams belong to separate processes.
    pub multi_process: bool,
}

pub fn apply_sharing_mode(
    mode: SharingMode,
    clients: &[ClientSpec],
) -> Result<SchedulerVariant, GpuError> {
    let n = clients.len();
    if n == 0 {
        return Err(GpuError::Config("at least one client is required".into()));
    }
    match mode {
        SharingMode::MultiStream { max_streams: 0 } => {
            Err(GpuError::Config("max_streams must be >= 1".into()))
        }
        SharingMode::MultiStream { max_streams } => Ok(SchedulerVariant {
            streams: max_streams as usize,
            pooled: true,
            time_sliced: false,
            multi_process: false,
        }),
        SharingMode::Mps => Ok(SchedulerVariant {
            streams: n,
            pooled: false,
            time_sliced: false,
            multi_process: true,
        }),
        SharingMode::MultiContext => Ok(SchedulerVariant {
            streams: n,
            pooled: false,
            time_sliced: true,
            multi_process: true,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CopyDir {
    H2d,
    D2h,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CopyOp {
    pub direction: CopyDir,
    pub bytes: u64,
    pub duration: Nanos,
    pub owner_stream: usize,
    /// Carried for reporting; copy ordering ignores it.
    pub priority: Priority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CopyGrant {
    pub engine: usize,
    pub start: Nanos,
    pub end: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Launch {
    pub engine: usize,
    pub stream: usize,
    pub ends_at: Nanos,
    /// Set on the first block of a kernel group.
    pub group_started: Option<KernelGroup>,
    pub owner: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDone {
    pub stream: usize,
    pub owner: usize,
    /// Set when this block completes the last kernel of a group.
    pub group_finished: Option<KernelGroup>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Engine {
    running: Option<usize>,
    avail_at: Nanos,
}

#[derive(Debug, Clone, Copy)]
struct ActiveKernel {
    group: KernelGroup,
    left: u32,
    in_flight: u32,
    block_time: Nanos,
    opens_group: bool,
    closes_group: bool,
    launched_any: bool,
}

#[derive(Debug, Clone)]
struct StreamQueue {
    priority: Priority,
    owner: Option<usize>,
    kernels: VecDeque<ActiveKernel>,
}

impl StreamQueue {
    fn ready(&self) -> bool {
        self.kernels.front().is_some_and(|k| k.left > 0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GpuCounters {
    pub blocks_launched: u64,
    pub copy_ops: u64,
    pub copy_busy_ns: u64,
    pub context_switches: u64,
}

/// Mutable GPU state. Owned by the simulation core; not shared.
#[derive(Debug, Clone)]
pub struct GpuState {
    variant: SchedulerVariant,
    quantum: Nanos,
    suppress_interference: bool,
    engines: Vec<Engine>,
    streams: Vec<StreamQueue>,
    stream_busy: Vec<bool>,
    cursor: usize,
    copy: FcfsResource,
    active_context: Option<usize>,
    slice_gen: u64,
    /// The current slice has a pending expiry.
    slice_live: bool,
    pending_wakes: Vec<Nanos>,
    pending_ticks: Vec<(Nanos, u64)>,
    counters: GpuCounters,
}

impl GpuState {
    pub fn new(cfg: &GpuConfig, variant: SchedulerVariant) -> Self {
        let streams = (0..variant.streams)
            .map(|_| StreamQueue {
                priority: Priority::Normal,
                owner: None,
                kernels: VecDeque::new(),
            })
            .collect();
        GpuState {
            suppress_interference: cfg.context_copy_overlap && variant.multi_process,
            quantum: cfg.context_quantum.nanos().max(1),
            engines: vec![Engine::default(); cfg.exec_engines],
            stream_busy: vec![false; variant.streams],
            streams,
            cursor: 0,
            copy: FcfsResource::new(cfg.copy_engines),
            active_context: None,
            slice_gen: 0,
            slice_live: false,
            pending_wakes: Vec::new(),
            pending_ticks: Vec::new(),
            counters: GpuCounters::default(),
            variant,
        }
    }

    pub fn variant(&self) -> &SchedulerVariant {
        &self.variant
    }

    pub fn counters(&self) -> GpuCounters {
        self.counters
    }

    /// Claim a stream for `client`. Dedicated modes use the client's own
    /// stream; pooled mode prefers `client % streams`, then the lowest free.
    pub fn acquire_stream(&mut self, client: usize) -> Option<usize> {
        let n = self.streams.len();
        let home = client % n;
        let pick = if !self.variant.pooled {
            (!self.stream_busy[home]).then_some(home)
        } else if !self.stream_busy[home] {
            Some(home)
        } else {
            self.stream_busy.iter().position(|b| !b)
        };
        if let Some(s) = pick {
            self.stream_busy[s] = true;
        }
        pick
    }

    pub fn release_stream(&mut self, stream: usize) {
        debug_assert!(self.streams[stream].kernels.is_empty());
        self.stream_busy[stream] = false;
        self.streams[stream].owner = None;
    }

    pub fn stream_free(&self, stream: usize) -> bool {
        !self.stream_busy[stream]
    }

    /// Queue a kernel group on a stream, behind anything already queued there.
    pub fn submit(&mut self, stream: usize, owner: usize, priority: Priority, kernels: &[Kernel]) {
        let q = &mut self.streams[stream];
        q.priority = priority;
        q.owner = Some(owner);
        let last = kernels.len().saturating_sub(1);
        for (i, k) in kernels.iter().enumerate() {
            q.kernels.push_back(ActiveKernel {
                group: k.group,
                left: k.blocks,
                in_flight: 0,
                block_time: k.block_time,
                opens_group: i == 0,
                closes_group: i == last,
                launched_any: false,
            });
        }
    }

    fn context_of(&self, stream: usize) -> usize {
        stream
    }

    fn context_has_work(&self, ctx: usize) -> bool {
        !self.streams[ctx].kernels.is_empty()
    }

    fn start_slice(&mut self, ctx: usize, now: Nanos) {
        if self.active_context != Some(ctx) {
            self.counters.context_switches += 1;
        }
        self.active_context = Some(ctx);
        self.slice_live = true;
        self.slice_gen += 1;
        self.pending_ticks.push((now + self.quantum, self.slice_gen));
    }

    fn next_context_with_work(&self, after: Option<usize>, skip_current: bool) -> Option<usize> {
        let n = self.streams.len();
        let start = after.map_or(0, |a| a + 1);
        (0..n)
            .map(|i| (start + i) % n)
            .filter(|&c| !(skip_current && Some(c) == after))
            .find(|&c| self.context_has_work(c))
    }

    fn ensure_active_context(&mut self, now: Nanos) {
        let active_busy = self
            .active_context
            .is_some_and(|c| self.context_has_work(c));
        if !active_busy || !self.slice_live {
            if let Some(c) = self.next_context_with_work(self.active_context, false) {
                self.start_slice(c, now);
            }
        }
    }

    /// Time slice expiry for multi-context sharing. Call after every block
    /// completion at the same instant has been applied.
    pub fn quantum_tick(&mut self, generation: u64, now: Nanos) {
        if generation != self.slice_gen || !self.variant.time_sliced {
            return;
        }
        if let Some(c) = self.next_context_with_work(self.active_context, true) {
            self.start_slice(c, now);
        } else if let Some(c) = self.active_context.filter(|&c| self.context_has_work(c)) {
            self.start_slice(c, now);
        } else {
            self.slice_live = false;
        }
    }

    fn pick_stream(&self) -> Option<usize> {
        let n = self.streams.len();
        let eligible = |s: usize| {
            self.streams[s].ready()
                && (!self.variant.time_sliced || self.active_context == Some(self.context_of(s)))
        };
        for class in [Priority::High, Priority::Normal] {
            let found = (0..n)
                .map(|i| (self.cursor + i) % n)
                .find(|&s| eligible(s) && self.streams[s].priority == class);
            if found.is_some() {
                return found;
            }
        }
        None
    }

    /// Launch one block if an engine is free and a block is ready.
    ///
    /// High-priority streams are served before normal ones; within a class
    /// streams are served round-robin from the cursor.
    pub fn schedule_next_block(&mut self, now: Nanos) -> Option<Launch> {
        if self.variant.time_sliced {
            self.ensure_active_context(now);
        }
        let engine = self
            .engines
            .iter()
            .position(|e| e.running.is_none() && e.avail_at <= now)?;
        let stream = self.pick_stream()?;
        let q = &mut self.streams[stream];
        let owner = q.owner.expect("submitted stream has an owner");
        let k = q.kernels.front_mut().expect("ready stream has a kernel");
        let group_started = (k.opens_group && !k.launched_any).then_some(k.group);
        k.launched_any = true;
        k.left -= 1;
        k.in_flight += 1;
        let ends_at = now + k.block_time;
        let e = &mut self.engines[engine];
        e.running = Some(stream);
        e.avail_at = e.avail_at.max(ends_at);
        self.cursor = (stream + 1) % self.streams.len();
        self.counters.blocks_launched += 1;
        Some(Launch {
            engine,
            stream,
            ends_at,
            group_started,
            owner,
        })
    }

    pub fn block_done(&mut self, engine: usize, now: Nanos) -> BlockDone {
        let e = &mut self.engines[engine];
        let stream = e.running.take().expect("engine was running a block");
        if e.avail_at > now {
            self.pending_wakes.push(e.avail_at);
        }
        let q = &mut self.streams[stream];
        let owner = q.owner.expect("running stream has an owner");
        let k = q.kernels.front_mut().expect("running stream has a kernel");
        k.in_flight -= 1;
        let mut group_finished = None;
        if k.left == 0 && k.in_flight == 0 {
            if k.closes_group {
                group_finished = Some(k.group);
            }
            q.kernels.pop_front();
        }
        BlockDone {
            stream,
            owner,
            group_finished,
        }
    }

    /// Append a copy to the shared FIFO. The earliest-free copy engine takes
    /// it; the priority label does not reorder anything. Issuing the copy
    /// delays every execution engine's next availability by `interference`.
    pub fn enqueue_copy(&mut self, op: CopyOp, now: Nanos, interference: Nanos) -> CopyGrant {
        let grant = self.copy.occupy(now, op.duration);
        self.counters.copy_ops += 1;
        self.counters.copy_busy_ns += op.duration;
        if interference > 0 && !self.suppress_interference {
            for e in &mut self.engines {
                e.avail_at = e.avail_at.max(now) + interference;
                if e.running.is_none() {
                    self.pending_wakes.push(e.avail_at);
                }
            }
        }
        CopyGrant {
            engine: grant.unit,
            start: grant.start,
            end: grant.end,
        }
    }

    /// Times at which idle engines become available again.
    pub fn take_wakes(&mut self) -> Vec<Nanos> {
        std::mem::take(&mut self.pending_wakes)
    }

    pub fn take_ticks(&mut self) -> Vec<(Nanos, u64)> {
        std::mem::take(&mut self.pending_ticks)
    }

    pub fn idle(&self) -> bool {
        self.engines.iter().all(|e| e.running.is_none())
            && self.streams.iter().all(|s| s.kernels.is_empty())
    }
}
