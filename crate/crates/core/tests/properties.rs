use proptest::prelude::*;
use servesim::calibrate::{fit_scenario_params, synthesize_targets, Evaluator, GridSpec, TargetSet};
use servesim::gpu::SharingMode;
use servesim::metrics::{aggregate, analyse, breakdowns, fraction_report, View};
use servesim::reference::compare_with_oracle;
use servesim::sim::{run_with_seed, RequestTrace};
use servesim::transport::{cpu_cost, transfer_time, Stage};
use servesim::units::TimeSpan;
use servesim::{run, Catalog, Connection, DataMode, Mechanism, ParamSet, Scenario, TraceSet};

const CONNECTIONS: [&str; 9] = [
    "tcp", "rdma", "gdr", "local", "tcp/tcp", "tcp/rdma", "tcp/gdr", "rdma/rdma", "rdma/gdr",
];
const MODELS: [&str; 6] = [
    "MobileNetV3",
    "ResNet50",
    "EfficientNetB0",
    "WideResNet101",
    "YoloV4",
    "DeepLabV3_ResNet50",
];

fn sharing(i: usize, clients: u32) -> SharingMode {
    match i {
        0 => SharingMode::MultiStream { max_streams: 1 },
        1 => SharingMode::MultiStream { max_streams: clients },
        2 => SharingMode::Mps,
        _ => SharingMode::MultiContext,
    }
}

fn mode(raw: bool) -> DataMode {
    if raw {
        DataMode::Raw
    } else {
        DataMode::Preprocessed
    }
}

/// Scenarios small enough for the exhaustive oracle.
fn tiny() -> impl Strategy<Value = Scenario> {
    (
        (0..CONNECTIONS.len(), 0usize..4, any::<bool>(), 1u32..=3, 1u32..=2, 0usize..2),
        (1u32..=2, 1u32..=2, 1usize..=3, 1usize..=2, any::<bool>(), any::<bool>()),
        (0.0f64..50.0, 0.0f64..2.0, any::<bool>(), prop_oneof![Just(0.0), 0.0f64..2.0], any::<u64>()),
    )
        .prop_map(|((conn, sh, raw, clients, reqs, model), gpu, rest)| {
            let (kernels, blocks, exec, copy, short_quantum, overlap) = gpu;
            let (eps_us, kappa_ns, high, think_ms, seed) = rest;
            let mut s = Scenario::new(
                ["ResNet50", "MobileNetV3"][model],
                mode(raw),
                CONNECTIONS[conn].parse().unwrap(),
                clients,
            )
            .with_requests(reqs)
            .with_warmup(0)
            .with_sharing(sharing(sh, clients))
            .with_high_priority(high as usize);
            s.gpu.kernels_per_model = kernels;
            s.gpu.blocks_per_kernel = blocks;
            s.gpu.exec_engines = exec;
            s.gpu.copy_engines = copy;
            s.gpu.context_quantum = TimeSpan::from_us(if short_quantum { 150.0 } else { 2000.0 });
            s.gpu.context_copy_overlap = overlap;
            s.params.interference = TimeSpan::from_us(eps_us);
            s.params.interference_per_byte = TimeSpan::from_ns(kappa_ns);
            for c in &mut s.clients {
                c.think_time = TimeSpan::from_ms(think_ms);
            }
            s.seed = seed;
            s
        })
}

/// Larger scenarios with default GPU shape, optionally noisy.
fn medium() -> impl Strategy<Value = Scenario> {
    (
        (0..CONNECTIONS.len(), 0usize..4, any::<bool>(), 1u32..=8, 3u32..=12, 0..MODELS.len()),
        (0usize..3, prop_oneof![Just(0.0), 0.01f64..0.2], any::<u64>()),
    )
        .prop_map(|((conn, sh, raw, clients, reqs, model), (high, sigma, seed))| {
            let mut s = Scenario::new(MODELS[model], mode(raw), CONNECTIONS[conn].parse().unwrap(), clients)
                .with_requests(reqs)
                .with_warmup(1)
                .with_sharing(sharing(sh, clients))
                .with_high_priority(high);
            s.noise_sigma = sigma;
            s.seed = seed;
            s
        })
}

fn closed_loop(traces: &TraceSet, scenario: &Scenario) -> Result<(), String> {
    for spec in &scenario.clients {
        let mine: Vec<&RequestTrace> = traces.requests.iter().filter(|r| r.client == spec.id).collect();
        if mine.len() != spec.request_count as usize {
            return Err(format!("client {} ran {} requests", spec.id, mine.len()));
        }
        for w in mine.windows(2) {
            let done = w[0].complete.ok_or("incomplete request")?;
            if w[1].issue < done + spec.think_time.nanos() {
                return Err(format!(
                    "client {} issued request {} at {} before {} finished at {}",
                    spec.id, w[1].request, w[1].issue, w[0].request, done
                ));
            }
        }
    }
    Ok(())
}

fn pipeline_matches_plan(traces: &TraceSet, scenario: &Scenario) -> Result<(), String> {
    let plan = scenario.connection.plan(scenario.data_mode).map_err(|e| e.to_string())?;
    let want = plan.stages();
    for r in &traces.requests {
        let got: Vec<Stage> = r.stages.iter().map(|s| s.stage).collect();
        if got != want {
            return Err(format!("client {} request {}: {got:?} != {want:?}", r.client, r.request));
        }
    }
    if !plan.has_copies() && traces.stats.copy_ops != 0 {
        return Err(format!("{} copy ops without copy stages", traces.stats.copy_ops));
    }
    Ok(())
}

fn conservation(traces: &TraceSet) -> Result<(), String> {
    for b in breakdowns(traces).map_err(|e| e.to_string())? {
        if b.parts_sum() != b.total_time {
            return Err(format!(
                "client {} request {}: parts {} != total {}",
                b.client,
                b.request,
                b.parts_sum(),
                b.total_time
            ));
        }
    }
    Ok(())
}

/// Copies of equal length finish in the order they were enqueued.
fn copy_fcfs(traces: &TraceSet) -> Result<(), String> {
    let copies: Vec<(u64, u64, u64)> = traces
        .requests
        .iter()
        .flat_map(|r| r.stages.iter())
        .filter(|s| s.stage.is_copy())
        .map(|s| (s.ready + s.stream_wait, s.duration(), s.end))
        .collect();
    for a in &copies {
        for b in &copies {
            if a.1 == b.1 && a.0 < b.0 && a.2 > b.2 {
                return Err(format!("copy enqueued at {} overtaken by one enqueued at {}", a.0, b.0));
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(160))]

    #[test]
    fn small_scenarios_match_oracle(s in tiny()) {
        prop_assert!(compare_with_oracle(&s).is_ok(), "{}", compare_with_oracle(&s).unwrap_err());
    }

    #[test]
    fn small_scenarios_keep_trace_invariants(s in tiny()) {
        let t = run(&s).unwrap();
        prop_assert_eq!(t.check_shape(), Ok(()));
        prop_assert_eq!(pipeline_matches_plan(&t, &s), Ok(()));
        prop_assert_eq!(closed_loop(&t, &s), Ok(()));
        prop_assert_eq!(conservation(&t), Ok(()));
        prop_assert_eq!(copy_fcfs(&t), Ok(()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn larger_scenarios_keep_trace_invariants(s in medium()) {
        let t = run(&s).unwrap();
        prop_assert_eq!(t.check_shape(), Ok(()));
        prop_assert_eq!(pipeline_matches_plan(&t, &s), Ok(()));
        prop_assert_eq!(closed_loop(&t, &s), Ok(()));
        prop_assert_eq!(conservation(&t), Ok(()));
        if s.noise_sigma == 0.0 {
            prop_assert_eq!(copy_fcfs(&t), Ok(()));
        }
    }

    #[test]
    fn runs_are_bit_identical(s in medium()) {
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        prop_assert_eq!(a.to_csv(), b.to_csv());
        prop_assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn fractions_sum_to_one(s in medium()) {
        let stats = analyse(&run(&s).unwrap()).unwrap();
        for view in [View::Separate, View::Folded, View::Residual] {
            let f = fraction_report(&stats.overall, view).unwrap();
            let sum: f64 = f.rows.iter().map(|r| r.fraction).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9, "{:?} sums to {}", view, sum);
        }
    }
}

proptest! {
    #[test]
    fn aggregate_ignores_order(mut xs in prop::collection::vec(0.0f64..1e9, 1..60), seed in any::<u64>()) {
        let a = aggregate(&xs).unwrap();
        let n = xs.len();
        let mut k = seed;
        for i in (1..n).rev() {
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            xs.swap(i, (k >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(a, aggregate(&xs).unwrap());
    }

    #[test]
    fn transfer_time_is_affine_and_increasing(m in 0usize..3, x in 0u64..1 << 30, dx in 1u64..1 << 26) {
        let mech = [Mechanism::Tcp, Mechanism::Rdma, Mechanism::Gdr][m];
        let p = ParamSet::default();
        let t = |b| transfer_time(mech, b, &p).unwrap();
        prop_assert!(t(x + dx) > t(x));
        let lhs = t(x) + t(dx);
        let rhs = t(0) + t(x + dx);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn cpu_ordering_flips_where_per_byte_cost_passes_control_cost(
        gamma in 1e-4f64..1e-1,
        bytes in 0u64..1 << 28,
    ) {
        let p = ParamSet { gamma_tcp: TimeSpan::from_ns(gamma), ..ParamSet::default() };
        let tcp = cpu_cost(Mechanism::Tcp, bytes, &p);
        let gdr = cpu_cost(Mechanism::Gdr, bytes, &p);
        prop_assert_eq!(tcp > gdr, gamma * bytes as f64 > p.c_ctrl.ns());
    }

    #[test]
    fn proxied_transfer_never_beats_direct(hop1 in 0usize..2, hop2 in 0usize..3, model in 0..MODELS.len(), raw in any::<bool>()) {
        let mechs = [Mechanism::Tcp, Mechanism::Rdma, Mechanism::Gdr];
        let net = |conn: Connection| {
            let s = Scenario::new(MODELS[model], mode(raw), conn, 1).with_requests(3).with_warmup(0);
            let t = run(&s).unwrap();
            t.requests
                .iter()
                .flat_map(|r| r.stages.iter())
                .filter(|st| {
                    st.stage.is_transfer()
                        || matches!(st.stage, Stage::GatewayRequest | Stage::GatewayResponse)
                })
                .map(|st| st.end - st.ready)
                .sum::<u64>()
        };
        let proxied = net(Connection::Proxied { hop1: mechs[hop1], hop2: mechs[hop2] });
        let direct = net(Connection::Direct(mechs[hop2]));
        prop_assert!(proxied >= direct, "{} < {}", proxied, direct);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lone_client_without_interference_has_constant_processing(
        conn in 0..CONNECTIONS.len(),
        model in 0..MODELS.len(),
        raw in any::<bool>(),
    ) {
        let mut s = Scenario::new(MODELS[model], mode(raw), CONNECTIONS[conn].parse().unwrap(), 1)
            .with_requests(15)
            .with_warmup(2);
        s.params.interference = TimeSpan::ZERO;
        s.params.interference_per_byte = TimeSpan::ZERO;
        let stats = analyse(&run(&s).unwrap()).unwrap();
        prop_assert_eq!(stats.overall.get("processing").cov, 0.0);
    }

    #[test]
    fn seed_only_matters_with_noise(s in medium(), other in any::<u64>()) {
        let a = run_with_seed(&s, s.seed).unwrap();
        let b = run_with_seed(&s, other).unwrap();
        if s.noise_sigma == 0.0 {
            prop_assert_eq!(a.requests, b.requests);
        }
    }
}

#[test]
fn gdr_never_touches_copy_engines() {
    for model in MODELS {
        for raw in [true, false] {
            for conn in ["gdr", "tcp/gdr", "rdma/gdr", "local"] {
                let s = Scenario::new(model, mode(raw), conn.parse().unwrap(), 4).with_requests(5).with_warmup(0);
                let t = run(&s).unwrap();
                assert_eq!(t.stats.copy_ops, 0, "{}", s.label());
                assert!(t.requests.iter().flat_map(|r| &r.stages).all(|st| !st.stage.is_copy()));
            }
        }
    }
}

#[test]
fn single_client_mechanism_ordering_holds_for_every_model() {
    for model in Catalog::builtin().names() {
        for m in [DataMode::Raw, DataMode::Preprocessed] {
            let total = |mech: &str| {
                let s = Scenario::new(model, m, mech.parse().unwrap(), 1).with_requests(20).with_warmup(5);
                analyse(&run(&s).unwrap()).unwrap().overall.mean("total")
            };
            let (gdr, rdma, tcp) = (total("gdr"), total("rdma"), total("tcp"));
            assert!(gdr <= rdma && rdma <= tcp, "{model} {m}: gdr {gdr} rdma {rdma} tcp {tcp}");
        }
    }
}

#[test]
fn rdma_processing_varies_more_than_gdr_under_interference() {
    let cov = |conn: &str| {
        let s = Scenario::new("ResNet50", DataMode::Raw, conn.parse().unwrap(), 16).with_requests(60);
        analyse(&run(&s).unwrap()).unwrap().overall.get("processing").cov
    };
    let (rdma, gdr) = (cov("rdma"), cov("gdr"));
    assert!(rdma > gdr, "rdma {rdma} gdr {gdr}");
}

#[test]
fn tcp_costs_more_cpu_than_gdr_for_large_payloads() {
    let cpu = |conn: &str| {
        let s = Scenario::new("DeepLabV3_ResNet50", DataMode::Raw, conn.parse().unwrap(), 2).with_requests(5);
        run(&s).unwrap().requests.iter().map(|r| r.cpu_ns).sum::<u64>()
    };
    assert!(cpu("tcp") > cpu("gdr"));
}

#[test]
fn calibration_is_deterministic() {
    let eval = Evaluator::default();
    let targets = TargetSet::shipped();
    let grid = GridSpec::default();
    let a = fit_scenario_params(&eval, &targets, &ParamSet::default(), &grid).unwrap();
    let b = fit_scenario_params(&eval, &targets, &ParamSet::default(), &grid).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.objective, b.objective);
}

#[test]
fn calibration_recovers_perturbed_params() {
    let eval = Evaluator::default();
    let template = TargetSet::shipped();
    let grid = GridSpec::default();
    let base = ParamSet::default();
    for (i, scale) in [0.93, 1.06, 1.1].into_iter().enumerate() {
        let truth = ParamSet {
            alpha_tcp: TimeSpan::from_ns(base.alpha_tcp.ns() * scale),
            beta_copy: TimeSpan::from_ns(base.beta_copy.ns() / scale),
            engine_rate_gflops_per_ms: base.engine_rate_gflops_per_ms * if i % 2 == 0 { scale } else { 1.0 / scale },
            interference_per_byte: TimeSpan::from_ns(base.interference_per_byte.ns() * scale),
            ..base.clone()
        };
        let targets = synthesize_targets(&eval, &template, &truth).unwrap();
        let fit = fit_scenario_params(&eval, &targets, &base, &grid).unwrap();
        assert!(fit.hard_targets_met(), "{}", fit.render());
        let close = |name: &str, got: f64, want: f64| {
            assert!((got / want - 1.0).abs() < 0.02, "scale {scale}: {name} {got} vs {want}");
        };
        close("alpha_tcp", fit.params.alpha_tcp.ns(), truth.alpha_tcp.ns());
        close("beta_copy", fit.params.beta_copy.ns(), truth.beta_copy.ns());
        close("engine_rate", fit.params.engine_rate_gflops_per_ms, truth.engine_rate_gflops_per_ms);
        close("kappa", fit.params.interference_per_byte.ns(), truth.interference_per_byte.ns());
    }
}
