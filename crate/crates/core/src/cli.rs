//! Command-line front end. The binary only forwards its arguments here.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use toml::{Table, Value};

use crate::calibrate::{
    drop_outliers, fit_linear, fit_scenario_params, read_samples_csv, Evaluator, GridSpec, TargetSet, FAR_OUT_FENCE,
};
use crate::metrics::{analyse, breakdown_json, plot_row, text_report, View, PLOT_CSV_HEADER};
use crate::pack;
use crate::scenario::{ScenarioFile, ScenarioFileError};
use crate::sim::{run, Connection};
use crate::transport::ParamSet;
use crate::units::TimeSpan;
use crate::validate::{validate, ValidateOptions};
use crate::wirebench::{self, MeasureConfig, ResponseRule, ServerConfig};

pub const OUT_ENV: &str = "SERVESIM_OUT";
pub const DEFAULT_OUT: &str = "servesim-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "servesim", version, about = "Model-serving latency simulator and wire benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario file.
    Run(RunArgs),
    /// Run a base scenario for every (clients, connection) pair.
    Sweep(SweepArgs),
    /// Run a shipped reproduction figure and check it.
    Reproduce(ReproduceArgs),
    /// Fit model constants to targets or to wire benchmark samples.
    Calibrate(CalibrateArgs),
    /// Framed TCP echo benchmark.
    #[command(subcommand)]
    Wirebench(WireCommand),
    /// Run the full acceptance suite.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub scenario: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the file's `output.dir`, then $SERVESIM_OUT.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "separate")]
    pub view: View,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub base: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1u32, 2, 4, 8, 16])]
    pub clients: Vec<u32>,
    /// Connections, e.g. `tcp,rdma,gdr,tcp/gdr`.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub mechanisms: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Figure id, or `all`.
    pub figure: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parameter file used instead of the shipped calibration.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Target file; the shipped targets when neither this nor --samples is given.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Wire benchmark samples; sets the TCP setup time and bandwidth.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Starting parameter file.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Where to write the fitted parameters; printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum WireCommand {
    /// Echo frames until terminated.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// `echo` or `fixed:<bytes>`.
        #[arg(long, default_value = "echo")]
        response: ResponseRule,
        #[arg(long, default_value_t = wirebench::MAX_FRAME)]
        max_frame: u64,
    },
    /// Closed-loop measurement against a server.
    Measure {
        #[arg(long)]
        connect: String,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<u64>,
        #[arg(long, default_value_t = 1000)]
        count: u32,
        #[arg(long, default_value_t = 10)]
        warmup: u32,
        /// Response rule the server runs with.
        #[arg(long, default_value = "echo")]
        expect: ResponseRule,
        /// Concurrent clients, each on its own connection.
        #[arg(long, default_value_t = 1)]
        clients: u32,
        #[arg(long, default_value_t = 10_000)]
        timeout_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Requests per size in the wire benchmark check.
    #[arg(long, default_value_t = 200)]
    pub wire_count: u32,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }

    fn checks(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CHECK_FAILED,
            message: message.into(),
        }
    }
}

impl From<ScenarioFileError> for Failure {
    fn from(e: ScenarioFileError) -> Self {
        Failure::invalid(e.to_string())
    }
}

fn out_dir(flag: Option<&Path>, file: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| file.map(Path::to_path_buf))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::internal(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| Failure::internal(format!("{}: {e}", path.display())))
}

/// Parse and execute; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Reproduce(a) => cmd_reproduce(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Wirebench(w) => cmd_wirebench(w),
        Command::Validate(a) => cmd_validate(a),
    }
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let file = ScenarioFile::load(&a.scenario)?;
    let mut scenario = file.scenario;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let traces = run(&scenario).map_err(|e| Failure::invalid(e.to_string()))?;
    let stats = analyse(&traces).map_err(|e| Failure::internal(e.to_string()))?;
    let dir = out_dir(a.out.as_deref(), file.output.dir.as_deref());
    let report = text_report(&traces, &stats, a.view);
    write(&dir.join("traces.csv"), traces.to_csv())?;
    write(&dir.join("breakdown.json"), breakdown_json(&traces, &stats, a.view))?;
    write(&dir.join("report.txt"), &report)?;
    if file.output.trace_json {
        write(&dir.join("traces.json"), traces.to_json())?;
    }
    print!("{report}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    if a.mechanisms.is_empty() {
        return Err(Failure::invalid("--mechanisms needs at least one connection"));
    }
    if a.clients.is_empty() || a.clients.contains(&0) {
        return Err(Failure::invalid("--clients needs positive counts"));
    }
    let connections: Vec<Connection> = a
        .mechanisms
        .iter()
        .map(|m| m.parse().map_err(|e: String| Failure::invalid(format!("--mechanisms: {e}"))))
        .collect::<Result<_, _>>()?;
    let text = std::fs::read_to_string(&a.base)
        .map_err(|e| Failure::invalid(format!("{}: {e}", a.base.display())))?;
    let base: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Failure::invalid(format!("{}: {}", a.base.display(), e.to_string().trim_end())))?;
    let dir_of_base = a.base.parent().unwrap_or(Path::new(".")).to_path_buf();
    let origin = a.base.display().to_string();

    let mut cells = Vec::new();
    for conn in &connections {
        for &n in &a.clients {
            let mut t = base.clone();
            t.insert("connection".into(), Value::String(conn.to_string()));
            let clients = t
                .entry("clients")
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .ok_or_else(|| Failure::invalid(format!("{origin}: `clients` must be a table")))?;
            clients.insert("count".into(), Value::Integer(n.into()));
            let file = ScenarioFile::from_table(t, &origin, &dir_of_base)?;
            let mut s = file.scenario;
            if let Some(seed) = a.seed {
                s.seed = seed;
            }
            cells.push((*conn, n, s, file.output.dir));
        }
    }
    let dir = out_dir(a.out.as_deref(), cells[0].3.as_deref());
    let results: Vec<_> = cells
        .par_iter()
        .map(|(conn, n, s, _)| {
            let r = run(s)
                .map_err(|e| e.to_string())
                .and_then(|t| analyse(&t).map(|st| (t, st)).map_err(|e| e.to_string()));
            (*conn, *n, r)
        })
        .collect();
    let mut csv = format!("{PLOT_CSV_HEADER}\n");
    let mut failures = Vec::new();
    for (conn, n, r) in &results {
        match r {
            Ok((traces, stats)) => {
                csv.push_str(&plot_row(&conn.to_string(), *n as usize, stats));
                csv.push('\n');
                let cell = dir
                    .join("cells")
                    .join(format!("{}_{n}", conn.to_string().replace('/', "-")));
                write(&cell.join("traces.csv"), traces.to_csv())?;
            }
            Err(e) => failures.push(format!("{conn} clients={n}: {e}")),
        }
    }
    write(&dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    println!("{} cells, wrote {}", results.len(), dir.display());
    if failures.is_empty() {
        Ok(())
    } else {
        write(&dir.join("failures.txt"), failures.join("\n") + "\n")?;
        Err(Failure::checks(format!(
            "{} of {} cells failed:\n{}",
            failures.len(),
            results.len(),
            failures.join("\n")
        )))
    }
}

fn cmd_reproduce(a: ReproduceArgs) -> Result<(), Failure> {
    let ids: Vec<String> = if a.figure == "all" {
        pack::figure_ids().into_iter().map(String::from).collect()
    } else {
        vec![a.figure.clone()]
    };
    let mut figures: Vec<pack::Figure> = ids
        .iter()
        .map(|id| pack::load(id).map_err(|e| Failure::invalid(e.to_string())))
        .collect::<Result<_, _>>()?;
    if let Some(path) = &a.params {
        let p = read_params(path)?;
        for f in &mut figures {
            f.set_params(&p);
        }
    }
    let dir = out_dir(a.out.as_deref(), None);
    let mut failed = Vec::new();
    for f in &figures {
        let r = f.run();
        r.write(&dir).map_err(|e| Failure::internal(format!("{}: {e}", dir.display())))?;
        print!("{}", r.checks_text());
        if !r.passed() {
            failed.push(r.id.clone());
        }
    }
    println!("wrote {}", dir.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::checks(format!("checks failed in {}", failed.join(", "))))
    }
}

fn read_params(path: &Path) -> Result<ParamSet, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    let p = ParamSet::from_toml(&text)
        .map_err(|e| Failure::invalid(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
    p.validate()
        .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    Ok(p)
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<(), Failure> {
    let mut params = match &a.base {
        Some(p) => read_params(p)?,
        None => ParamSet::default(),
    };
    let mut hard_missed = false;
    if let Some(path) = &a.samples {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
        let samples = read_samples_csv(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
        let (samples, dropped) = drop_outliers(&samples, FAR_OUT_FENCE);
        let fit = fit_linear(&samples).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
        // An echo round trip carries the payload both ways.
        params.alpha_tcp = TimeSpan::from_ns((fit.intercept / 2.0).max(0.0));
        params.b_tcp_bytes_per_ms = 2.0 * fit.bytes_per_ms();
        println!(
            "wire fit over {} samples ({dropped} far outliers dropped): intercept {:.3} us, slope {:.5} ns/B, r2 {:.4}",
            fit.n,
            fit.intercept / 1e3,
            fit.slope,
            fit.r2
        );
        println!(
            "one-way tcp: alpha {:.3} us, bandwidth {:.0} B/ms",
            params.alpha_tcp.ns() / 1e3,
            params.b_tcp_bytes_per_ms
        );
    }
    if a.targets.is_some() || a.samples.is_none() {
        let targets = match &a.targets {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
                TargetSet::from_toml(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?
            }
            None => TargetSet::shipped(),
        };
        let report = fit_scenario_params(&Evaluator::default(), &targets, &params, &GridSpec::default())
            .map_err(|e| Failure::invalid(e.to_string()))?;
        print!("{}", report.render());
        hard_missed = !report.hard_targets_met();
        params = report.params;
    }
    let text = format!("# Fitted by `servesim calibrate`.\n{}", params.to_toml());
    match &a.out {
        Some(path) => {
            write(path, &text)?;
            println!("wrote {}", path.display());
        }
        None => print!("\n{text}"),
    }
    if hard_missed {
        Err(Failure::checks("hard calibration targets missed; parameters written anyway"))
    } else {
        Ok(())
    }
}

fn cmd_wirebench(w: WireCommand) -> Result<(), Failure> {
    match w {
        WireCommand::Serve {
            listen,
            response,
            max_frame,
        } => {
            let server = wirebench::serve(
                &listen,
                ServerConfig {
                    rule: response,
                    max_frame,
                },
            )
            .map_err(|e| Failure::invalid(e.to_string()))?;
            println!("listening on {}", server.local_addr());
            server.wait();
            Ok(())
        }
        WireCommand::Measure {
            connect,
            sizes,
            count,
            warmup,
            expect,
            clients,
            timeout_ms,
            out,
        } => {
            if clients == 0 {
                return Err(Failure::invalid("--clients must be >= 1"));
            }
            let cfg = MeasureConfig {
                warmup,
                timeout: Duration::from_millis(timeout_ms),
                expect,
                ..MeasureConfig::new(connect, sizes, count)
            };
            let reports = if clients == 1 {
                vec![wirebench::measure(&cfg)]
            } else {
                wirebench::measure_concurrent(&cfg, clients)
            };
            let mut merged = wirebench::MeasureReport::default();
            for r in reports {
                merged.samples.extend(r.samples);
                merged.failures.extend(r.failures);
                merged.max_in_flight = merged.max_in_flight.max(r.max_in_flight);
                merged.foreign_responses += r.foreign_responses;
            }
            let csv = merged.to_csv();
            match &out {
                Some(path) => write(path, &csv)?,
                None => print!("{csv}"),
            }
            for f in &merged.failures {
                eprintln!("size {}: {}", f.size_bytes, f.error);
            }
            eprintln!(
                "{} samples, {} failed sizes",
                merged.samples.len(),
                merged.failures.len()
            );
            if merged.failures.is_empty() {
                Ok(())
            } else {
                Err(Failure::checks("some sizes failed"))
            }
        }
    }
}

fn cmd_validate(a: ValidateArgs) -> Result<(), Failure> {
    let dir = out_dir(a.out.as_deref(), None);
    let v = validate(&ValidateOptions {
        seed: a.seed,
        out_dir: Some(dir.clone()),
        wire_count: a.wire_count,
    });
    print!("{}", v.render());
    println!("wrote {}", dir.display());
    if v.passed() {
        Ok(())
    } else {
        Err(Failure::checks(format!(
            "criteria failed: {}",
            v.failed_ids()
                .iter()
                .map(|i| format!("C{i}"))
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }
}
