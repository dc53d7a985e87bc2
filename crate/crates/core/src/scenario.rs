//! Scenario files: TOML documents describing one simulation plus output
//! options, layered with `extends`.
//!
//! ```toml
//! extends = "base.toml"
//! model = "ResNet50"
//! data_mode = "raw"
//! connection = "tcp/gdr"
//!
//! [clients]
//! count = 16
//! high_priority = 1
//! requests = 200
//! think_time = "0ms"
//!
//! [sharing]
//! mode = "multi_stream"
//! streams = 4
//!
//! [params]
//! interference_per_byte = "0.9ns"
//! ```
//!
//! Keys are checked against the schema before anything is built, and every
//! problem is reported with the file that supplied the key and its dotted
//! path.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::gpu::{GpuConfig, SharingMode};
use crate::sim::{Connection, Scenario, SimError, DEFAULT_WARMUP};
use crate::transport::ParamSet;
use crate::units::TimeSpan;
use crate::workload::{Catalog, ClientSpec, DataMode, Priority, RawImage, DEFAULT_REQUEST_COUNT};

const TOP_KEYS: &[&str] = &[
    "extends",
    "model",
    "data_mode",
    "connection",
    "seed",
    "warmup",
    "noise_sigma",
    "params_file",
    "image",
    "clients",
    "sharing",
    "gpu",
    "params",
    "output",
];
const CLIENT_KEYS: &[&str] = &["count", "high_priority", "requests", "think_time"];
const SHARING_KEYS: &[&str] = &["mode", "streams"];
const OUTPUT_KEYS: &[&str] = &["dir", "trace_json"];

/// One offending key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyIssue {
    /// File that supplied the key, or the outermost file for missing keys.
    pub file: String,
    pub key: String,
    pub message: String,
}

impl fmt::Display for KeyIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: `{}`: {}", self.file, self.key, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}: {message}")]
    Parse { file: String, message: String },
    #[error("`extends` cycle through {0}")]
    Cycle(PathBuf),
    #[error("invalid scenario file:\n{}", list(.0))]
    Invalid(Vec<KeyIssue>),
    #[error("{file}: {source}")]
    Scenario { file: String, source: SimError },
}

fn list(issues: &[KeyIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OutputOptions {
    pub dir: Option<PathBuf>,
    /// Also write the structured trace document.
    pub trace_json: bool,
}

#[derive(Debug, Clone)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub output: OutputOptions,
    /// Files read, base first.
    pub sources: Vec<PathBuf>,
}

/// A merged document plus the file that supplied each leaf.
#[derive(Debug, Clone, Default)]
pub struct Layered {
    pub table: Table,
    origins: BTreeMap<String, String>,
    sources: Vec<PathBuf>,
    /// The outermost document, blamed for keys that no layer sets.
    top: String,
}

impl Layered {
    fn origin(&self, key: &str) -> String {
        self.origins
            .get(key)
            .cloned()
            .unwrap_or_else(|| self.top.clone())
    }
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<ScenarioFile, ScenarioFileError> {
        let layered = load_layered(path, &mut Vec::new())?;
        resolve(layered)
    }

    /// Parse a document held in memory. `extends` and `params_file` resolve
    /// against `base_dir`.
    pub fn parse(text: &str, origin: &str, base_dir: &Path) -> Result<ScenarioFile, ScenarioFileError> {
        let layered = layer_text(text, origin, base_dir, &mut Vec::new())?;
        resolve(layered)
    }

    /// Build from an already parsed table, as embedded in pack files.
    pub fn from_table(table: Table, origin: &str, base_dir: &Path) -> Result<ScenarioFile, ScenarioFileError> {
        let layered = layer_table(table, origin, base_dir, &mut Vec::new())?;
        resolve(layered)
    }
}

fn load_layered(path: &Path, stack: &mut Vec<PathBuf>) -> Result<Layered, ScenarioFileError> {
    let canonical = path.canonicalize().map_err(|source| ScenarioFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if stack.contains(&canonical) {
        return Err(ScenarioFileError::Cycle(canonical));
    }
    let text = std::fs::read_to_string(&canonical).map_err(|source| ScenarioFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    stack.push(canonical.clone());
    let dir = canonical.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut out = layer_text(&text, &path.display().to_string(), &dir, stack)?;
    out.sources.push(canonical);
    stack.pop();
    Ok(out)
}

fn layer_text(
    text: &str,
    origin: &str,
    dir: &Path,
    stack: &mut Vec<PathBuf>,
) -> Result<Layered, ScenarioFileError> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| ScenarioFileError::Parse {
        file: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    layer_table(table, origin, dir, stack)
}

fn layer_table(
    mut table: Table,
    origin: &str,
    dir: &Path,
    stack: &mut Vec<PathBuf>,
) -> Result<Layered, ScenarioFileError> {
    let mut base = match table.remove("extends") {
        None => Layered::default(),
        Some(Value::String(rel)) => load_layered(&dir.join(rel), stack)?,
        Some(_) => {
            return Err(ScenarioFileError::Invalid(vec![KeyIssue {
                file: origin.to_string(),
                key: "extends".into(),
                message: "must be a path string".into(),
            }]))
        }
    };
    // Relative params files are relative to the file that names them.
    if let Some(Value::String(p)) = table.get("params_file") {
        let abs = dir.join(p);
        table.insert("params_file".into(), Value::String(abs.display().to_string()));
    }
    merge(&mut base.table, table, "", origin, &mut base.origins);
    base.top = origin.to_string();
    Ok(base)
}

fn merge(into: &mut Table, from: Table, prefix: &str, origin: &str, origins: &mut BTreeMap<String, String>) {
    for (k, v) in from {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (into.get_mut(&k), v) {
            (Some(Value::Table(dst)), Value::Table(src)) => merge(dst, src, &path, origin, origins),
            (_, v) => {
                mark(&v, &path, origin, origins);
                into.insert(k, v);
            }
        }
    }
}

fn mark(v: &Value, path: &str, origin: &str, origins: &mut BTreeMap<String, String>) {
    origins.insert(path.to_string(), origin.to_string());
    if let Value::Table(t) = v {
        for (k, v) in t {
            mark(v, &format!("{path}.{k}"), origin, origins);
        }
    }
}

fn keys_of<T: Serialize + Default>() -> BTreeSet<String> {
    match Value::try_from(T::default()) {
        Ok(Value::Table(t)) => t.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

struct Reader<'a> {
    doc: &'a Layered,
    issues: Vec<KeyIssue>,
}

impl<'a> Reader<'a> {
    fn issue(&mut self, key: &str, message: impl Into<String>) {
        self.issues.push(KeyIssue {
            file: self.doc.origin(key),
            key: key.to_string(),
            message: message.into(),
        });
    }

    fn section(&mut self, name: &str) -> Option<&'a Table> {
        match self.doc.table.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.issue(name, "must be a table");
                None
            }
        }
    }

    fn unknown(&mut self, table: &Table, prefix: &str, allowed: &BTreeSet<String>) {
        for k in table.keys() {
            if !allowed.contains(k) {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                self.issue(&path, "unknown key");
            }
        }
    }

    fn value<T: DeserializeOwned>(&mut self, table: &Table, key: &str, path: &str) -> Option<T> {
        let v = table.get(key)?;
        match v.clone().try_into::<T>() {
            Ok(t) => Some(t),
            Err(e) => {
                self.issue(path, e.to_string().trim().to_string());
                None
            }
        }
    }

    fn parsed<T: std::str::FromStr>(&mut self, table: &Table, key: &str, path: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        let s: String = self.value(table, key, path)?;
        match s.parse::<T>() {
            Ok(t) => Some(t),
            Err(e) => {
                self.issue(path, e.to_string());
                None
            }
        }
    }

    /// Deserialize a `serde(default)` struct key by key so that every bad
    /// key is reported, not just the first.
    fn keyed<T: DeserializeOwned + Serialize + Default>(&mut self, base: T, name: &str) -> T {
        let Some(t) = self.section(name) else {
            return base;
        };
        self.unknown(t, name, &keys_of::<T>());
        let mut whole = match Value::try_from(&base) {
            Ok(Value::Table(b)) => b,
            _ => Table::new(),
        };
        let mut ok = true;
        for (k, v) in t {
            if !keys_of::<T>().contains(k) {
                continue;
            }
            let mut one = Table::new();
            one.insert(k.clone(), v.clone());
            match Value::Table(one).try_into::<T>() {
                Ok(_) => {
                    whole.insert(k.clone(), v.clone());
                }
                Err(e) => {
                    ok = false;
                    self.issue(&format!("{name}.{k}"), e.to_string().trim().to_string());
                }
            }
        }
        if !ok {
            return base;
        }
        match Value::Table(whole).try_into::<T>() {
            Ok(v) => v,
            Err(e) => {
                self.issue(name, e.to_string().trim().to_string());
                base
            }
        }
    }
}

fn resolve(doc: Layered) -> Result<ScenarioFile, ScenarioFileError> {
    let mut r = Reader {
        doc: &doc,
        issues: Vec::new(),
    };
    let top = &doc.table;
    r.unknown(top, "", &TOP_KEYS.iter().map(|s| s.to_string()).collect());

    let model: Option<String> = r.value(top, "model", "model");
    if model.is_none() && !top.contains_key("model") {
        r.issue("model", "required");
    }
    let data_mode: Option<DataMode> = r.parsed(top, "data_mode", "data_mode");
    if !top.contains_key("data_mode") {
        r.issue("data_mode", "required (raw|preprocessed)");
    }
    let connection: Option<Connection> = r.parsed(top, "connection", "connection");
    if !top.contains_key("connection") {
        r.issue("connection", "required, e.g. \"gdr\" or \"tcp/rdma\"");
    }
    let seed: u64 = r.value(top, "seed", "seed").unwrap_or(0);
    let warmup: u32 = r.value(top, "warmup", "warmup").unwrap_or(DEFAULT_WARMUP);
    let noise_sigma: f64 = r.value(top, "noise_sigma", "noise_sigma").unwrap_or(0.0);

    let image = match r.section("image") {
        None => RawImage::default(),
        Some(t) => {
            let allowed = ["width", "height", "channels"].iter().map(|s| s.to_string()).collect();
            r.unknown(t, "image", &allowed);
            let d = RawImage::default();
            RawImage {
                width: r.value(t, "width", "image.width").unwrap_or(d.width),
                height: r.value(t, "height", "image.height").unwrap_or(d.height),
                channels: r.value(t, "channels", "image.channels").unwrap_or(d.channels),
            }
        }
    };

    let empty = Table::new();
    let ct = r.section("clients").unwrap_or(&empty);
    r.unknown(ct, "clients", &CLIENT_KEYS.iter().map(|s| s.to_string()).collect());
    let count: u32 = r.value(ct, "count", "clients.count").unwrap_or(1);
    let high: u32 = r.value(ct, "high_priority", "clients.high_priority").unwrap_or(0);
    let requests: u32 = r
        .value(ct, "requests", "clients.requests")
        .unwrap_or(DEFAULT_REQUEST_COUNT);
    let think: TimeSpan = r
        .parsed(ct, "think_time", "clients.think_time")
        .unwrap_or(TimeSpan::ZERO);
    if count == 0 {
        r.issue("clients.count", "must be >= 1");
    }
    if high > count {
        r.issue("clients.high_priority", "exceeds clients.count");
    }

    let st = r.section("sharing").unwrap_or(&empty);
    r.unknown(st, "sharing", &SHARING_KEYS.iter().map(|s| s.to_string()).collect());
    let mode: String = r
        .value(st, "mode", "sharing.mode")
        .unwrap_or_else(|| "multi_stream".into());
    let streams: Option<u32> = r.value(st, "streams", "sharing.streams");
    let sharing = match mode.as_str() {
        "multi_stream" => Some(SharingMode::MultiStream {
            max_streams: streams.unwrap_or(count.max(1)),
        }),
        "multi_context" | "mps" => {
            if streams.is_some() {
                r.issue("sharing.streams", "only meaningful for multi_stream");
            }
            Some(if mode == "mps" {
                SharingMode::Mps
            } else {
                SharingMode::MultiContext
            })
        }
        other => {
            r.issue(
                "sharing.mode",
                format!("unknown mode `{other}` (multi_stream|multi_context|mps)"),
            );
            None
        }
    };

    let gpu = r.keyed(GpuConfig::default(), "gpu");

    let mut params = ParamSet::default();
    if let Some(p) = r.value::<String>(top, "params_file", "params_file") {
        match std::fs::read_to_string(&p) {
            Err(e) => r.issue("params_file", format!("cannot read {p}: {e}")),
            Ok(text) => match ParamSet::from_toml(&text) {
                Ok(ps) => params = ps,
                Err(e) => r.issue("params_file", format!("{p}: {}", e.to_string().trim())),
            },
        }
    }
    let params = r.keyed(params, "params");

    let output = match r.section("output") {
        None => OutputOptions::default(),
        Some(t) => {
            r.unknown(t, "output", &OUTPUT_KEYS.iter().map(|s| s.to_string()).collect());
            OutputOptions {
                dir: r.value::<String>(t, "dir", "output.dir").map(PathBuf::from),
                trace_json: r.value(t, "trace_json", "output.trace_json").unwrap_or(false),
            }
        }
    };

    let issues = r.issues;
    if !issues.is_empty() {
        return Err(ScenarioFileError::Invalid(issues));
    }
    let (Some(model), Some(data_mode), Some(connection), Some(sharing)) =
        (model, data_mode, connection, sharing)
    else {
        return Err(ScenarioFileError::Invalid(vec![KeyIssue {
            file: r.doc.top.clone(),
            key: String::new(),
            message: "incomplete scenario".into(),
        }]));
    };

    let clients = (0..count)
        .map(|id| ClientSpec {
            id,
            priority: if id < high {
                Priority::High
            } else {
                Priority::Normal
            },
            request_count: requests,
            think_time: think,
        })
        .collect();
    let scenario = Scenario {
        model,
        catalog: Catalog::builtin(),
        data_mode,
        raw_image: image,
        connection,
        clients,
        sharing,
        gpu,
        params,
        seed,
        warmup_requests: warmup,
        noise_sigma,
    };
    scenario.validate().map_err(|source| ScenarioFileError::Scenario {
        file: doc.top.clone(),
        source,
    })?;
    Ok(ScenarioFile {
        scenario,
        output,
        sources: doc.sources.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::Mechanism;

    fn parse(text: &str) -> Result<ScenarioFile, ScenarioFileError> {
        ScenarioFile::parse(text, "test.toml", Path::new("."))
    }

    fn issues(text: &str) -> Vec<KeyIssue> {
        match parse(text) {
            Err(ScenarioFileError::Invalid(v)) => v,
            other => panic!("expected key issues, got {other:?}"),
        }
    }

    const MINIMAL: &str = "model = \"ResNet50\"\ndata_mode = \"raw\"\nconnection = \"local\"\n";

    #[test]
    fn minimal_defaults() {
        let f = parse(MINIMAL).unwrap();
        let s = &f.scenario;
        assert_eq!(s.connection, Connection::Direct(Mechanism::Local));
        assert_eq!(s.clients.len(), 1);
        assert_eq!(s.warmup_requests, DEFAULT_WARMUP);
        assert_eq!(s.sharing, SharingMode::MultiStream { max_streams: 1 });
        assert_eq!(s.params, ParamSet::default());
    }

    #[test]
    fn sections_apply() {
        let f = parse(&format!(
            "{MINIMAL}[clients]\ncount = 4\nhigh_priority = 1\nrequests = 7\nthink_time = \"1ms\"\n\
             [sharing]\nmode = \"mps\"\n[gpu]\nexec_engines = 4\ncontext_quantum = \"500us\"\n\
             [params]\ninterference = \"5us\"\n[output]\ndir = \"out\"\ntrace_json = true\n"
        ))
        .unwrap();
        let s = &f.scenario;
        assert_eq!(s.clients.len(), 4);
        assert_eq!(s.clients[0].priority, Priority::High);
        assert_eq!(s.clients[1].priority, Priority::Normal);
        assert_eq!(s.clients[3].request_count, 7);
        assert_eq!(s.clients[2].think_time, TimeSpan::from_ms(1.0));
        assert_eq!(s.sharing, SharingMode::Mps);
        assert_eq!(s.gpu.exec_engines, 4);
        assert_eq!(s.gpu.context_quantum, TimeSpan::from_us(500.0));
        assert_eq!(s.params.interference, TimeSpan::from_us(5.0));
        assert_eq!(f.output.dir, Some(PathBuf::from("out")));
        assert!(f.output.trace_json);
    }

    #[test]
    fn streams_default_to_client_count() {
        let f = parse(&format!("{MINIMAL}[clients]\ncount = 5\n")).unwrap();
        assert_eq!(f.scenario.sharing, SharingMode::MultiStream { max_streams: 5 });
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let v = issues(&format!(
            "{MINIMAL}colour = 1\n[gpu]\nengines = 2\n[params]\nalpha = \"1ms\"\n"
        ));
        let keys: Vec<&str> = v.iter().map(|i| i.key.as_str()).collect();
        assert_eq!(keys, vec!["colour", "gpu.engines", "params.alpha"]);
        assert!(v.iter().all(|i| i.file == "test.toml"));
    }

    #[test]
    fn durations_need_units() {
        let v = issues(&format!("{MINIMAL}[gpu]\ncontext_quantum = \"2\"\n[clients]\nthink_time = 3\n"));
        let keys: Vec<&str> = v.iter().map(|i| i.key.as_str()).collect();
        assert!(keys.contains(&"gpu.context_quantum"));
        assert!(keys.contains(&"clients.think_time"));
    }

    #[test]
    fn duplicate_key_is_a_parse_error() {
        let r = parse(&format!("{MINIMAL}model = \"YoloV4\"\n"));
        assert!(matches!(r, Err(ScenarioFileError::Parse { .. })));
    }

    #[test]
    fn missing_required_keys() {
        let v = issues("seed = 1\n");
        let keys: Vec<&str> = v.iter().map(|i| i.key.as_str()).collect();
        assert_eq!(keys, vec!["model", "data_mode", "connection"]);
    }

    #[test]
    fn bad_reference_is_a_scenario_error() {
        let r = parse("model = \"AlexNet\"\ndata_mode = \"raw\"\nconnection = \"tcp\"\n");
        assert!(matches!(r, Err(ScenarioFileError::Scenario { .. })));
    }

    #[test]
    fn extends_layers_and_attributes_keys() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("base.toml"),
            format!("{MINIMAL}[clients]\ncount = 3\nrequests = 9\n[gpu]\nexec_engines = 3\n"),
        )
        .unwrap();
        std::fs::write(
            dir.path().join("child.toml"),
            "extends = \"base.toml\"\nconnection = \"gdr\"\n[clients]\ncount = 2\n[gpu]\nbogus = 1\n",
        )
        .unwrap();
        let r = ScenarioFile::load(&dir.path().join("child.toml"));
        let Err(ScenarioFileError::Invalid(v)) = r else {
            panic!("expected the bogus key to be reported");
        };
        assert_eq!(v.len(), 1);
        assert!(v[0].file.ends_with("child.toml"));

        std::fs::write(
            dir.path().join("child.toml"),
            "extends = \"base.toml\"\nconnection = \"gdr\"\n[clients]\ncount = 2\n",
        )
        .unwrap();
        let f = ScenarioFile::load(&dir.path().join("child.toml")).unwrap();
        assert_eq!(f.scenario.connection, Connection::Direct(Mechanism::Gdr));
        assert_eq!(f.scenario.clients.len(), 2);
        assert_eq!(f.scenario.clients[0].request_count, 9);
        assert_eq!(f.scenario.gpu.exec_engines, 3);
        assert_eq!(f.sources.len(), 2);
    }

    #[test]
    fn extends_cycle_detected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.toml"), "extends = \"b.toml\"\n").unwrap();
        std::fs::write(dir.path().join("b.toml"), "extends = \"a.toml\"\n").unwrap();
        let r = ScenarioFile::load(&dir.path().join("a.toml"));
        assert!(matches!(r, Err(ScenarioFileError::Cycle(_))));
    }

    #[test]
    fn params_file_is_relative_to_its_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = ParamSet {
            engine_rate_gflops_per_ms: 0.5,
            ..ParamSet::default()
        };
        std::fs::write(dir.path().join("p.toml"), p.to_toml()).unwrap();
        std::fs::write(
            dir.path().join("s.toml"),
            format!("{MINIMAL}params_file = \"p.toml\"\n[params]\nalpha_rdma = \"1us\"\n"),
        )
        .unwrap();
        let f = ScenarioFile::load(&dir.path().join("s.toml")).unwrap();
        assert_eq!(f.scenario.params.engine_rate_gflops_per_ms, 0.5);
        assert_eq!(f.scenario.params.alpha_rdma, TimeSpan::from_us(1.0));
    }
}
