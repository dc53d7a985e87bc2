//! Model catalog, payload sizing and closed-loop client behaviour.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::units::{Nanos, TimeSpan};

/// Bytes per tensor element. Inference tensors are 32-bit floats.
pub const ELEMENT_BYTES: u64 = 4;

/// Share of a model's compute charged for preprocessing when the model does
/// not state its own preprocessing cost.
pub const DEFAULT_PREPROCESS_SHARE: f64 = 0.05;

pub const DEFAULT_REQUEST_COUNT: u32 = 1000;

const BUILTIN_CATALOG: &str = include_str!("../pack/catalog.toml");

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("model `{0}` is not in the catalog")]
    CatalogMiss(String),
    #[error("model `{name}` is invalid: {reason}")]
    InvalidModel { name: String, reason: String },
    #[error("catalog parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("catalog serialisation error: {0}")]
    Serialize(#[from] toml::ser::Error),
}

/// A served network, described only by its compute cost and tensor shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    pub name: String,
    pub gflops: f64,
    pub input_shape: Vec<u64>,
    pub output_shapes: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess_gflops: Option<f64>,
}

impl ModelProfile {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |reason: &str| WorkloadError::InvalidModel {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if !(self.gflops >= 0.0) || !self.gflops.is_finite() {
            return Err(bad("gflops must be a finite non-negative number"));
        }
        if let Some(p) = self.preprocess_gflops {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(bad("preprocess_gflops must be finite and non-negative"));
            }
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(bad("input_shape dims must be >= 1"));
        }
        if self.output_shapes.is_empty() {
            return Err(bad("output_shapes must not be empty"));
        }
        if self
            .output_shapes
            .iter()
            .any(|s| s.is_empty() || s.contains(&0))
        {
            return Err(bad("output_shapes dims must be >= 1"));
        }
        Ok(())
    }

    pub fn preprocess_cost(&self) -> f64 {
        self.preprocess_gflops
            .unwrap_or(self.gflops * DEFAULT_PREPROCESS_SHARE)
    }

    pub fn input_elements(&self) -> u64 {
        self.input_shape.iter().product()
    }

    pub fn output_elements(&self) -> u64 {
        self.output_shapes
            .iter()
            .map(|s| s.iter().product::<u64>())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    /// Client sends camera frames; the server preprocesses on the GPU.
    Raw,
    Preprocessed,
}

impl DataMode {
    pub fn label(self) -> &'static str {
        match self {
            DataMode::Raw => "raw",
            DataMode::Preprocessed => "preprocessed",
        }
    }
}

impl fmt::Display for DataMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DataMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(DataMode::Raw),
            "preprocessed" => Ok(DataMode::Preprocessed),
            _ => Err(format!("unknown data mode `{s}` (raw|preprocessed)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Request,
    Response,
}

/// Raw camera frame geometry, one byte per channel sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawImage {
    pub width: u64,
    pub height: u64,
    pub channels: u64,
}

impl Default for RawImage {
    fn default() -> Self {
        RawImage {
            width: 640,
            height: 480,
            channels: 3,
        }
    }
}

impl RawImage {
    pub fn bytes(&self) -> u64 {
        self.width * self.height * self.channels
    }
}

/// Bytes on the wire for one request or response.
pub fn payload_bytes(
    model: &ModelProfile,
    mode: DataMode,
    direction: Direction,
    raw: RawImage,
) -> u64 {
    match (direction, mode) {
        (Direction::Request, DataMode::Preprocessed) => model.input_elements() * ELEMENT_BYTES,
        (Direction::Request, DataMode::Raw) => raw.bytes(),
        (Direction::Response, _) => model.output_elements() * ELEMENT_BYTES,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    #[serde(rename = "model")]
    pub models: Vec<ModelProfile>,
}

impl Catalog {
    pub fn builtin() -> Catalog {
        Catalog::from_toml(BUILTIN_CATALOG).expect("embedded catalog is valid")
    }

    pub fn from_toml(text: &str) -> Result<Catalog, WorkloadError> {
        let catalog: Catalog = toml::from_str(text)?;
        for m in &catalog.models {
            m.validate()?;
        }
        Ok(catalog)
    }

    pub fn to_toml(&self) -> Result<String, WorkloadError> {
        Ok(toml::to_string(self)?)
    }

    /// Look up a model by exact name, then case-insensitively, then by the
    /// family prefix before `_` (`DeepLabV3` finds `DeepLabV3_ResNet50`).
    pub fn get(&self, name: &str) -> Result<&ModelProfile, WorkloadError> {
        let miss = || WorkloadError::CatalogMiss(name.to_string());
        if let Some(m) = self.models.iter().find(|m| m.name == name) {
            return Ok(m);
        }
        if let Some(m) = self.models.iter().find(|m| m.name.eq_ignore_ascii_case(name)) {
            return Ok(m);
        }
        let mut family = self.models.iter().filter(|m| {
            m.name
                .split_once('_')
                .is_some_and(|(f, _)| f.eq_ignore_ascii_case(name))
        });
        match (family.next(), family.next()) {
            (Some(m), None) => Ok(m),
            _ => Err(miss()),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.models.iter().map(|m| m.name.as_str())
    }

    /// Add or replace a user-defined model.
    pub fn insert(&mut self, model: ModelProfile) -> Result<(), WorkloadError> {
        model.validate()?;
        match self.models.iter_mut().find(|m| m.name == model.name) {
            Some(slot) => *slot = model,
            None => self.models.push(model),
        }
        Ok(())
    }

    pub fn payload_bytes(
        &self,
        name: &str,
        mode: DataMode,
        direction: Direction,
        raw: RawImage,
    ) -> Result<u64, WorkloadError> {
        Ok(payload_bytes(self.get(name)?, mode, direction, raw))
    }
}

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    #[default]
    Normal,
    High,
}

impl Priority {
    pub fn label(self) -> &'static str {
        match self {
            Priority::Normal => "normal",
            Priority::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSpec {
    pub id: u32,
    pub priority: Priority,
    pub request_count: u32,
    pub think_time: TimeSpan,
}

impl ClientSpec {
    pub fn new(id: u32) -> Self {
        ClientSpec {
            id,
            priority: Priority::Normal,
            request_count: DEFAULT_REQUEST_COUNT,
            think_time: TimeSpan::ZERO,
        }
    }
}

/// Outcome of asking a closed-loop client for its next request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextRequest {
    Issue { at: Nanos, index: u32 },
    /// The previous request has not been answered yet.
    Blocked,
    Done,
}

/// Mutable closed-loop state of one client, owned by the simulation core.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub spec: ClientSpec,
    issued: u32,
    outstanding: bool,
    last_response_at: Option<Nanos>,
}

impl ClientState {
    pub fn new(spec: ClientSpec) -> Self {
        ClientState {
            spec,
            issued: 0,
            outstanding: false,
            last_response_at: None,
        }
    }

    pub fn issued(&self) -> u32 {
        self.issued
    }

    pub fn outstanding(&self) -> bool {
        self.outstanding
    }

    /// Issue the next request no earlier than `now` and no earlier than one
    /// think time after the last response.
    pub fn next_request(&mut self, now: Nanos) -> NextRequest {
        if self.issued >= self.spec.request_count {
            return NextRequest::Done;
        }
        if self.outstanding {
            return NextRequest::Blocked;
        }
        let at = match self.last_response_at {
            Some(t) => now.max(t + self.spec.think_time.nanos()),
            None => now,
        };
        let index = self.issued;
        self.issued += 1;
        self.outstanding = true;
        NextRequest::Issue { at, index }
    }

    pub fn record_response(&mut self, at: Nanos) {
        debug_assert!(self.outstanding);
        self.outstanding = false;
        self.last_response_at = Some(at);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(name: &str) -> ModelProfile {
        Catalog::builtin().get(name).unwrap().clone()
    }

    #[test]
    fn catalog_has_six_models() {
        let c = Catalog::builtin();
        let names: Vec<_> = c.names().collect();
        assert_eq!(
            names,
            [
                "MobileNetV3",
                "ResNet50",
                "EfficientNetB0",
                "WideResNet101",
                "YoloV4",
                "DeepLabV3_ResNet50"
            ]
        );
        let gflops: Vec<f64> = c.models.iter().map(|m| m.gflops).collect();
        assert_eq!(gflops, [0.06, 4.1, 0.39, 22.81, 128.46, 178.72]);
    }

    #[test]
    fn payload_sizes() {
        let raw = RawImage::default();
        let r50 = model("ResNet50");
        assert_eq!(
            payload_bytes(&r50, DataMode::Preprocessed, Direction::Request, raw),
            602_112
        );
        assert_eq!(payload_bytes(&r50, DataMode::Raw, Direction::Response, raw), 4_000);
        assert_eq!(
            payload_bytes(&r50, DataMode::Preprocessed, Direction::Response, raw),
            4_000
        );
        let deeplab = model("DeepLabV3_ResNet50");
        assert_eq!(model("DeepLabV3").name, deeplab.name);
        assert_eq!(model("resnet50").name, "ResNet50");
        assert_eq!(
            payload_bytes(&deeplab, DataMode::Raw, Direction::Response, raw),
            45_427_200
        );
        let yolo = model("YoloV4");
        assert_eq!(
            payload_bytes(&yolo, DataMode::Preprocessed, Direction::Response, raw),
            3_619_980
        );
        assert_eq!(payload_bytes(&yolo, DataMode::Raw, Direction::Request, raw), 921_600);
    }

    #[test]
    fn catalog_miss() {
        let err = Catalog::builtin()
            .payload_bytes("AlexNet", DataMode::Raw, Direction::Request, RawImage::default())
            .unwrap_err();
        assert!(matches!(err, WorkloadError::CatalogMiss(n) if n == "AlexNet"));
    }

    #[test]
    fn catalog_round_trip() {
        let c = Catalog::builtin();
        let again = Catalog::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut m = model("ResNet50");
        m.output_shapes.clear();
        assert!(m.validate().is_err());
        let mut m = model("ResNet50");
        m.input_shape = vec![3, 0, 224];
        assert!(m.validate().is_err());
        let mut m = model("ResNet50");
        m.gflops = -1.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn default_preprocess_share() {
        let mut m = model("ResNet50");
        m.preprocess_gflops = None;
        assert!((m.preprocess_cost() - 0.205).abs() < 1e-12);
    }

    #[test]
    fn closed_loop_issue_times() {
        let mut spec = ClientSpec::new(0);
        spec.request_count = 2;
        let mut c = ClientState::new(spec);
        assert_eq!(c.next_request(0), NextRequest::Issue { at: 0, index: 0 });
        assert_eq!(c.next_request(5), NextRequest::Blocked);
        c.record_response(12_000_000);
        assert_eq!(
            c.next_request(12_000_000),
            NextRequest::Issue {
                at: 12_000_000,
                index: 1
            }
        );
        c.record_response(20_000_000);
        assert_eq!(c.next_request(20_000_000), NextRequest::Done);
    }

    #[test]
    fn think_time_delays_next_issue() {
        let mut spec = ClientSpec::new(3);
        spec.think_time = TimeSpan::from_ms(5.0);
        let mut c = ClientState::new(spec);
        c.next_request(0);
        c.record_response(10_000_000);
        assert_eq!(
            c.next_request(10_000_000),
            NextRequest::Issue {
                at: 15_000_000,
                index: 1
            }
        );
    }

    #[test]
    fn single_request_client_is_done_after_one() {
        let mut spec = ClientSpec::new(1);
        spec.request_count = 1;
        let mut c = ClientState::new(spec);
        assert!(matches!(c.next_request(0), NextRequest::Issue { .. }));
        c.record_response(1);
        assert_eq!(c.next_request(1), NextRequest::Done);
    }
}
