//! Reproduction pack: one TOML file per experiment, each expanding a base
//! scenario over a set of axes and checking the resulting cells.
//!
//! ```toml
//! id = "fig11"
//! title = "Stream limits, ResNet50, 16 clients"
//!
//! [base]
//! model = "ResNet50"
//! data_mode = "raw"
//! [base.clients]
//! count = 16
//! requests = 60
//!
//! [axes]
//! connection = ["gdr", "rdma"]
//! streams = [1, 2, 4, 8, 16]
//!
//! [[check]]
//! name = "gdr_one_stream_penalty"
//! criterion = 6
//! kind = "ratio"
//! metric = "total"
//! a = { connection = "gdr", streams = 1 }
//! b = { connection = "gdr", streams = 16 }
//! target = 1.33
//! tolerance = 0.10
//! ```
//!
//! Durations are compared in milliseconds. `fraction.<stage>` metrics use
//! the folded view and `fraction.data` is request, copy and response
//! together.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;
use toml::{Table, Value};

use crate::gpu::SharingMode;
use crate::metrics::{analyse, fraction_report, plot_row, AggregateStats, View, METRICS, PLOT_CSV_HEADER};
use crate::scenario::{ScenarioFile, ScenarioFileError};
use crate::sim::{run, Scenario, TraceSet};
use crate::workload::Priority;

const SHIPPED: &[(&str, &str)] = &[
    ("fig5", include_str!("../pack/fig5.toml")),
    ("fig6", include_str!("../pack/fig6.toml")),
    ("fig7", include_str!("../pack/fig7.toml")),
    ("fig8", include_str!("../pack/fig8.toml")),
    ("fig9", include_str!("../pack/fig9.toml")),
    ("fig10", include_str!("../pack/fig10.toml")),
    ("fig11", include_str!("../pack/fig11.toml")),
    ("fig12", include_str!("../pack/fig12.toml")),
    ("fig13", include_str!("../pack/fig13.toml")),
];

pub const AXES: [&str; 7] = [
    "model",
    "data_mode",
    "connection",
    "clients",
    "streams",
    "sharing",
    "high_priority",
];
const NUMERIC_AXES: [&str; 3] = ["clients", "streams", "high_priority"];

#[derive(Debug, thiserror::Error)]
pub enum PackError {
    #[error("unknown figure `{id}`; available: {}", available.join(", "))]
    UnknownFigure { id: String, available: Vec<String> },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}: cell {cell}: {source}")]
    Cell {
        origin: String,
        cell: String,
        source: Box<ScenarioFileError>,
    },
    #[error("{origin}: check `{check}`: {message}")]
    Check {
        origin: String,
        check: String,
        message: String,
    },
}

pub fn figure_ids() -> Vec<&'static str> {
    SHIPPED.iter().map(|(id, _)| *id).collect()
}

pub fn shipped_text(id: &str) -> Option<&'static str> {
    SHIPPED.iter().find(|(i, _)| *i == id).map(|(_, t)| *t)
}

pub fn load(id: &str) -> Result<Figure, PackError> {
    let text = shipped_text(id).ok_or_else(|| PackError::UnknownFigure {
        id: id.to_string(),
        available: figure_ids().iter().map(|s| s.to_string()).collect(),
    })?;
    Figure::from_toml(text, &format!("pack/{id}.toml"))
}

pub fn load_all() -> Result<Vec<Figure>, PackError> {
    figure_ids().into_iter().map(load).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Metric of one cell.
    Value,
    /// `1 - a / b`.
    Saving,
    /// `a / b`.
    Ratio,
    /// `a - b`.
    Difference,
    /// `a < b`.
    Less,
    /// Cells of `a` ordered by `along` never rise by more than `tolerance`
    /// (relative, default 0).
    NonIncreasing,
    /// Every cell of `a` along the axis within `tolerance` of the first.
    Band,
    /// Last over first cell of `a` along the axis.
    Growth,
    /// At each point of the axis, `a <= b * (1 + tolerance)`.
    EachLe,
    /// At each point of the axis, `|a / b - 1| <= tolerance`.
    EachWithin,
}

impl CheckKind {
    fn is_series(self) -> bool {
        matches!(
            self,
            CheckKind::NonIncreasing
                | CheckKind::Band
                | CheckKind::Growth
                | CheckKind::EachLe
                | CheckKind::EachWithin
        )
    }

    fn is_pair(self) -> bool {
        matches!(
            self,
            CheckKind::Saving
                | CheckKind::Ratio
                | CheckKind::Difference
                | CheckKind::Less
                | CheckKind::EachLe
                | CheckKind::EachWithin
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stat {
    #[default]
    Mean,
    P50,
    P99,
    Stddev,
    Cov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    #[default]
    Overall,
    High,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub name: String,
    /// Acceptance criterion number this check contributes to.
    pub criterion: u32,
    pub kind: CheckKind,
    pub metric: String,
    #[serde(default)]
    pub stat: Stat,
    #[serde(default)]
    pub class: Class,
    #[serde(default)]
    pub a: BTreeMap<String, Value>,
    #[serde(default)]
    pub b: BTreeMap<String, Value>,
    pub along: Option<String>,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Reported but not counted.
    #[serde(default)]
    pub informational: bool,
}

impl Check {
    fn bounds_text(&self) -> String {
        let mut parts = Vec::new();
        if let Some(t) = self.target {
            parts.push(format!("{t} ± {}", self.tolerance.unwrap_or(0.0)));
        }
        if let Some(m) = self.min {
            parts.push(format!(">= {m}"));
        }
        if let Some(m) = self.max {
            parts.push(format!("<= {m}"));
        }
        parts.join(", ")
    }

    fn in_bounds(&self, x: f64) -> bool {
        let target_ok = match self.target {
            Some(t) => (x - t).abs() <= self.tolerance.unwrap_or(0.0) + 1e-12,
            None => true,
        };
        target_ok && self.min.is_none_or(|m| x >= m) && self.max.is_none_or(|m| x <= m)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxesDef {
    model: Option<Vec<String>>,
    data_mode: Option<Vec<String>>,
    connection: Option<Vec<String>>,
    clients: Option<Vec<u32>>,
    streams: Option<Vec<u32>>,
    sharing: Option<Vec<String>>,
    high_priority: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct FigureDef {
    id: String,
    title: String,
    base: Table,
    #[serde(default)]
    axes: AxesDef,
    #[serde(default, rename = "check")]
    checks: Vec<Check>,
}

/// Coordinates of one cell, read back from its built scenario.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub model: String,
    pub data_mode: String,
    pub connection: String,
    pub clients: u32,
    pub streams: Option<u32>,
    pub sharing: String,
    pub high_priority: u32,
}

impl CellKey {
    fn of(s: &Scenario) -> Self {
        let (streams, sharing) = match s.sharing {
            SharingMode::MultiStream { max_streams } => (Some(max_streams), "multi_stream"),
            SharingMode::Mps => (None, "mps"),
            SharingMode::MultiContext => (None, "multi_context"),
        };
        CellKey {
            model: s.model.clone(),
            data_mode: s.data_mode.label().to_string(),
            connection: s.connection.to_string(),
            clients: s.clients.len() as u32,
            streams,
            sharing: sharing.to_string(),
            high_priority: s.clients.iter().filter(|c| c.priority == Priority::High).count() as u32,
        }
    }

    pub fn get(&self, axis: &str) -> Option<String> {
        Some(match axis {
            "model" => self.model.clone(),
            "data_mode" => self.data_mode.clone(),
            "connection" => self.connection.clone(),
            "clients" => self.clients.to_string(),
            "streams" => self.streams?.to_string(),
            "sharing" => self.sharing.clone(),
            "high_priority" => self.high_priority.to_string(),
            _ => return None,
        })
    }

    fn matches(&self, sel: &BTreeMap<String, Value>) -> bool {
        sel.iter().all(|(axis, v)| {
            let want = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            self.get(axis).is_some_and(|have| have.eq_ignore_ascii_case(&want))
        })
    }

    /// Series label from the axes that vary in the figure, clients excluded.
    fn series(&self, varying: &[&str]) -> String {
        let parts: Vec<String> = varying
            .iter()
            .filter(|a| **a != "clients")
            .filter_map(|a| self.get(a).map(|v| format!("{a}={v}")))
            .collect();
        if parts.is_empty() {
            "all".into()
        } else {
            parts.join(" ")
        }
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} clients={}",
            self.model, self.data_mode, self.connection, self.clients
        )?;
        match self.streams {
            Some(k) => write!(f, " streams={k}")?,
            None => write!(f, " {}", self.sharing)?,
        }
        if self.high_priority > 0 {
            write!(f, " high={}", self.high_priority)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub key: CellKey,
    pub scenario: Scenario,
}

#[derive(Debug, Clone)]
pub struct Figure {
    pub id: String,
    pub title: String,
    pub origin: String,
    pub cells: Vec<Cell>,
    pub checks: Vec<Check>,
    varying: Vec<&'static str>,
}

fn set(table: &mut Table, path: &[&str], value: Value) {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut t = table;
    for p in parents {
        t = t
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("section is a table");
    }
    t.insert(last.to_string(), value);
}

impl Figure {
    pub fn from_toml(text: &str, origin: &str) -> Result<Figure, PackError> {
        let def: FigureDef = toml::from_str(text).map_err(|e| PackError::Parse {
            origin: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        let ax = &def.axes;
        let strs = |v: &Option<Vec<String>>| -> Vec<Option<Value>> {
            v.as_ref().map_or(vec![None], |xs| {
                xs.iter().map(|x| Some(Value::String(x.clone()))).collect()
            })
        };
        let ints = |v: &Option<Vec<u32>>| -> Vec<Option<Value>> {
            v.as_ref().map_or(vec![None], |xs| {
                xs.iter().map(|&x| Some(Value::Integer(x.into()))).collect()
            })
        };
        let dims: Vec<(&'static str, Vec<Option<Value>>)> = vec![
            ("model", strs(&ax.model)),
            ("data_mode", strs(&ax.data_mode)),
            ("connection", strs(&ax.connection)),
            ("clients", ints(&ax.clients)),
            ("streams", ints(&ax.streams)),
            ("sharing", strs(&ax.sharing)),
            ("high_priority", ints(&ax.high_priority)),
        ];
        if dims.iter().any(|(_, v)| v.is_empty()) {
            return Err(PackError::Parse {
                origin: origin.to_string(),
                message: "an axis has no values".into(),
            });
        }
        if ax.streams.is_some() && ax.sharing.is_some() {
            return Err(PackError::Parse {
                origin: origin.to_string(),
                message: "axes `streams` and `sharing` are exclusive".into(),
            });
        }
        let varying: Vec<&'static str> = dims
            .iter()
            .filter(|(_, v)| v.len() > 1)
            .map(|(a, _)| *a)
            .collect();

        let mut cells = Vec::new();
        let total: usize = dims.iter().map(|(_, v)| v.len()).product();
        for index in 0..total {
            let mut rest = index;
            let mut table = def.base.clone();
            let mut label = Vec::new();
            for (axis, values) in dims.iter().rev() {
                let v = &values[rest % values.len()];
                rest /= values.len();
                let Some(v) = v else { continue };
                label.push(format!("{axis}={v}"));
                match *axis {
                    "clients" => set(&mut table, &["clients", "count"], v.clone()),
                    "high_priority" => set(&mut table, &["clients", "high_priority"], v.clone()),
                    "streams" => {
                        let mut t = Table::new();
                        t.insert("mode".into(), Value::String("multi_stream".into()));
                        t.insert("streams".into(), v.clone());
                        table.insert("sharing".into(), Value::Table(t));
                    }
                    "sharing" => {
                        let mut t = Table::new();
                        t.insert("mode".into(), v.clone());
                        table.insert("sharing".into(), Value::Table(t));
                    }
                    other => {
                        table.insert(other.to_string(), v.clone());
                    }
                }
            }
            label.reverse();
            let file = ScenarioFile::from_table(table, origin, Path::new("."))
                .map_err(|source| PackError::Cell {
                    origin: origin.to_string(),
                    cell: label.join(" "),
                    source: Box::new(source),
                })?;
            cells.push(Cell {
                key: CellKey::of(&file.scenario),
                scenario: file.scenario,
            });
        }
        let fig = Figure {
            id: def.id,
            title: def.title,
            origin: origin.to_string(),
            cells,
            checks: def.checks,
            varying,
        };
        for c in &fig.checks {
            fig.check_shape(c).map_err(|message| PackError::Check {
                origin: origin.to_string(),
                check: c.name.clone(),
                message,
            })?;
        }
        Ok(fig)
    }

    fn select(&self, sel: &BTreeMap<String, Value>) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i].key.matches(sel))
            .collect()
    }

    fn one(&self, sel: &BTreeMap<String, Value>) -> Result<usize, String> {
        match self.select(sel).as_slice() {
            [i] => Ok(*i),
            [] => Err(format!("selector {sel:?} matches no cell")),
            many => Err(format!("selector {sel:?} matches {} cells", many.len())),
        }
    }

    /// Cells of `sel` keyed and ordered by their value on `along`.
    fn series(&self, sel: &BTreeMap<String, Value>, along: &str) -> Result<Vec<(String, usize)>, String> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for i in self.select(sel) {
            let x = self.cells[i]
                .key
                .get(along)
                .ok_or_else(|| format!("cells have no `{along}` coordinate"))?;
            if out.iter().any(|(y, _)| *y == x) {
                return Err(format!("selector {sel:?} has two cells at {along}={x}"));
            }
            out.push((x, i));
        }
        if NUMERIC_AXES.contains(&along) {
            out.sort_by_key(|(x, _)| x.parse::<u64>().unwrap_or(u64::MAX));
        } else {
            out.sort();
        }
        if out.len() < 2 {
            return Err(format!("selector {sel:?} gives fewer than two points along `{along}`"));
        }
        Ok(out)
    }

    fn check_shape(&self, c: &Check) -> Result<(), String> {
        for axis in c.a.keys().chain(c.b.keys()) {
            if !AXES.contains(&axis.as_str()) {
                return Err(format!("unknown axis `{axis}` in selector"));
            }
        }
        let base_metric = c.metric.strip_prefix("fraction.");
        match base_metric {
            Some(stage) => {
                let ok = ["request", "copy", "preprocess", "inference", "response", "data"];
                if !ok.contains(&stage) {
                    return Err(format!("unknown fraction `{stage}`"));
                }
                if c.stat != Stat::Mean {
                    return Err("fractions only support stat = \"mean\"".into());
                }
            }
            None if !METRICS.contains(&c.metric.as_str()) => {
                return Err(format!("unknown metric `{}`", c.metric));
            }
            None => {}
        }
        if c.target.is_some() != c.tolerance.is_some()
            && !matches!(
                c.kind,
                CheckKind::Band | CheckKind::EachWithin | CheckKind::EachLe | CheckKind::NonIncreasing
            )
        {
            return Err("`target` and `tolerance` go together".into());
        }
        match c.kind {
            CheckKind::Band | CheckKind::EachWithin if c.tolerance.is_none() => {
                return Err("needs `tolerance`".into());
            }
            CheckKind::Value
            | CheckKind::Saving
            | CheckKind::Ratio
            | CheckKind::Difference
            | CheckKind::Growth
                if c.target.is_none() && c.min.is_none() && c.max.is_none() =>
            {
                return Err("needs `target`, `min` or `max`".into());
            }
            _ => {}
        }
        if c.kind.is_series() {
            let along = c.along.as_deref().ok_or("needs `along`")?;
            if !AXES.contains(&along) {
                return Err(format!("unknown axis `{along}`"));
            }
            let a = self.series(&c.a, along)?;
            if c.kind.is_pair() {
                let b = self.series(&c.b, along)?;
                let xa: Vec<&String> = a.iter().map(|(x, _)| x).collect();
                let xb: Vec<&String> = b.iter().map(|(x, _)| x).collect();
                if xa != xb {
                    return Err(format!("`a` and `b` cover different points along `{along}`"));
                }
            }
        } else {
            self.one(&c.a)?;
            if c.kind.is_pair() {
                self.one(&c.b)?;
            }
        }
        Ok(())
    }

    /// Replace the model constants of every cell.
    pub fn set_params(&mut self, params: &crate::transport::ParamSet) {
        for c in &mut self.cells {
            c.scenario.params = params.clone();
        }
    }

    /// Run every cell in parallel and evaluate the checks.
    pub fn run(&self) -> FigureRun {
        let results: Vec<CellResult> = self
            .cells
            .par_iter()
            .map(|c| {
                let out = run(&c.scenario)
                    .map_err(|e| e.to_string())
                    .and_then(|t| analyse(&t).map(|s| (t, s)).map_err(|e| e.to_string()));
                match out {
                    Ok((traces, stats)) => CellResult {
                        key: c.key.clone(),
                        traces: Some(traces),
                        stats: Some(stats),
                        error: None,
                    },
                    Err(e) => CellResult {
                        key: c.key.clone(),
                        traces: None,
                        stats: None,
                        error: Some(e),
                    },
                }
            })
            .collect();
        let checks = self.checks.iter().map(|c| self.evaluate(c, &results)).collect();
        FigureRun {
            id: self.id.clone(),
            title: self.title.clone(),
            varying: self.varying.clone(),
            cells: results,
            checks,
        }
    }

    fn evaluate(&self, c: &Check, cells: &[CellResult]) -> CheckOutcome {
        let outcome = |passed: bool, observed: String| CheckOutcome {
            name: c.name.clone(),
            criterion: c.criterion,
            informational: c.informational,
            passed,
            observed,
            expected: expected_text(c),
        };
        match self.try_evaluate(c, cells) {
            Ok((passed, observed)) => outcome(passed, observed),
            Err(e) => outcome(false, format!("error: {e}")),
        }
    }

    fn try_evaluate(&self, c: &Check, cells: &[CellResult]) -> Result<(bool, String), String> {
        let val = |i: usize| metric_value(&cells[i], c);
        if !c.kind.is_series() {
            let a = val(self.one(&c.a)?)?;
            let b = if c.kind.is_pair() {
                Some(val(self.one(&c.b)?)?)
            } else {
                None
            };
            let (x, shown) = match (c.kind, b) {
                (CheckKind::Value, _) => (a, format!("{a:.4}")),
                (CheckKind::Saving, Some(b)) => {
                    let x = 1.0 - a / b;
                    (x, format!("{x:.4} (a {a:.4}, b {b:.4})"))
                }
                (CheckKind::Ratio, Some(b)) => {
                    let x = a / b;
                    (x, format!("{x:.4} (a {a:.4}, b {b:.4})"))
                }
                (CheckKind::Difference, Some(b)) => {
                    let x = a - b;
                    (x, format!("{x:.4} (a {a:.4}, b {b:.4})"))
                }
                (CheckKind::Less, Some(b)) => return Ok((a < b, format!("a {a:.4}, b {b:.4}"))),
                _ => unreachable!("checked at load"),
            };
            return Ok((x.is_finite() && c.in_bounds(x), shown));
        }
        let along = c.along.as_deref().expect("checked at load");
        let a: Vec<(String, f64)> = self
            .series(&c.a, along)?
            .into_iter()
            .map(|(x, i)| val(i).map(|v| (x, v)))
            .collect::<Result<_, _>>()?;
        let points = |s: &[(String, f64)]| {
            s.iter()
                .map(|(x, v)| format!("{x}:{v:.4}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let tol = c.tolerance.unwrap_or(0.0);
        match c.kind {
            CheckKind::NonIncreasing => {
                let ok = a.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + tol));
                Ok((ok, points(&a)))
            }
            CheckKind::Band => {
                let first = a[0].1;
                let worst = a.iter().map(|(_, v)| (v / first - 1.0).abs()).fold(0.0, f64::max);
                Ok((worst <= tol, format!("max deviation {worst:.4}; {}", points(&a))))
            }
            CheckKind::Growth => {
                let g = a[a.len() - 1].1 / a[0].1;
                Ok((g.is_finite() && c.in_bounds(g), format!("{g:.4}; {}", points(&a))))
            }
            CheckKind::EachLe | CheckKind::EachWithin => {
                let b: Vec<(String, f64)> = self
                    .series(&c.b, along)?
                    .into_iter()
                    .map(|(x, i)| val(i).map(|v| (x, v)))
                    .collect::<Result<_, _>>()?;
                let mut ok = true;
                let mut shown = Vec::new();
                for ((x, va), (_, vb)) in a.iter().zip(&b) {
                    let fine = if c.kind == CheckKind::EachLe {
                        *va <= vb * (1.0 + tol)
                    } else {
                        (va / vb - 1.0).abs() <= tol
                    };
                    ok &= fine;
                    shown.push(format!("{x}:{va:.4}/{vb:.4}{}", if fine { "" } else { "!" }));
                }
                Ok((ok, shown.join(" ")))
            }
            _ => unreachable!("series kinds only"),
        }
    }
}

fn expected_text(c: &Check) -> String {
    let tol = c.tolerance.unwrap_or(0.0);
    match c.kind {
        CheckKind::Less => "a < b".into(),
        CheckKind::NonIncreasing if tol > 0.0 => {
            format!("non-increasing along {} (rises <= {tol})", c.along.as_deref().unwrap_or("?"))
        }
        CheckKind::NonIncreasing => format!("non-increasing along {}", c.along.as_deref().unwrap_or("?")),
        CheckKind::Band => format!("within {tol} of first point"),
        CheckKind::EachLe if tol > 0.0 => format!("a <= b * {} at every point", 1.0 + tol),
        CheckKind::EachLe => "a <= b at every point".into(),
        CheckKind::EachWithin => format!("|a/b - 1| <= {tol} at every point"),
        _ => c.bounds_text(),
    }
}

fn metric_value(cell: &CellResult, c: &Check) -> Result<f64, String> {
    let stats = cell
        .stats
        .as_ref()
        .ok_or_else(|| format!("cell {} failed: {}", cell.key, cell.error.as_deref().unwrap_or("?")))?;
    let class = match c.class {
        Class::Overall => Some(&stats.overall),
        Class::High => stats.high.as_ref(),
        Class::Normal => stats.normal.as_ref(),
    }
    .ok_or_else(|| format!("cell {} has no {:?} requests", cell.key, c.class))?;
    if let Some(stage) = c.metric.strip_prefix("fraction.") {
        let fr = fraction_report(class, View::Folded).map_err(|e| e.to_string())?;
        return Ok(if stage == "data" {
            fr.data_movement()
        } else {
            fr.fraction(stage)
        });
    }
    let s = class.get(&c.metric);
    Ok(match c.stat {
        Stat::Mean => s.mean / 1e6,
        Stat::P50 => s.p50 / 1e6,
        Stat::P99 => s.p99 / 1e6,
        Stat::Stddev => s.stddev / 1e6,
        Stat::Cov => s.cov,
    })
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub key: CellKey,
    pub traces: Option<TraceSet>,
    pub stats: Option<AggregateStats>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub criterion: u32,
    pub informational: bool,
    pub passed: bool,
    pub observed: String,
    pub expected: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match (self.informational, self.passed) {
            (true, true) => "info",
            (true, false) => "INFO-MISS",
            (false, true) => "PASS",
            (false, false) => "FAIL",
        };
        write!(
            f,
            "{status} [C{}] {}: {} (expected {})",
            self.criterion, self.name, self.observed, self.expected
        )
    }
}

#[derive(Debug, Clone)]
pub struct FigureRun {
    pub id: String,
    pub title: String,
    pub cells: Vec<CellResult>,
    pub checks: Vec<CheckOutcome>,
    varying: Vec<&'static str>,
}

pub const CELLS_CSV_HEADER_PREFIX: &str = "figure,cell,";

impl FigureRun {
    pub fn failed_cells(&self) -> Vec<&CellResult> {
        self.cells.iter().filter(|c| c.error.is_some()).collect()
    }

    /// All cells ran and every counted check passed.
    pub fn passed(&self) -> bool {
        self.failed_cells().is_empty()
            && self.checks.iter().all(|c| c.informational || c.passed)
    }

    pub fn cells_csv(&self) -> String {
        let mut out = format!("{CELLS_CSV_HEADER_PREFIX}{PLOT_CSV_HEADER}\n");
        for c in &self.cells {
            if let Some(stats) = &c.stats {
                let series = c.key.series(&self.varying).replace(',', ";");
                writeln!(
                    out,
                    "{},{},{}",
                    self.id,
                    c.key.to_string().replace(',', ";"),
                    plot_row(&series, c.key.clients as usize, stats)
                )
                .expect("string write");
            }
        }
        out
    }

    pub fn checks_text(&self) -> String {
        let mut out = format!("{} {}\n", self.id, self.title);
        for c in self.failed_cells() {
            writeln!(out, "FAIL cell {}: {}", c.key, c.error.as_deref().unwrap_or("?")).expect("string write");
        }
        for c in &self.checks {
            writeln!(out, "{c}").expect("string write");
        }
        out
    }

    /// Write `cells.csv` and `checks.txt` under `dir/<id>/`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let d = dir.join(&self.id);
        std::fs::create_dir_all(&d)?;
        std::fs::write(d.join("cells.csv"), self.cells_csv())?;
        std::fs::write(d.join("checks.txt"), self.checks_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"
id = "mini"
title = "two transports, two client counts"

[base]
model = "MobileNetV3"
data_mode = "raw"
warmup = 1
[base.clients]
requests = 4

[axes]
connection = ["tcp", "gdr"]
clients = [1, 2]

[[check]]
name = "gdr_faster"
criterion = 4
kind = "less"
metric = "total"
a = { connection = "gdr", clients = 1 }
b = { connection = "tcp", clients = 1 }

[[check]]
name = "tcp_grows"
criterion = 5
kind = "growth"
metric = "total"
a = { connection = "tcp" }
along = "clients"
min = 1.0
"#;

    #[test]
    fn expands_axes_into_cells() {
        let f = Figure::from_toml(MINI, "mini").unwrap();
        assert_eq!(f.cells.len(), 4);
        assert_eq!(f.cells[0].key.connection, "tcp");
        assert_eq!(f.cells[1].key.clients, 2);
        assert_eq!(f.varying, vec!["connection", "clients"]);
    }

    #[test]
    fn runs_and_checks() {
        let r = Figure::from_toml(MINI, "mini").unwrap().run();
        assert!(r.passed(), "{}", r.checks_text());
        let csv = r.cells_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("figure,cell,series,clients,"));
        assert!(r.checks_text().contains("PASS [C4] gdr_faster"));
    }

    #[test]
    fn bad_selector_rejected_at_load() {
        let text = MINI.replace("clients = 1 }\nb", "clients = 3 }\nb");
        let e = Figure::from_toml(&text, "mini").unwrap_err();
        assert!(e.to_string().contains("matches no cell"), "{e}");
        let text = MINI.replace("metric = \"total\"\na = { connection = \"tcp\" }", "metric = \"latency\"\na = { connection = \"tcp\" }");
        assert!(Figure::from_toml(&text, "mini").is_err());
    }

    #[test]
    fn unknown_figure_lists_ids() {
        let e = load("nosuch").unwrap_err().to_string();
        assert!(e.contains("fig5") && e.contains("fig13"), "{e}");
    }

    #[test]
    fn shipped_pack_loads() {
        let figs = load_all().unwrap();
        assert_eq!(figs.len(), 9);
        for f in &figs {
            assert!(!f.cells.is_empty());
            assert!(!f.checks.is_empty(), "{}", f.id);
        }
    }

    #[test]
    fn bounds() {
        let mut c: Check = toml::from_str(
            "name='x'\ncriterion=1\nkind='value'\nmetric='total'\ntarget=1.0\ntolerance=0.1",
        )
        .unwrap();
        assert!(c.in_bounds(1.1) && c.in_bounds(0.9) && !c.in_bounds(1.2));
        c.target = None;
        c.min = Some(2.0);
        assert!(c.in_bounds(2.0) && !c.in_bounds(1.9));
    }
}
