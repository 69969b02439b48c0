//! Grid documents, matrix and trace files, DOT export and run manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::GainMatrix;
use crate::linear::{AcBusParams, CostWeights, DcLineParams, Disturbance, LinearGridParams, StateLabel, StateSpace};
use crate::poset::{BlockPartition, Poset};
use crate::sim::Trace;
use crate::topology::{connected_components, BusId, BusKind, Converter, GridGraph, Line, LocalLoop, Orientation};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid grid: {0}")]
    Invariant(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl IoError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        IoError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}

/// Parses JSON, reporting the key path of schema errors.
pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, IoError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        match inner.classify() {
            serde_json::error::Category::Data => IoError::Schema { path, message: inner.to_string() },
            _ => IoError::Parse(inner.to_string()),
        }
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseQuantities {
    pub power_mva: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ac_voltage_kv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dc_voltage_kv: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationDoc {
    AcToDc,
    DcToAc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterDoc {
    pub name: String,
    pub ac_bus: u32,
    pub dc_bus: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<OrientationDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loops: Vec<LoopDoc>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopDoc {
    ReactivePower,
    DcVoltage,
    PowerTransferDcSide,
    PowerTransferAcSide,
}

impl From<LoopDoc> for LocalLoop {
    fn from(l: LoopDoc) -> Self {
        match l {
            LoopDoc::ReactivePower => LocalLoop::ReactivePower,
            LoopDoc::DcVoltage => LocalLoop::DcVoltage,
            LoopDoc::PowerTransferDcSide => LocalLoop::PowerTransferDcSide,
            LoopDoc::PowerTransferAcSide => LocalLoop::PowerTransferAcSide,
        }
    }
}

impl From<LocalLoop> for LoopDoc {
    fn from(l: LocalLoop) -> Self {
        match l {
            LocalLoop::ReactivePower => LoopDoc::ReactivePower,
            LocalLoop::DcVoltage => LoopDoc::DcVoltage,
            LocalLoop::PowerTransferDcSide => LoopDoc::PowerTransferDcSide,
            LocalLoop::PowerTransferAcSide => LoopDoc::PowerTransferAcSide,
        }
    }
}

/// Per-element parameters. Lines are keyed `"a-b"`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDoc {
    #[serde(default)]
    pub ac_buses: BTreeMap<u32, AcBusParams>,
    #[serde(default)]
    pub ac_lines: BTreeMap<String, f64>,
    #[serde(default)]
    pub dc_buses: BTreeMap<u32, f64>,
    #[serde(default)]
    pub dc_lines: BTreeMap<String, DcLineParams>,
    #[serde(default)]
    pub converters: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDocument {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseQuantities>,
    pub ac_buses: Vec<u32>,
    pub dc_buses: Vec<u32>,
    #[serde(default)]
    pub ac_lines: Vec<[u32; 2]>,
    #[serde(default)]
    pub dc_lines: Vec<[u32; 2]>,
    pub converters: Vec<ConverterDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostWeights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Disturbance>,
}

#[derive(Clone, Debug)]
pub struct ParsedGrid {
    pub document: GridDocument,
    pub grid: GridGraph,
    pub params: Option<LinearGridParams>,
    pub cost: CostWeights,
    pub disturbance: Disturbance,
}

impl ParsedGrid {
    pub fn require_params(&self) -> Result<&LinearGridParams, IoError> {
        self.params
            .as_ref()
            .ok_or_else(|| IoError::Schema { path: "params".into(), message: "electrical parameters required".into() })
    }
}

fn line_key_of(key: &str, path: &str) -> Result<(BusId, BusId), IoError> {
    let bad = || IoError::Schema { path: path.into(), message: format!("line key {key:?} is not of the form \"a-b\"") };
    let (a, b) = key.split_once('-').ok_or_else(bad)?;
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    Ok(Line::new(BusId(a), BusId(b)).key())
}

fn params_from_doc(doc: &ParamsDoc) -> Result<LinearGridParams, IoError> {
    let mut p = LinearGridParams::default();
    p.ac_buses = doc.ac_buses.iter().map(|(k, v)| (BusId(*k), *v)).collect();
    p.dc_buses = doc.dc_buses.iter().map(|(k, v)| (BusId(*k), *v)).collect();
    for (k, v) in &doc.ac_lines {
        p.ac_lines.insert(line_key_of(k, &format!("params.ac_lines.{k}"))?, *v);
    }
    for (k, v) in &doc.dc_lines {
        p.dc_lines.insert(line_key_of(k, &format!("params.dc_lines.{k}"))?, *v);
    }
    p.converters = doc.converters.clone();
    Ok(p)
}

fn line_name(key: &(BusId, BusId)) -> String {
    format!("{}-{}", key.0, key.1)
}

pub fn params_to_doc(p: &LinearGridParams) -> ParamsDoc {
    ParamsDoc {
        ac_buses: p.ac_buses.iter().map(|(k, v)| (k.0, *v)).collect(),
        ac_lines: p.ac_lines.iter().map(|(k, v)| (line_name(k), *v)).collect(),
        dc_buses: p.dc_buses.iter().map(|(k, v)| (k.0, *v)).collect(),
        dc_lines: p.dc_lines.iter().map(|(k, v)| (line_name(k), *v)).collect(),
        converters: p.converters.clone(),
    }
}

impl GridDocument {
    pub fn to_grid(&self) -> Result<GridGraph, IoError> {
        let line = |l: &[u32; 2]| Line::new(BusId(l[0]), BusId(l[1]));
        let converters = self
            .converters
            .iter()
            .map(|c| {
                let o = match c.orientation {
                    Some(OrientationDoc::AcToDc) => Orientation::AcToDc,
                    Some(OrientationDoc::DcToAc) => Orientation::DcToAc,
                    None => Orientation::Unassigned,
                };
                Converter::new(c.name.clone(), BusId(c.ac_bus), BusId(c.dc_bus))
                    .oriented(o)
                    .with_loops(c.loops.iter().map(|&l| l.into()))
            })
            .collect();
        GridGraph::new(
            self.ac_buses.iter().map(|&b| BusId(b)),
            self.dc_buses.iter().map(|&b| BusId(b)),
            self.ac_lines.iter().map(line).collect(),
            self.dc_lines.iter().map(line).collect(),
            converters,
        )
        .map_err(|e| IoError::Invariant(e.to_string()))
    }

    /// Same document with the converter orientations of `grid`.
    pub fn with_orientations_of(&self, grid: &GridGraph) -> GridDocument {
        let mut doc = self.clone();
        for c in &mut doc.converters {
            if let Some(g) = grid.converters().iter().find(|g| g.name == c.name) {
                c.orientation = match g.orientation {
                    Orientation::AcToDc => Some(OrientationDoc::AcToDc),
                    Orientation::DcToAc => Some(OrientationDoc::DcToAc),
                    Orientation::Unassigned => None,
                };
            }
        }
        doc
    }
}

pub fn parse_grid(text: &str) -> Result<ParsedGrid, IoError> {
    let document: GridDocument = from_json(text)?;
    let grid = document.to_grid()?;
    let params = match &document.params {
        Some(p) => {
            let p = params_from_doc(p)?;
            p.validate(&grid).map_err(|e| IoError::Invariant(e.to_string()))?;
            Some(p)
        }
        None => None,
    };
    let cost = document.cost.clone().unwrap_or_default();
    let disturbance = document.disturbance.unwrap_or_default();
    Ok(ParsedGrid { document, grid, params, cost, disturbance })
}

pub fn load_grid(path: &Path) -> Result<ParsedGrid, IoError> {
    parse_grid(&read_text(path)?)
}

/// Dense matrix, row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec<f64>>,
}

impl From<&DMatrix<f64>> for MatrixDoc {
    fn from(m: &DMatrix<f64>) -> Self {
        MatrixDoc {
            rows: m.nrows(),
            cols: m.ncols(),
            data: (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect(),
        }
    }
}

impl MatrixDoc {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>, IoError> {
        if self.data.len() != self.rows || self.data.iter().any(|r| r.len() != self.cols) {
            return Err(IoError::Invariant(format!("matrix data does not match {}x{}", self.rows, self.cols)));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |r, c| self.data[r][c]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpaceDoc {
    pub state_labels: Vec<StateLabel>,
    pub input_labels: Vec<String>,
    pub state_partition: BlockPartition,
    pub input_partition: BlockPartition,
    pub a: MatrixDoc,
    pub b: MatrixDoc,
    pub f: MatrixDoc,
    pub c: MatrixDoc,
    pub d: MatrixDoc,
}

impl From<&StateSpace> for StateSpaceDoc {
    fn from(ss: &StateSpace) -> Self {
        StateSpaceDoc {
            state_labels: ss.state_labels.clone(),
            input_labels: ss.input_labels.clone(),
            state_partition: ss.state_partition.clone(),
            input_partition: ss.input_partition.clone(),
            a: (&ss.a).into(),
            b: (&ss.b).into(),
            f: (&ss.f).into(),
            c: (&ss.c).into(),
            d: (&ss.d).into(),
        }
    }
}

impl StateSpaceDoc {
    pub fn to_statespace(&self) -> Result<StateSpace, IoError> {
        let ss = StateSpace {
            a: self.a.to_matrix()?,
            b: self.b.to_matrix()?,
            f: self.f.to_matrix()?,
            c: self.c.to_matrix()?,
            d: self.d.to_matrix()?,
            state_labels: self.state_labels.clone(),
            input_labels: self.input_labels.clone(),
            state_partition: self.state_partition.clone(),
            input_partition: self.input_partition.clone(),
        };
        ss.check_invariants().map_err(|e| IoError::Invariant(e.to_string()))?;
        Ok(ss)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosetDoc {
    pub labels: Vec<String>,
    /// Pairs `[a, b]` with `a ⪯ b`, `a ≠ b`.
    pub relations: Vec<[usize; 2]>,
}

impl From<&Poset> for PosetDoc {
    fn from(p: &Poset) -> Self {
        let mut relations = Vec::new();
        for a in 0..p.len() {
            for b in 0..p.len() {
                if a != b && p.leq(a, b) {
                    relations.push([a, b]);
                }
            }
        }
        PosetDoc { labels: p.labels().to_vec(), relations }
    }
}

impl PosetDoc {
    pub fn to_poset(&self) -> Result<Poset, IoError> {
        let edges: Vec<(usize, usize)> = self.relations.iter().map(|r| (r[0], r[1])).collect();
        Poset::from_dag(self.labels.clone(), &edges).map_err(|e| IoError::Invariant(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerDoc {
    pub mode: String,
    pub k: MatrixDoc,
    pub input_labels: Vec<String>,
    pub state_labels: Vec<String>,
    pub row_partition: BlockPartition,
    pub col_partition: BlockPartition,
    pub row_order: Vec<usize>,
    pub col_order: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_structure: Option<PosetDoc>,
    pub riccati_residual: f64,
    pub closed_loop_spectral_abscissa: f64,
    pub h2_norm: f64,
}

impl ControllerDoc {
    pub fn gain(&self) -> Result<GainMatrix, IoError> {
        let k = self.k.to_matrix()?;
        let perm_ok = |order: &[usize], n: usize| {
            let set: BTreeSet<usize> = order.iter().copied().collect();
            order.len() == n && set.len() == n && set.iter().all(|&i| i < n)
        };
        if !perm_ok(&self.row_order, k.nrows()) || !perm_ok(&self.col_order, k.ncols()) {
            return Err(IoError::Invariant("row_order/col_order must be permutations matching K".into()));
        }
        if self.row_partition.dim() != k.nrows() || self.col_partition.dim() != k.ncols() {
            return Err(IoError::Invariant("gain partitions do not match K".into()));
        }
        Ok(GainMatrix {
            k,
            row_partition: self.row_partition.clone(),
            col_partition: self.col_partition.clone(),
            row_order: self.row_order.clone(),
            col_order: self.col_order.clone(),
            declared_structure: self.declared_structure.as_ref().map(|p| p.to_poset()).transpose()?,
        })
    }
}

/// Initial state either as a full vector or by state label (others 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialStateDoc {
    Vector(Vec<f64>),
    ByLabel(BTreeMap<String, f64>),
}

impl InitialStateDoc {
    pub fn resolve(&self, ss: &StateSpace) -> Result<DVector<f64>, IoError> {
        match self {
            InitialStateDoc::Vector(v) if v.len() == ss.n_states() => Ok(DVector::from_column_slice(v)),
            InitialStateDoc::Vector(v) => {
                Err(IoError::Invariant(format!("x0 has {} entries, system has {} states", v.len(), ss.n_states())))
            }
            InitialStateDoc::ByLabel(m) => {
                let mut x = DVector::zeros(ss.n_states());
                for (label, v) in m {
                    let i = ss.state_index(label).ok_or_else(|| IoError::Schema {
                        path: label.clone(),
                        message: "no state with this label".into(),
                    })?;
                    x[i] = *v;
                }
                Ok(x)
            }
        }
    }
}

/// CSV header: `t`, state labels, input labels, output labels.
pub fn trace_to_csv(trace: &Trace) -> Result<String, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(trace.state_labels.iter().cloned());
    if trace.inputs.is_some() {
        header.extend(trace.input_labels.iter().cloned());
    }
    if trace.outputs.is_some() {
        header.extend(trace.output_labels.iter().cloned());
    }
    let csv_err = |e: csv::Error| IoError::Io { path: "<csv>".into(), message: e.to_string() };
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..trace.len() {
        let mut rec = vec![trace.times[k].to_string()];
        rec.extend(trace.states.row(k).iter().map(f64::to_string));
        for m in [&trace.inputs, &trace.outputs].into_iter().flatten() {
            rec.extend(m.row(k).iter().map(f64::to_string));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| IoError::Io { path: "<csv>".into(), message: e.to_string() })?;
    Ok(String::from_utf8(bytes).expect("csv of numbers and labels is utf-8"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DotLevel {
    Bus,
    Subgrid,
}

fn bus_node(kind: BusKind, b: BusId) -> String {
    match kind {
        BusKind::Ac => format!("ac{b}"),
        BusKind::Dc => format!("dc{b}"),
    }
}

fn converter_edge(out: &mut String, from: &str, to: &str, c: &Converter) {
    match c.orientation {
        Orientation::AcToDc => writeln!(out, "  {from} -> {to} [label=\"{}\"];", c.name),
        Orientation::DcToAc => writeln!(out, "  {to} -> {from} [label=\"{}\"];", c.name),
        Orientation::Unassigned => writeln!(out, "  {from} -> {to} [label=\"{}\", dir=none, style=dashed];", c.name),
    }
    .expect("writing to a String");
}

/// Graphviz text. Converters are directed edges when oriented; lines and
/// unoriented converters carry `dir=none`.
pub fn export_dot(grid: &GridGraph, level: DotLevel) -> String {
    let mut out = String::from("digraph grid {\n");
    match level {
        DotLevel::Bus => {
            for &b in grid.ac_buses() {
                writeln!(out, "  {} [shape=circle, label=\"AC {b}\"];", bus_node(BusKind::Ac, b)).unwrap();
            }
            for &b in grid.dc_buses() {
                writeln!(out, "  {} [shape=box, label=\"DC {b}\"];", bus_node(BusKind::Dc, b)).unwrap();
            }
            for (kind, lines) in [(BusKind::Ac, grid.ac_lines()), (BusKind::Dc, grid.dc_lines())] {
                for l in lines {
                    writeln!(out, "  {} -> {} [dir=none];", bus_node(kind, l.from), bus_node(kind, l.to)).unwrap();
                }
            }
            for c in grid.converters() {
                converter_edge(&mut out, &bus_node(BusKind::Ac, c.ac_bus), &bus_node(BusKind::Dc, c.dc_bus), c);
            }
        }
        DotLevel::Subgrid => {
            let map = connected_components(grid);
            for k in 1..=map.ac_count {
                writeln!(out, "  AC{k} [shape=circle];").unwrap();
            }
            for k in 1..=map.dc_count {
                writeln!(out, "  DC{k} [shape=box];").unwrap();
            }
            for c in grid.converters() {
                let ac = format!("AC{}", map.ac_component[&c.ac_bus] + 1);
                let dc = format!("DC{}", map.dc_component[&c.dc_bus] + 1);
                converter_edge(&mut out, &ac, &dc, c);
            }
        }
    }
    out.push_str("}\n");
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, IoError> {
        let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
        Ok(FileDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
    }
}

/// What a CLI run consumed and produced. No timestamps, so identical runs
/// write identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: Vec<String>,
    pub inputs: Vec<FileDigest>,
    pub seed: u64,
    pub tolerance: Option<f64>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: Vec<String>, seed: u64, tolerance: Option<f64>) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            inputs: Vec::new(),
            seed,
            tolerance,
            outputs: Vec::new(),
        }
    }

    pub fn manifest_path(output: &Path) -> std::path::PathBuf {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}
