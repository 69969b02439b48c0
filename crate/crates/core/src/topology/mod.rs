//! Physical AC/DC network graph, subgrid decomposition and converter orientation.
//!
//! A grid is a set of AC and DC buses joined by same-kind lines, plus
//! converters that each join one AC bus to one DC bus. Connected same-kind
//! components are *subgrids*; converters between subgrids induce the
//! bipartite quotient graph whose orientation decides the information
//! structure of the whole system.

mod acyclic;
mod components;
mod orient;
mod quotient;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use acyclic::{
    acyclic_orientation_count, count_acyclic_orientations, count_acyclic_orientations_bounded,
    enumerate_acyclic_orientations, enumerate_orientations_of, is_acyclic_digraph, DEFAULT_VERTEX_LIMIT,
    ENUMERATION_EDGE_LIMIT,
};
pub use components::{connected_components, SubgridMap};
pub use orient::{infer_converter_direction, orient_converters, InferredDirection, OrientationStrategy};
pub use quotient::{build_quotient_graph, QuotientGraph};

/// Bus identifier, unique across AC and DC buses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BusKind {
    Ac,
    Dc,
}

impl fmt::Display for BusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BusKind::Ac => f.write_str("AC"),
            BusKind::Dc => f.write_str("DC"),
        }
    }
}

/// Direction of information flow through a converter.
///
/// `AcToDc` means the converter (and its control input) belongs to the AC
/// side and influences the DC side, not the other way round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    AcToDc,
    DcToAc,
    Unassigned,
}

impl Orientation {
    pub fn is_assigned(self) -> bool {
        !matches!(self, Orientation::Unassigned)
    }

    pub fn reversed(self) -> Orientation {
        match self {
            Orientation::AcToDc => Orientation::DcToAc,
            Orientation::DcToAc => Orientation::AcToDc,
            Orientation::Unassigned => Orientation::Unassigned,
        }
    }
}

/// Local control loops a converter may run around its current setpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LocalLoop {
    /// `i_q` regulates AC-side reactive power (or voltage magnitude).
    ReactivePower,
    /// `i_d` regulates the DC-side voltage.
    DcVoltage,
    /// `i_d` regulates power transfer measured on the DC side.
    PowerTransferDcSide,
    /// `i_d` regulates power transfer measured on the AC side.
    PowerTransferAcSide,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Converter {
    pub name: String,
    pub ac_bus: BusId,
    pub dc_bus: BusId,
    pub orientation: Orientation,
    pub local_loops: BTreeSet<LocalLoop>,
}

impl Converter {
    pub fn new(name: impl Into<String>, ac_bus: BusId, dc_bus: BusId) -> Self {
        Converter {
            name: name.into(),
            ac_bus,
            dc_bus,
            orientation: Orientation::Unassigned,
            local_loops: BTreeSet::new(),
        }
    }

    pub fn oriented(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn with_loops(mut self, loops: impl IntoIterator<Item = LocalLoop>) -> Self {
        self.local_loops = loops.into_iter().collect();
        self
    }
}

/// A line between two same-kind buses. `from`/`to` fix the reference
/// direction of the line current; the line itself is undirected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
}

impl Line {
    pub fn new(from: BusId, to: BusId) -> Self {
        Line { from, to }
    }

    /// Unordered key `(min, max)`.
    pub fn key(&self) -> (BusId, BusId) {
        if self.from <= self.to {
            (self.from, self.to)
        } else {
            (self.to, self.from)
        }
    }
}

impl fmt::Display for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.from, self.to)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("bus {0} is declared more than once")]
    DuplicateBus(BusId),
    #[error("{kind} line {line} references unknown or wrong-kind bus {bus}")]
    LineKindMismatch { kind: BusKind, line: Line, bus: BusId },
    #[error("line {0} is a self-loop")]
    SelfLoopLine(Line),
    #[error("line {0} is declared more than once")]
    DuplicateLine(Line),
    #[error("converter {converter} must join one AC bus and one DC bus (got {ac_bus} and {dc_bus})")]
    ConverterKindMismatch { converter: String, ac_bus: BusId, dc_bus: BusId },
    #[error("converters {first} and {second} join the same bus pair")]
    DuplicateConverter { first: String, second: String },
    #[error("converter name {0} is used more than once")]
    DuplicateConverterName(String),
    #[error("converters between {a} and {b} are oriented in opposite directions")]
    CoOrientationConflict { a: String, b: String },
    #[error("fixed converter directions admit no acyclic orientation")]
    CycleForced,
    #[error("converter {0} runs local loops on both sides and cannot be oriented")]
    NotOrientable(String),
    #[error("converter {converter} is fixed {declared:?} but its local loops imply {implied:?}")]
    LoopConflict { converter: String, declared: Orientation, implied: Orientation },
    #[error("graph has {size} {what}, above the limit of {limit}")]
    SizeLimit { what: &'static str, size: usize, limit: usize },
}

/// The physical AC/DC network.
#[derive(Clone, Debug, PartialEq)]
pub struct GridGraph {
    ac_buses: BTreeSet<BusId>,
    dc_buses: BTreeSet<BusId>,
    ac_lines: Vec<Line>,
    dc_lines: Vec<Line>,
    converters: Vec<Converter>,
}

impl GridGraph {
    pub fn new(
        ac_buses: impl IntoIterator<Item = BusId>,
        dc_buses: impl IntoIterator<Item = BusId>,
        ac_lines: Vec<Line>,
        dc_lines: Vec<Line>,
        converters: Vec<Converter>,
    ) -> Result<Self, TopologyError> {
        let mut all = BTreeSet::new();
        let mut ac = BTreeSet::new();
        for b in ac_buses {
            if !all.insert(b) {
                return Err(TopologyError::DuplicateBus(b));
            }
            ac.insert(b);
        }
        let mut dc = BTreeSet::new();
        for b in dc_buses {
            if !all.insert(b) {
                return Err(TopologyError::DuplicateBus(b));
            }
            dc.insert(b);
        }
        check_lines(&ac_lines, &ac, BusKind::Ac)?;
        check_lines(&dc_lines, &dc, BusKind::Dc)?;

        let mut pairs: BTreeMap<(BusId, BusId), &str> = BTreeMap::new();
        let mut names = BTreeSet::new();
        for c in &converters {
            if !ac.contains(&c.ac_bus) || !dc.contains(&c.dc_bus) {
                return Err(TopologyError::ConverterKindMismatch {
                    converter: c.name.clone(),
                    ac_bus: c.ac_bus,
                    dc_bus: c.dc_bus,
                });
            }
            if let Some(first) = pairs.insert((c.ac_bus, c.dc_bus), &c.name) {
                return Err(TopologyError::DuplicateConverter { first: first.to_string(), second: c.name.clone() });
            }
            if !names.insert(c.name.as_str()) {
                return Err(TopologyError::DuplicateConverterName(c.name.clone()));
            }
        }
        Ok(GridGraph { ac_buses: ac, dc_buses: dc, ac_lines, dc_lines, converters })
    }

    pub fn empty() -> Self {
        GridGraph {
            ac_buses: BTreeSet::new(),
            dc_buses: BTreeSet::new(),
            ac_lines: Vec::new(),
            dc_lines: Vec::new(),
            converters: Vec::new(),
        }
    }

    pub fn ac_buses(&self) -> &BTreeSet<BusId> {
        &self.ac_buses
    }

    pub fn dc_buses(&self) -> &BTreeSet<BusId> {
        &self.dc_buses
    }

    pub fn ac_lines(&self) -> &[Line] {
        &self.ac_lines
    }

    pub fn dc_lines(&self) -> &[Line] {
        &self.dc_lines
    }

    pub fn converters(&self) -> &[Converter] {
        &self.converters
    }

    pub fn bus_kind(&self, bus: BusId) -> Option<BusKind> {
        if self.ac_buses.contains(&bus) {
            Some(BusKind::Ac)
        } else if self.dc_buses.contains(&bus) {
            Some(BusKind::Dc)
        } else {
            None
        }
    }

    pub fn converter_index(&self, name: &str) -> Option<usize> {
        self.converters.iter().position(|c| c.name == name)
    }

    pub fn is_fully_oriented(&self) -> bool {
        self.converters.iter().all(|c| c.orientation.is_assigned())
    }

    /// Copy of this grid with converter orientations replaced, in converter order.
    pub fn with_orientations(&self, orientations: &[Orientation]) -> GridGraph {
        assert_eq!(orientations.len(), self.converters.len(), "one orientation per converter");
        let mut out = self.clone();
        for (c, o) in out.converters.iter_mut().zip(orientations) {
            c.orientation = *o;
        }
        out
    }

    pub fn orientations(&self) -> Vec<Orientation> {
        self.converters.iter().map(|c| c.orientation).collect()
    }
}

fn check_lines(lines: &[Line], buses: &BTreeSet<BusId>, kind: BusKind) -> Result<(), TopologyError> {
    let mut seen = BTreeSet::new();
    for l in lines {
        for b in [l.from, l.to] {
            if !buses.contains(&b) {
                return Err(TopologyError::LineKindMismatch { kind, line: *l, bus: b });
            }
        }
        if l.from == l.to {
            return Err(TopologyError::SelfLoopLine(*l));
        }
        if !seen.insert(l.key()) {
            return Err(TopologyError::DuplicateLine(*l));
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn b(i: u32) -> BusId {
        BusId(i)
    }

    /// Point-to-point link: AC buses 1, 4 joined by an AC line; DC buses 2, 3
    /// joined by a DC line; converters 1-2 and 4-3.
    pub fn point_to_point(o12: Orientation, o43: Orientation) -> GridGraph {
        GridGraph::new(
            [b(1), b(4)],
            [b(2), b(3)],
            vec![Line::new(b(1), b(4))],
            vec![Line::new(b(2), b(3))],
            vec![Converter::new("C12", b(1), b(2)).oriented(o12), Converter::new("C43", b(4), b(3)).oriented(o43)],
        )
        .unwrap()
    }

    /// The nine-converter network with three AC and five DC subgrids. Each
    /// subgrid is one bus here; AC buses 101, 103, 104 and DC buses 201..205.
    pub fn fig_acyclic(oriented: bool) -> GridGraph {
        use Orientation::*;
        let ac = [b(101), b(103), b(104)];
        let dc = [b(201), b(202), b(203), b(204), b(205)];
        // (ac, dc, orientation as drawn)
        let conv = [
            (101, 201, AcToDc),
            (101, 203, AcToDc),
            (103, 201, DcToAc),
            (103, 202, AcToDc),
            (103, 203, DcToAc),
            (103, 204, AcToDc),
            (104, 202, DcToAc),
            (104, 204, DcToAc),
            (104, 205, DcToAc),
        ];
        let converters = conv
            .iter()
            .enumerate()
            .map(|(k, &(a, d, o))| {
                Converter::new(format!("V{}", k + 1), b(a), b(d)).oriented(if oriented { o } else { Unassigned })
            })
            .collect();
        GridGraph::new(ac, dc, vec![], vec![], converters).unwrap()
    }
}
