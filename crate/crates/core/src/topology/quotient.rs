use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;

use super::{BusKind, GridGraph, Orientation, SubgridMap, TopologyError};

/// One node of the quotient graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Subgrid {
    pub kind: BusKind,
    /// Zero-based component index within its kind.
    pub index: usize,
}

impl Subgrid {
    /// Short label, e.g. `AC1`.
    pub fn label(&self) -> String {
        format!("{}{}", self.kind, self.index + 1)
    }

    /// Long label, e.g. `AC subgrid 1`.
    pub fn long_label(&self) -> String {
        format!("{} subgrid {}", self.kind, self.index + 1)
    }
}

impl fmt::Display for Subgrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Subgrid-level graph. Nodes are all AC subgrids (in component order)
/// followed by all DC subgrids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuotientGraph {
    pub nodes: Vec<Subgrid>,
    /// Directed edges induced by oriented converters.
    pub edges: BTreeSet<(usize, usize)>,
    /// Every converter-connected node pair, stored as `(min, max)`.
    pub underlying_edges: BTreeSet<(usize, usize)>,
}

impl QuotientGraph {
    /// Directed graph on anonymous AC-kind nodes, for synthetic tests and
    /// posets that do not come from a grid.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let edges: BTreeSet<_> = edges.into_iter().collect();
        let underlying = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        QuotientGraph {
            nodes: (0..n).map(|index| Subgrid { kind: BusKind::Ac, index }).collect(),
            edges,
            underlying_edges: underlying,
        }
    }

    /// Undirected graph: underlying edges only, nothing oriented.
    pub fn undirected(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        QuotientGraph {
            nodes: (0..n).map(|index| Subgrid { kind: BusKind::Ac, index }).collect(),
            edges: BTreeSet::new(),
            underlying_edges: edges.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_index(&self, subgrid: Subgrid) -> Option<usize> {
        self.nodes.iter().position(|&s| s == subgrid)
    }

    pub fn node_by_label(&self, label: &str) -> Option<usize> {
        self.nodes.iter().position(|s| s.label() == label)
    }

    pub fn labels(&self) -> Vec<String> {
        self.nodes.iter().map(Subgrid::label).collect()
    }

    pub fn is_bipartite(&self) -> bool {
        self.underlying_edges.iter().all(|&(a, b)| self.nodes[a].kind != self.nodes[b].kind)
    }

    /// Topological order, breaking ties by smallest node index; `None` if
    /// the directed edges contain a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        topological_order_by(self.len(), &self.edges, |i| i)
    }

    pub fn is_dag(&self) -> bool {
        self.topological_order().is_some()
    }

    pub fn successors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |&&(a, _)| a == node).map(|&(_, b)| b)
    }
}

/// Kahn's algorithm; among available nodes the one with the smallest
/// `priority` goes first.
pub(crate) fn topological_order_by<K: Ord>(
    n: usize,
    edges: &BTreeSet<(usize, usize)>,
    priority: impl Fn(usize) -> K,
) -> Option<Vec<usize>> {
    let mut indeg = vec![0usize; n];
    let mut out = vec![Vec::new(); n];
    for &(a, b) in edges {
        indeg[b] += 1;
        out[a].push(b);
    }
    let mut heap: BinaryHeap<Reverse<(K, usize)>> =
        (0..n).filter(|&i| indeg[i] == 0).map(|i| Reverse((priority(i), i))).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse((_, u))) = heap.pop() {
        order.push(u);
        for &v in &out[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                heap.push(Reverse((priority(v), v)));
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Quotient node of each converter's AC and DC endpoint, in converter order.
pub(crate) fn converter_endpoints(grid: &GridGraph, map: &SubgridMap) -> Vec<(usize, usize)> {
    grid.converters()
        .iter()
        .map(|c| {
            let a = map.ac_component[&c.ac_bus];
            let d = map.ac_count + map.dc_component[&c.dc_bus];
            (a, d)
        })
        .collect()
}

pub(crate) fn subgrid_nodes(map: &SubgridMap) -> Vec<Subgrid> {
    (0..map.ac_count)
        .map(|index| Subgrid { kind: BusKind::Ac, index })
        .chain((0..map.dc_count).map(|index| Subgrid { kind: BusKind::Dc, index }))
        .collect()
}

pub fn build_quotient_graph(grid: &GridGraph, map: &SubgridMap) -> Result<QuotientGraph, TopologyError> {
    let nodes = subgrid_nodes(map);
    let mut edges = BTreeSet::new();
    let mut underlying = BTreeSet::new();
    for (c, (a, d)) in grid.converters().iter().zip(converter_endpoints(grid, map)) {
        underlying.insert((a.min(d), a.max(d)));
        let edge = match c.orientation {
            Orientation::AcToDc => (a, d),
            Orientation::DcToAc => (d, a),
            Orientation::Unassigned => continue,
        };
        if edges.contains(&(edge.1, edge.0)) {
            return Err(TopologyError::CoOrientationConflict { a: nodes[a].label(), b: nodes[d].label() });
        }
        edges.insert(edge);
    }
    Ok(QuotientGraph { nodes, edges, underlying_edges: underlying })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{connected_components, Orientation::*};
    use super::*;

    fn quotient(g: &GridGraph) -> Result<QuotientGraph, TopologyError> {
        build_quotient_graph(g, &connected_components(g))
    }

    #[test]
    fn point_to_point_dc_leader_gives_single_edge() {
        // C = {21, 34}: both converters point from the DC side.
        let q = quotient(&point_to_point(DcToAc, DcToAc)).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.edges, BTreeSet::from([(1, 0)]));
        assert_eq!(q.nodes[1].label(), "DC1");
        assert!(q.is_dag());
    }

    #[test]
    fn opposite_parallel_converters_conflict() {
        // C = {12, 34}
        let err = quotient(&point_to_point(AcToDc, DcToAc)).unwrap_err();
        assert!(matches!(err, TopologyError::CoOrientationConflict { .. }));
        // C = {21, 43}
        assert!(quotient(&point_to_point(DcToAc, AcToDc)).is_err());
    }

    #[test]
    fn unassigned_converters_only_contribute_underlying_edges() {
        let q = quotient(&point_to_point(Unassigned, AcToDc)).unwrap();
        assert_eq!(q.edges, BTreeSet::from([(0, 1)]));
        assert_eq!(q.underlying_edges, BTreeSet::from([(0, 1)]));
    }

    #[test]
    fn drawn_orientation_network_is_an_eight_node_bipartite_dag() {
        let q = quotient(&fig_acyclic(true)).unwrap();
        assert_eq!(q.len(), 8);
        assert_eq!(q.edges.len(), 9);
        assert_eq!(q.underlying_edges.len(), 9);
        assert!(q.is_bipartite());
        assert!(q.is_dag());
    }

    #[test]
    fn topological_order_detects_cycle() {
        let q = QuotientGraph::from_edges(3, [(0, 1), (1, 2), (2, 0)]);
        assert!(q.topological_order().is_none());
        let q = QuotientGraph::from_edges(3, [(2, 1), (1, 0)]);
        assert_eq!(q.topological_order().unwrap(), vec![2, 1, 0]);
    }
}
