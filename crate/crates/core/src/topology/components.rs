use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{BusId, BusKind, GridGraph, Line};

/// Assignment of every bus to its AC or DC subgrid.
///
/// Indices are zero-based internally and ordered by the smallest bus id in
/// each component; labels ("AC1", "DC2", ...) are one-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubgridMap {
    pub ac_component: BTreeMap<BusId, usize>,
    pub dc_component: BTreeMap<BusId, usize>,
    pub ac_count: usize,
    pub dc_count: usize,
}

impl SubgridMap {
    pub fn component(&self, kind: BusKind, bus: BusId) -> Option<usize> {
        match kind {
            BusKind::Ac => self.ac_component.get(&bus).copied(),
            BusKind::Dc => self.dc_component.get(&bus).copied(),
        }
    }

    /// Buses of one subgrid, ascending.
    pub fn buses_of(&self, kind: BusKind, index: usize) -> Vec<BusId> {
        let map = match kind {
            BusKind::Ac => &self.ac_component,
            BusKind::Dc => &self.dc_component,
        };
        map.iter().filter(|(_, &k)| k == index).map(|(&b, _)| b).collect()
    }
}

pub fn connected_components(grid: &GridGraph) -> SubgridMap {
    let (ac_component, ac_count) = label_components(grid.ac_buses(), grid.ac_lines());
    let (dc_component, dc_count) = label_components(grid.dc_buses(), grid.dc_lines());
    SubgridMap { ac_component, dc_component, ac_count, dc_count }
}

fn label_components(buses: &BTreeSet<BusId>, lines: &[Line]) -> (BTreeMap<BusId, usize>, usize) {
    let mut adj: BTreeMap<BusId, Vec<BusId>> = buses.iter().map(|&b| (b, Vec::new())).collect();
    for l in lines {
        adj.entry(l.from).or_default().push(l.to);
        adj.entry(l.to).or_default().push(l.from);
    }
    let mut comp = BTreeMap::new();
    let mut count = 0;
    // BTreeSet iteration is ascending, so components come out ordered by
    // their smallest bus id.
    for &start in buses {
        if comp.contains_key(&start) {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        comp.insert(start, count);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[&u] {
                if !comp.contains_key(&v) {
                    comp.insert(v, count);
                    queue.push_back(v);
                }
            }
        }
        count += 1;
    }
    (comp, count)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{Converter, Orientation};
    use super::*;

    #[test]
    fn point_to_point_has_one_subgrid_of_each_kind() {
        let g = point_to_point(Orientation::Unassigned, Orientation::Unassigned);
        let m = connected_components(&g);
        assert_eq!((m.ac_count, m.dc_count), (1, 1));
        assert_eq!(m.ac_component[&b(1)], m.ac_component[&b(4)]);
    }

    #[test]
    fn empty_grid_has_no_components() {
        let m = connected_components(&GridGraph::empty());
        assert_eq!((m.ac_count, m.dc_count), (0, 0));
        assert!(m.ac_component.is_empty() && m.dc_component.is_empty());
    }

    #[test]
    fn six_isolated_inertias_and_two_dc_networks() {
        let ac: Vec<_> = (1..=6).map(b).collect();
        let dc: Vec<_> = (11..=18).map(b).collect();
        let mut dc_lines: Vec<Line> = (11..16).map(|i| Line::new(b(i), b(i + 1))).collect();
        dc_lines.push(Line::new(b(17), b(18)));
        let convs = (1..=6).map(|k| Converter::new(format!("VSC{k}"), b(k), b(10 + k))).collect();
        let g = GridGraph::new(ac, dc, vec![], dc_lines, convs).unwrap();
        let m = connected_components(&g);
        assert_eq!((m.ac_count, m.dc_count), (6, 2));
        assert_eq!(m.dc_component[&b(11)], 0);
        assert_eq!(m.dc_component[&b(18)], 1);
    }

    #[test]
    fn component_order_follows_smallest_bus() {
        let g = GridGraph::new([b(9), b(3), b(5)], [], vec![Line::new(b(9), b(3))], vec![], vec![]).unwrap();
        let m = connected_components(&g);
        assert_eq!(m.ac_component[&b(3)], 0);
        assert_eq!(m.ac_component[&b(9)], 0);
        assert_eq!(m.ac_component[&b(5)], 1);
        assert_eq!(m.buses_of(BusKind::Ac, 0), vec![b(3), b(9)]);
    }
}
