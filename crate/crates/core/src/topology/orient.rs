use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::quotient::{converter_endpoints, subgrid_nodes, topological_order_by};
use super::{connected_components, BusKind, GridGraph, LocalLoop, Orientation, TopologyError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferredDirection {
    AcToDc,
    DcToAc,
    FreeChoice,
    NotOrientable,
}

impl InferredDirection {
    pub fn orientation(self) -> Option<Orientation> {
        match self {
            InferredDirection::AcToDc => Some(Orientation::AcToDc),
            InferredDirection::DcToAc => Some(Orientation::DcToAc),
            _ => None,
        }
    }
}

/// Direction dictated by a converter's local loops: a loop feeding back
/// AC-side measurements puts the converter on the AC side, and vice versa.
pub fn infer_converter_direction(loops: &BTreeSet<LocalLoop>) -> InferredDirection {
    let mut ac = false;
    let mut dc = false;
    for l in loops {
        match l {
            LocalLoop::ReactivePower | LocalLoop::PowerTransferAcSide => ac = true,
            LocalLoop::DcVoltage | LocalLoop::PowerTransferDcSide => dc = true,
        }
    }
    match (ac, dc) {
        (false, false) => InferredDirection::FreeChoice,
        (true, false) => InferredDirection::AcToDc,
        (false, true) => InferredDirection::DcToAc,
        (true, true) => InferredDirection::NotOrientable,
    }
}

/// Which subgrid ordering the orienter tries first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OrientationStrategy {
    /// Ascending node index: AC subgrids, then DC subgrids.
    #[default]
    IndexOrder,
    /// DC subgrids first, then AC subgrids.
    DcFirst,
    /// Seeded random priority over subgrids.
    Seeded(u64),
}

/// Orient every free converter so the quotient graph is a DAG.
///
/// Free converters are oriented from whichever endpoint comes first in the
/// earliest topological order (under the strategy's priority) of the
/// fixed-direction edges. A completion exists iff the fixed edges are
/// acyclic, so failure of that sort is exactly `CycleForced`.
pub fn orient_converters(grid: &GridGraph, strategy: OrientationStrategy) -> Result<GridGraph, TopologyError> {
    let map = connected_components(grid);
    let nodes = subgrid_nodes(&map);
    let ends = converter_endpoints(grid, &map);

    let mut fixed: Vec<Option<Orientation>> = Vec::with_capacity(ends.len());
    for c in grid.converters() {
        let implied = match infer_converter_direction(&c.local_loops) {
            InferredDirection::NotOrientable => return Err(TopologyError::NotOrientable(c.name.clone())),
            d => d.orientation(),
        };
        let o = match (c.orientation.is_assigned(), implied) {
            (true, Some(i)) if i != c.orientation => {
                return Err(TopologyError::LoopConflict {
                    converter: c.name.clone(),
                    declared: c.orientation,
                    implied: i,
                })
            }
            (true, _) => Some(c.orientation),
            (false, i) => i,
        };
        fixed.push(o);
    }

    let mut fixed_edges = BTreeSet::new();
    for (o, &(a, d)) in fixed.iter().zip(&ends) {
        match o {
            Some(Orientation::AcToDc) => fixed_edges.insert((a, d)),
            Some(Orientation::DcToAc) => fixed_edges.insert((d, a)),
            _ => false,
        };
    }

    let n = nodes.len();
    let priority: Vec<usize> = match strategy {
        OrientationStrategy::IndexOrder => (0..n).collect(),
        OrientationStrategy::DcFirst => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| (nodes[i].kind != BusKind::Dc, i));
            rank_of(&order)
        }
        OrientationStrategy::Seeded(seed) => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            rank_of(&order)
        }
    };
    // Opposite fixed parallel edges form a 2-cycle and fail here too.
    let order = topological_order_by(n, &fixed_edges, |i| priority[i]).ok_or(TopologyError::CycleForced)?;
    let position: BTreeMap<usize, usize> = order.iter().enumerate().map(|(p, &v)| (v, p)).collect();

    let orientations: Vec<Orientation> = fixed
        .iter()
        .zip(&ends)
        .map(|(o, &(a, d))| match o {
            Some(o) => *o,
            None if position[&a] < position[&d] => Orientation::AcToDc,
            None => Orientation::DcToAc,
        })
        .collect();
    Ok(grid.with_orientations(&orientations))
}

fn rank_of(order: &[usize]) -> Vec<usize> {
    let mut rank = vec![0; order.len()];
    for (r, &v) in order.iter().enumerate() {
        rank[v] = r;
    }
    rank
}
