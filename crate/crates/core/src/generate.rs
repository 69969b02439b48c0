//! Random grids and posets for property checks and benchmarks.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::linear::{AcBusParams, DcLineParams, LinearGridParams};
use crate::poset::Poset;
use crate::topology::{orient_converters, BusId, Converter, GridGraph, Line, OrientationStrategy};

/// Buses of one subgrid joined by a random spanning tree, plus at most one
/// extra line.
fn subgrid_lines(rng: &mut impl Rng, buses: &[BusId]) -> Vec<Line> {
    let mut lines: Vec<Line> = (1..buses.len()).map(|k| Line::new(buses[rng.gen_range(0..k)], buses[k])).collect();
    if buses.len() > 2 && rng.gen_bool(0.3) {
        let (a, b) = (buses[0], buses[buses.len() - 1]);
        if !lines.iter().any(|l| l.key() == Line::new(a, b).key()) {
            lines.push(Line::new(a, b));
        }
    }
    lines
}

/// Random grid with at most `max_subgrids` subgrids (at least one of each
/// kind), acyclically oriented by a seeded priority, with random
/// electrical parameters.
pub fn random_grid(rng: &mut impl Rng, max_subgrids: usize) -> (GridGraph, LinearGridParams) {
    assert!(max_subgrids >= 2, "need room for one AC and one DC subgrid");
    let n_ac = rng.gen_range(1..max_subgrids);
    let n_dc = rng.gen_range(1..=max_subgrids - n_ac);
    let mut next = 1u32;
    let mut make = |rng: &mut dyn rand::RngCore, count: usize| -> Vec<Vec<BusId>> {
        (0..count)
            .map(|_| {
                let size = rng.gen_range(1..=3);
                (0..size)
                    .map(|_| {
                        next += 1;
                        BusId(next - 1)
                    })
                    .collect()
            })
            .collect()
    };
    let ac = make(rng, n_ac);
    let dc = make(rng, n_dc);
    let ac_lines: Vec<Line> = ac.iter().flat_map(|s| subgrid_lines(rng, s)).collect();
    let dc_lines: Vec<Line> = dc.iter().flat_map(|s| subgrid_lines(rng, s)).collect();

    let mut pairs = BTreeSet::new();
    for sa in &ac {
        for sd in &dc {
            if rng.gen_bool(0.6) {
                for _ in 0..rng.gen_range(1..=2) {
                    pairs.insert((*sa.choose(rng).unwrap(), *sd.choose(rng).unwrap()));
                }
            }
        }
    }
    if pairs.is_empty() {
        pairs.insert((ac[0][0], dc[0][0]));
    }
    let converters = pairs.iter().enumerate().map(|(k, &(a, d))| Converter::new(format!("V{}", k + 1), a, d)).collect();
    let grid =
        GridGraph::new(ac.concat(), dc.concat(), ac_lines, dc_lines, converters).expect("generated grid is valid");
    let grid = orient_converters(&grid, OrientationStrategy::Seeded(rng.gen())).expect("free converters always orient");

    let mut p = LinearGridParams::default();
    for &b in grid.ac_buses() {
        p.ac_buses.insert(
            b,
            AcBusParams { inertia: rng.gen_range(1.0..10.0), damping: rng.gen_range(0.05..1.0), injection: 0.0 },
        );
    }
    for l in grid.ac_lines() {
        p.ac_lines.insert(l.key(), rng.gen_range(0.5..2.0));
    }
    for &b in grid.dc_buses() {
        p.dc_buses.insert(b, rng.gen_range(0.02..0.2));
    }
    for l in grid.dc_lines() {
        p.dc_lines.insert(
            l.key(),
            DcLineParams { inductance: rng.gen_range(0.005..0.05), resistance: rng.gen_range(0.005..0.1) },
        );
    }
    for c in grid.converters() {
        p.converters.insert(c.name.clone(), rng.gen_range(0.9..1.1));
    }
    (grid, p)
}

/// Random DAG on `n` elements in a shuffled order, each forward pair an
/// edge with probability `density`.
pub fn random_dag_poset(rng: &mut impl Rng, n: usize, density: f64) -> Poset {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                edges.push((order[i], order[j]));
            }
        }
    }
    Poset::from_dag((0..n).map(|k| format!("p{k}")).collect(), &edges).expect("forward edges form a DAG")
}
