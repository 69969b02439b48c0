//! Counting and enumerating acyclic orientations.
//!
//! The count is `|X(-1)|` for the chromatic polynomial `X` of the
//! underlying undirected graph, evaluated here directly at `-1` by
//! deletion–contraction. Enumeration is a brute-force oracle.

use std::collections::{BTreeSet, HashMap};

use super::quotient::topological_order_by;
use super::{QuotientGraph, TopologyError};

pub const DEFAULT_VERTEX_LIMIT: usize = 20;
pub const ENUMERATION_EDGE_LIMIT: usize = 20;

pub fn count_acyclic_orientations(q: &QuotientGraph) -> Result<u128, TopologyError> {
    count_acyclic_orientations_bounded(q, DEFAULT_VERTEX_LIMIT)
}

pub fn count_acyclic_orientations_bounded(q: &QuotientGraph, vertex_limit: usize) -> Result<u128, TopologyError> {
    let edges: Vec<_> = q.underlying_edges.iter().copied().collect();
    count_with_limit(q.len(), &edges, vertex_limit)
}

/// Number of acyclic orientations of a simple undirected graph on `n` vertices.
pub fn acyclic_orientation_count(n: usize, edges: &[(usize, usize)]) -> Result<u128, TopologyError> {
    count_with_limit(n, edges, DEFAULT_VERTEX_LIMIT)
}

fn count_with_limit(n: usize, edges: &[(usize, usize)], vertex_limit: usize) -> Result<u128, TopologyError> {
    if n > vertex_limit.min(64) {
        return Err(TopologyError::SizeLimit { what: "vertices", size: n, limit: vertex_limit.min(64) });
    }
    let mut adj = vec![0u64; n];
    for &(a, b) in edges {
        assert!(a < n && b < n && a != b, "edge ({a}, {b}) out of range or a self-loop");
        adj[a] |= 1 << b;
        adj[b] |= 1 << a;
    }
    let mut memo = HashMap::new();
    let value = chromatic_at_minus_one(adj, &mut memo);
    Ok(value.unsigned_abs())
}

/// `X(G, -1)` for the graph given by adjacency bitmasks.
fn chromatic_at_minus_one(adj: Vec<u64>, memo: &mut HashMap<Vec<u64>, i128>) -> i128 {
    // Isolated vertices each contribute a factor x = -1.
    let isolated = adj.iter().filter(|&&m| m == 0).count();
    let sign = if isolated % 2 == 0 { 1 } else { -1 };
    let adj = drop_vertices(&adj, |v| adj[v] == 0);
    if adj.is_empty() {
        return sign;
    }

    let comps = components(&adj);
    if comps.len() > 1 {
        let mut prod = sign;
        for comp in comps {
            let sub = drop_vertices(&adj, |v| comp & (1 << v) == 0);
            prod *= chromatic_at_minus_one(sub, memo);
        }
        return prod;
    }

    let n = adj.len();
    let twice_edges: u32 = adj.iter().map(|m| m.count_ones()).sum();
    let m = (twice_edges / 2) as usize;
    if m == n - 1 {
        // tree: x (x - 1)^(n - 1)
        return sign * -(-2i128).pow((n - 1) as u32);
    }
    if m == n * (n - 1) / 2 {
        // complete graph: x (x - 1) ... (x - n + 1)
        let mut v: i128 = 1;
        for i in 0..n as i128 {
            v *= -1 - i;
        }
        return sign * v;
    }

    let key = canonical_form(&adj);
    if let Some(&v) = memo.get(&key) {
        return sign * v;
    }
    let adj = key.clone();
    let u = (0..n).max_by_key(|&v| (adj[v].count_ones(), std::cmp::Reverse(v))).unwrap();
    let w = adj[u].trailing_zeros() as usize;

    let mut deleted = adj.clone();
    deleted[u] &= !(1 << w);
    deleted[w] &= !(1 << u);

    let mut contracted = deleted.clone();
    let merged = contracted[w];
    contracted[u] |= merged;
    for (v, row) in contracted.iter_mut().enumerate() {
        if merged & (1 << v) != 0 {
            *row |= 1 << u;
        }
    }
    contracted[u] &= !(1 << u);
    let contracted = drop_vertices(&contracted, |v| v == w);

    let value = chromatic_at_minus_one(deleted, memo) - chromatic_at_minus_one(contracted, memo);
    memo.insert(key, value);
    sign * value
}

/// Remove the vertices selected by `drop`, renumbering the rest in order.
fn drop_vertices(adj: &[u64], drop: impl Fn(usize) -> bool) -> Vec<u64> {
    let keep: Vec<usize> = (0..adj.len()).filter(|&v| !drop(v)).collect();
    keep.iter()
        .map(|&v| {
            keep.iter().enumerate().filter(|&(_, &u)| adj[v] & (1 << u) != 0).fold(0u64, |acc, (i, _)| acc | (1 << i))
        })
        .collect()
}

fn components(adj: &[u64]) -> Vec<u64> {
    let mut seen = 0u64;
    let mut out = Vec::new();
    for s in 0..adj.len() {
        if seen & (1 << s) != 0 {
            continue;
        }
        let mut comp = 1u64 << s;
        let mut frontier = comp;
        while frontier != 0 {
            let v = frontier.trailing_zeros() as usize;
            frontier &= frontier - 1;
            let fresh = adj[v] & !comp;
            comp |= fresh;
            frontier |= fresh;
        }
        seen |= comp;
        out.push(comp);
    }
    out
}

/// Relabel vertices by descending (degree, sorted neighbour degrees). The
/// result is always isomorphic to the input, so equal keys imply equal
/// chromatic polynomials even where the ordering does not separate ties.
fn canonical_form(adj: &[u64]) -> Vec<u64> {
    let n = adj.len();
    let deg: Vec<u32> = adj.iter().map(|m| m.count_ones()).collect();
    let signature = |v: usize| {
        let mut nd: Vec<u32> = (0..n).filter(|&u| adj[v] & (1 << u) != 0).map(|u| deg[u]).collect();
        nd.sort_unstable_by(|a, b| b.cmp(a));
        (deg[v], nd)
    };
    let mut order: Vec<usize> = (0..n).collect();
    let sigs: Vec<_> = (0..n).map(signature).collect();
    order.sort_by(|&a, &b| sigs[b].cmp(&sigs[a]).then(a.cmp(&b)));
    let mut pos = vec![0usize; n];
    for (i, &v) in order.iter().enumerate() {
        pos[v] = i;
    }
    order.iter().map(|&v| (0..n).filter(|&u| adj[v] & (1 << u) != 0).fold(0u64, |acc, u| acc | (1 << pos[u]))).collect()
}

pub fn is_acyclic_digraph(n: usize, edges: &[(usize, usize)]) -> bool {
    let set: BTreeSet<_> = edges.iter().copied().collect();
    topological_order_by(n, &set, |i| i).is_some()
}

/// All acyclic orientations of `q`'s underlying graph, each as a list of
/// directed edges in `underlying_edges` order.
pub fn enumerate_acyclic_orientations(q: &QuotientGraph) -> Result<Vec<Vec<(usize, usize)>>, TopologyError> {
    let edges: Vec<_> = q.underlying_edges.iter().copied().collect();
    enumerate_orientations_of(q.len(), &edges)
}

pub fn enumerate_orientations_of(
    n: usize,
    edges: &[(usize, usize)],
) -> Result<Vec<Vec<(usize, usize)>>, TopologyError> {
    let m = edges.len();
    if m > ENUMERATION_EDGE_LIMIT {
        return Err(TopologyError::SizeLimit { what: "edges", size: m, limit: ENUMERATION_EDGE_LIMIT });
    }
    let mut out = Vec::new();
    let mut directed = Vec::with_capacity(m);
    for mask in 0u32..(1u32 << m) {
        directed.clear();
        directed.extend(edges.iter().enumerate().map(
            |(k, &(a, b))| {
                if mask & (1 << k) == 0 {
                    (a, b)
                } else {
                    (b, a)
                }
            },
        ));
        if is_acyclic_digraph(n, &directed) {
            out.push(directed.clone());
        }
    }
    Ok(out)
}
