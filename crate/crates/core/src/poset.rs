//! Finite posets, block incidence-algebra membership and information
//! structure classification.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::QuotientGraph;

/// Absolute entrywise tolerance for a block to count as zero.
pub const ZERO_BLOCK_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PosetError {
    #[error("graph contains a directed cycle")]
    NotAcyclic,
    #[error("unknown poset element {0}")]
    UnknownElement(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("relation is not a partial order: {0}")]
    NotPartialOrder(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Poset {
    labels: Vec<String>,
    /// Row-major `n x n`; entry `(a, b)` means `a ⪯ b`.
    leq: Vec<bool>,
}

impl Poset {
    /// Reflexive-transitive closure of the directed edges. Fails on cycles.
    pub fn from_dag(labels: Vec<String>, edges: &[(usize, usize)]) -> Result<Self, PosetError> {
        let n = labels.len();
        let mut leq = vec![false; n * n];
        for i in 0..n {
            leq[i * n + i] = true;
        }
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(PosetError::DimensionMismatch(format!("edge ({a}, {b}) on {n} elements")));
            }
            leq[a * n + b] = true;
        }
        for k in 0..n {
            for i in 0..n {
                if leq[i * n + k] {
                    for j in 0..n {
                        if leq[k * n + j] {
                            leq[i * n + j] = true;
                        }
                    }
                }
            }
        }
        for a in 0..n {
            for b in a + 1..n {
                if leq[a * n + b] && leq[b * n + a] {
                    return Err(PosetError::NotAcyclic);
                }
            }
        }
        Ok(Poset { labels, leq })
    }

    /// Poset from an explicit relation matrix, checking all three axioms.
    pub fn from_relation(labels: Vec<String>, leq: Vec<bool>) -> Result<Self, PosetError> {
        let n = labels.len();
        if leq.len() != n * n {
            return Err(PosetError::DimensionMismatch(format!("relation has {} entries for {n} elements", leq.len())));
        }
        let p = Poset { labels, leq };
        p.check_axioms()?;
        Ok(p)
    }

    pub fn antichain(labels: Vec<String>) -> Self {
        Poset::from_dag(labels, &[]).expect("edgeless graph is acyclic")
    }

    /// Chain `labels[0] ⪯ labels[1] ⪯ ...`.
    pub fn chain(labels: Vec<String>) -> Self {
        let edges: Vec<_> = (1..labels.len()).map(|i| (i - 1, i)).collect();
        Poset::from_dag(labels, &edges).expect("path is acyclic")
    }

    pub fn check_axioms(&self) -> Result<(), PosetError> {
        let n = self.len();
        for a in 0..n {
            if !self.leq(a, a) {
                return Err(PosetError::NotPartialOrder(format!("{} is not reflexive", self.labels[a])));
            }
            for b in 0..n {
                if a != b && self.leq(a, b) && self.leq(b, a) {
                    return Err(PosetError::NotPartialOrder(format!(
                        "{} and {} violate antisymmetry",
                        self.labels[a], self.labels[b]
                    )));
                }
                for c in 0..n {
                    if self.leq(a, b) && self.leq(b, c) && !self.leq(a, c) {
                        return Err(PosetError::NotPartialOrder("transitivity fails".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, a: usize) -> &str {
        &self.labels[a]
    }

    pub fn index_of(&self, label: &str) -> Result<usize, PosetError> {
        self.labels.iter().position(|l| l == label).ok_or_else(|| PosetError::UnknownElement(label.to_string()))
    }

    pub fn leq(&self, a: usize, b: usize) -> bool {
        self.leq[a * self.len() + b]
    }

    pub fn lt(&self, a: usize, b: usize) -> bool {
        a != b && self.leq(a, b)
    }

    pub fn relation(&self) -> &[bool] {
        &self.leq
    }

    /// `{b | b ⪯ a}`.
    pub fn up_set(&self, a: usize) -> Result<BTreeSet<usize>, PosetError> {
        if a >= self.len() {
            return Err(PosetError::UnknownElement(a.to_string()));
        }
        Ok((0..self.len()).filter(|&b| self.leq(b, a)).collect())
    }

    /// `{b | a ⪯ b}`.
    pub fn down_set(&self, a: usize) -> Result<BTreeSet<usize>, PosetError> {
        if a >= self.len() {
            return Err(PosetError::UnknownElement(a.to_string()));
        }
        Ok((0..self.len()).filter(|&b| self.leq(a, b)).collect())
    }

    pub fn is_identity(&self) -> bool {
        (0..self.len()).all(|a| (0..self.len()).all(|b| self.leq(a, b) == (a == b)))
    }

    /// Covering relation (transitive reduction): `a ⋖ b` when `a ≺ b` with
    /// nothing strictly between.
    pub fn covers(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if self.lt(a, b) && !(0..n).any(|c| self.lt(a, c) && self.lt(c, b)) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Poset on groups of elements; `group_of[a]` names the group of `a`.
    /// Fails when two groups end up mutually related.
    pub fn coarsen(&self, group_of: &[usize], labels: Vec<String>) -> Result<Poset, PosetError> {
        if group_of.len() != self.len() || group_of.iter().any(|&g| g >= labels.len()) {
            return Err(PosetError::DimensionMismatch("group assignment does not match the poset".into()));
        }
        let mut edges = Vec::new();
        for a in 0..self.len() {
            for b in 0..self.len() {
                if self.lt(a, b) && group_of[a] != group_of[b] {
                    edges.push((group_of[a], group_of[b]));
                }
            }
        }
        Poset::from_dag(labels, &edges)
    }

    /// Whether `set` contains every element below each of its members.
    pub fn is_up_closed(&self, set: &BTreeSet<usize>) -> bool {
        set.iter().all(|&a| (0..self.len()).all(|b| !self.leq(b, a) || set.contains(&b)))
    }

    /// Same elements with extra relations added (closure recomputed).
    pub fn with_relations(&self, extra: &[(usize, usize)]) -> Result<Poset, PosetError> {
        let mut edges: Vec<(usize, usize)> = self.covers();
        edges.extend_from_slice(extra);
        Poset::from_dag(self.labels.clone(), &edges)
    }
}

/// Poset of a quotient DAG, elements labelled by subgrid.
pub fn poset_from_dag(q: &QuotientGraph) -> Result<Poset, PosetError> {
    let edges: Vec<_> = q.edges.iter().copied().collect();
    Poset::from_dag(q.labels(), &edges)
}

/// Partition of a vector index range into consecutive blocks, each block
/// tied to one poset element.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    /// Sizes may be zero: a subgrid can own states but no inputs.
    pub sizes: Vec<usize>,
    /// Poset element of each block.
    pub elements: Vec<usize>,
    pub labels: Vec<String>,
}

impl BlockPartition {
    pub fn new(sizes: Vec<usize>, elements: Vec<usize>, labels: Vec<String>) -> Self {
        assert_eq!(sizes.len(), elements.len());
        assert_eq!(sizes.len(), labels.len());
        BlockPartition { sizes, elements, labels }
    }

    /// Single block covering `dim` entries, for element 0.
    pub fn single(dim: usize) -> Self {
        BlockPartition::new(vec![dim], vec![0], vec!["all".into()])
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn block_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.sizes
            .iter()
            .map(|s| {
                let o = acc;
                acc += s;
                o
            })
            .collect()
    }

    pub fn range(&self, block: usize) -> std::ops::Range<usize> {
        let start: usize = self.sizes[..block].iter().sum();
        start..start + self.sizes[block]
    }

    pub fn block_of_index(&self, index: usize) -> Option<usize> {
        let mut acc = 0;
        for (k, s) in self.sizes.iter().enumerate() {
            acc += s;
            if index < acc {
                return Some(k);
            }
        }
        None
    }

    pub fn block_of_element(&self, element: usize) -> Option<usize> {
        self.elements.iter().position(|&e| e == element)
    }

    /// Merge blocks into groups; `group_of[block]` gives the new block.
    pub fn coarsen(&self, group_of: &[usize], labels: Vec<String>) -> (BlockPartition, Vec<usize>) {
        let groups = labels.len();
        let mut sizes = vec![0; groups];
        let mut perm = Vec::with_capacity(self.dim());
        for g in 0..groups {
            for b in 0..self.block_count() {
                if group_of[b] == g {
                    sizes[g] += self.sizes[b];
                    perm.extend(self.range(b));
                }
            }
        }
        (BlockPartition::new(sizes, (0..groups).collect(), labels), perm)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockViolation {
    pub row_block: String,
    pub col_block: String,
    pub max_abs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub member: bool,
    pub violations: Vec<BlockViolation>,
}

/// Whether `m` lies in the block incidence algebra of `poset`: every block
/// `(row j, col i)` with `element(i) ⋠ element(j)` must vanish.
pub fn in_block_incidence_algebra(
    m: &DMatrix<f64>,
    rows: &BlockPartition,
    cols: &BlockPartition,
    poset: &Poset,
) -> Result<Membership, PosetError> {
    in_block_incidence_algebra_tol(m, rows, cols, poset, ZERO_BLOCK_TOL)
}

pub fn in_block_incidence_algebra_tol(
    m: &DMatrix<f64>,
    rows: &BlockPartition,
    cols: &BlockPartition,
    poset: &Poset,
    tol: f64,
) -> Result<Membership, PosetError> {
    if m.nrows() != rows.dim() || m.ncols() != cols.dim() {
        return Err(PosetError::DimensionMismatch(format!(
            "matrix is {}x{}, partitions are {}x{}",
            m.nrows(),
            m.ncols(),
            rows.dim(),
            cols.dim()
        )));
    }
    for &e in rows.elements.iter().chain(&cols.elements) {
        if e >= poset.len() {
            return Err(PosetError::UnknownElement(e.to_string()));
        }
    }
    let mut violations = Vec::new();
    for (j, rr) in (0..rows.block_count()).map(|j| (j, rows.range(j))) {
        for (i, cr) in (0..cols.block_count()).map(|i| (i, cols.range(i))) {
            if poset.leq(cols.elements[i], rows.elements[j]) {
                continue;
            }
            let max_abs = rr
                .clone()
                .flat_map(|r| cr.clone().map(move |c| (r, c)))
                .map(|(r, c)| m[(r, c)].abs())
                .fold(0.0, f64::max);
            if max_abs > tol {
                violations.push(BlockViolation {
                    row_block: rows.labels[j].clone(),
                    col_block: cols.labels[i].clone(),
                    max_abs,
                });
            }
        }
    }
    Ok(Membership { member: violations.is_empty(), violations })
}

/// Information structure, most specific first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StructureClass {
    Decoupled,
    LeaderFollower { leader: usize },
    Coordinated { coordinator: BTreeSet<usize> },
    Hierarchical,
    PosetCausal,
}

impl StructureClass {
    pub fn describe(&self, poset: &Poset) -> String {
        match self {
            StructureClass::Decoupled => "Decoupled".into(),
            StructureClass::LeaderFollower { leader } => format!("LeaderFollower, leader = {}", poset.label(*leader)),
            StructureClass::Coordinated { coordinator } => {
                let names: Vec<&str> = coordinator.iter().map(|&c| poset.label(c)).collect();
                format!("Coordinated, coordinator = {{{}}}", names.join(", "))
            }
            StructureClass::Hierarchical => "Hierarchical".into(),
            StructureClass::PosetCausal => "PosetCausal".into(),
        }
    }
}

impl fmt::Display for StructureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StructureClass::Decoupled => "Decoupled",
            StructureClass::LeaderFollower { .. } => "LeaderFollower",
            StructureClass::Coordinated { .. } => "Coordinated",
            StructureClass::Hierarchical => "Hierarchical",
            StructureClass::PosetCausal => "PosetCausal",
        };
        f.write_str(s)
    }
}

/// Leader of a two-element chain.
pub fn leader_follower(poset: &Poset) -> Option<usize> {
    if poset.len() != 2 {
        return None;
    }
    if poset.lt(0, 1) {
        Some(0)
    } else if poset.lt(1, 0) {
        Some(1)
    } else {
        None
    }
}

/// Coordinator set when the covering graph is a depth-one star: either one
/// source pointing at every other element, or every other element pointing
/// at one sink (the sources then act together as the coordinator).
pub fn coordinator(poset: &Poset) -> Option<BTreeSet<usize>> {
    let n = poset.len();
    if n < 2 {
        return None;
    }
    let covers = poset.covers();
    if covers.len() != n - 1 {
        return None;
    }
    for c in 0..n {
        if covers.iter().all(|&(a, _)| a == c) && (0..n).filter(|&i| i != c).all(|i| covers.contains(&(c, i))) {
            return Some(BTreeSet::from([c]));
        }
    }
    for s in 0..n {
        if covers.iter().all(|&(_, b)| b == s) && (0..n).filter(|&i| i != s).all(|i| covers.contains(&(i, s))) {
            return Some((0..n).filter(|&i| i != s).collect());
        }
    }
    None
}

/// Covering graph is one tree, oriented uniformly away from or towards a root.
pub fn is_hierarchical(poset: &Poset) -> bool {
    let n = poset.len();
    if n <= 1 {
        return true;
    }
    let covers = poset.covers();
    if covers.len() != n - 1 {
        return false;
    }
    // n - 1 edges plus connectivity makes a tree
    let mut comp: Vec<usize> = (0..n).collect();
    fn find(c: &mut [usize], x: usize) -> usize {
        if c[x] != x {
            let r = find(c, c[x]);
            c[x] = r;
        }
        c[x]
    }
    for &(a, b) in &covers {
        let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
        comp[ra] = rb;
    }
    let root = find(&mut comp, 0);
    if (0..n).any(|v| find(&mut comp, v) != root) {
        return false;
    }
    let indeg_ok = (0..n).all(|v| covers.iter().filter(|&&(_, b)| b == v).count() <= 1);
    let outdeg_ok = (0..n).all(|v| covers.iter().filter(|&&(a, _)| a == v).count() <= 1);
    indeg_ok || outdeg_ok
}

/// Most specific structure class of a poset.
pub fn classify_structure(poset: &Poset) -> StructureClass {
    if poset.len() > 1 && poset.is_identity() {
        return StructureClass::Decoupled;
    }
    if let Some(leader) = leader_follower(poset) {
        return StructureClass::LeaderFollower { leader };
    }
    if let Some(coordinator) = coordinator(poset) {
        return StructureClass::Coordinated { coordinator };
    }
    if is_hierarchical(poset) {
        return StructureClass::Hierarchical;
    }
    StructureClass::PosetCausal
}
