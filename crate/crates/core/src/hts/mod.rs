//! Hierarchical time series data model.
//!
//! A [`Hierarchy`] is a tree whose nodes are stored in level-order (root
//! first, left to right within a level). The summation matrix `S` has one
//! row per node and one column per bottom node, so that `x = S b`.

mod io;

pub use io::{
    dataset_from_json_str, dataset_to_json_string, load_dataset, save_dataset_json, DataFormat,
};

use std::fmt;
use std::ops::Range;

use thiserror::Error;

/// Relative coherence tolerance: `tau = COHERENCE_REL_TOL * (1 + max|value|)`.
pub const COHERENCE_REL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum HtsError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invariant error: {0}")]
    Invariant(String),
    #[error("invalid hierarchy: {0}")]
    Hierarchy(HierarchyViolation),
    #[error("level {level} out of range 1..={depth}")]
    LevelOutOfRange { level: usize, depth: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// First invariant a [`Hierarchy`] fails, as reported by [`validate_hierarchy`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HierarchyViolation {
    Empty,
    ShapeMismatch(String),
    /// Exactly one level-1 node with no parent is required.
    RootCount(usize),
    /// Nodes are not in level-order traversal at this index.
    LevelOrder {
        node: usize,
    },
    /// A non-root node's parent is missing or not exactly one level above.
    ParentLevel {
        node: usize,
    },
    /// A leaf above the bottom level.
    RaggedDepth {
        node: usize,
    },
    BottomIdentity {
        row: usize,
    },
    NonBinary {
        row: usize,
    },
    AggregationConsistency {
        node: usize,
    },
}

impl fmt::Display for HierarchyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => write!(f, "hierarchy has no nodes"),
            Self::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Self::RootCount(n) => write!(f, "expected exactly one root, found {n}"),
            Self::LevelOrder { node } => write!(f, "level order violated at node {node}"),
            Self::ParentLevel { node } => {
                write!(f, "parent of node {node} is not exactly one level above")
            }
            Self::RaggedDepth { node } => {
                write!(
                    f,
                    "leaf node {node} is above the bottom level (ragged depth)"
                )
            }
            Self::BottomIdentity { row } => {
                write!(f, "bottom block of S is not the identity at row {row}")
            }
            Self::NonBinary { row } => write!(f, "S row {row} has a non-binary entry"),
            Self::AggregationConsistency { node } => write!(
                f,
                "aggregation consistency: row {node} is not the sum of its children's rows"
            ),
        }
    }
}

/// Univariate series with finite values and length >= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    id: String,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Result<Self, HtsError> {
        let id = id.into();
        if values.is_empty() {
            return Err(HtsError::Invariant(format!("series '{id}' is empty")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(HtsError::Invariant(format!(
                "series '{id}' has a non-finite value at t={pos}"
            )));
        }
        Ok(Self { id, values })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Tree structure and summation matrix of one hierarchical series.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    node_ids: Vec<String>,
    levels: Vec<usize>,
    parents: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Row-major `n x m`.
    summation: Vec<u8>,
    bottom_count: usize,
    depth: usize,
}

impl Hierarchy {
    /// Builds the hierarchy (and `S`) from level-ordered parent links and
    /// validates it.
    pub fn from_parents(
        node_ids: Vec<String>,
        levels: Vec<usize>,
        parents: Vec<Option<usize>>,
    ) -> Result<Self, HtsError> {
        let n = node_ids.len();
        if levels.len() != n || parents.len() != n {
            return Err(HtsError::Hierarchy(HierarchyViolation::ShapeMismatch(
                format!(
                    "{} ids, {} levels, {} parents",
                    n,
                    levels.len(),
                    parents.len()
                ),
            )));
        }
        let depth = levels.iter().copied().max().unwrap_or(0);
        let bottom: Vec<usize> = (0..n).filter(|&i| levels[i] == depth).collect();
        let m = bottom.len();
        let mut summation = vec![0u8; n * m];
        for (col, &b) in bottom.iter().enumerate() {
            let mut cur = Some(b);
            let mut guard = 0;
            while let Some(node) = cur {
                if node >= n || guard > n {
                    break;
                }
                summation[node * m + col] = 1;
                cur = parents[node];
                guard += 1;
            }
        }
        let h = Self::from_raw_parts(node_ids, levels, parents, summation, m);
        validate_hierarchy(&h).map_err(HtsError::Hierarchy)?;
        Ok(h)
    }

    /// Assembles a hierarchy from an explicit summation matrix without
    /// validation; see [`validate_hierarchy`].
    pub fn from_raw_parts(
        node_ids: Vec<String>,
        levels: Vec<usize>,
        parents: Vec<Option<usize>>,
        summation: Vec<u8>,
        bottom_count: usize,
    ) -> Self {
        let n = node_ids.len();
        let mut children = vec![Vec::new(); n];
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p < n {
                    children[p].push(i);
                }
            }
        }
        let depth = levels.iter().copied().max().unwrap_or(0);
        Self {
            node_ids,
            levels,
            parents,
            children,
            summation,
            bottom_count,
            depth,
        }
    }

    /// A two-level tree with one root over `children` leaves.
    pub fn star(children: usize) -> Result<Self, HtsError> {
        Self::balanced(&[children])
    }

    /// A balanced tree: `branching[d]` children per node at depth `d + 1`.
    pub fn balanced(branching: &[usize]) -> Result<Self, HtsError> {
        let mut ids = vec!["n0".to_string()];
        let mut levels = vec![1];
        let mut parents = vec![None];
        let mut frontier = vec![0usize];
        for (d, &b) in branching.iter().enumerate() {
            let mut next = Vec::new();
            for &p in &frontier {
                for _ in 0..b {
                    let idx = ids.len();
                    ids.push(format!("n{idx}"));
                    levels.push(d + 2);
                    parents.push(Some(p));
                    next.push(idx);
                }
            }
            frontier = next;
        }
        Self::from_parents(ids, levels, parents)
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn bottom_count(&self) -> usize {
        self.bottom_count
    }

    pub fn aggregated_count(&self) -> usize {
        self.node_count() - self.bottom_count
    }

    /// Number of levels `L`; the root is level 1, leaves are level `L`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node_id(&self, node: usize) -> &str {
        &self.node_ids[node]
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn level_of(&self, node: usize) -> usize {
        self.levels[node]
    }

    pub fn parent_of(&self, node: usize) -> Option<usize> {
        self.parents[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn summation_row(&self, node: usize) -> &[u8] {
        let m = self.bottom_count;
        &self.summation[node * m..(node + 1) * m]
    }

    /// Node indices of one level; contiguous because of level order.
    pub fn nodes_at_level(&self, level: usize) -> Range<usize> {
        let start = self
            .levels
            .iter()
            .position(|&l| l == level)
            .unwrap_or(self.node_count());
        let end = self
            .levels
            .iter()
            .rposition(|&l| l == level)
            .map_or(start, |e| e + 1);
        start..end
    }

    /// Bottom node indices; the last `m` nodes.
    pub fn bottom_nodes(&self) -> Range<usize> {
        self.aggregated_count()..self.node_count()
    }

    pub fn is_bottom(&self, node: usize) -> bool {
        node >= self.aggregated_count()
    }

    /// Bottom-column indices `F(i)` aggregated into `node`.
    pub fn descendants(&self, node: usize) -> Vec<usize> {
        self.summation_row(node)
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 1)
            .map(|(j, _)| j)
            .collect()
    }

    /// `S b`, summing each row's bottom values left to right.
    pub fn aggregate(&self, bottom: &[f64]) -> Vec<f64> {
        (0..self.node_count())
            .map(|i| {
                let mut acc = 0.0;
                for (s, b) in self.summation_row(i).iter().zip(bottom) {
                    if *s == 1 {
                        acc += b;
                    }
                }
                acc
            })
            .collect()
    }
}

/// Checks every structural invariant and reports the first violation.
pub fn validate_hierarchy(h: &Hierarchy) -> Result<(), HierarchyViolation> {
    use HierarchyViolation as V;
    let n = h.node_ids.len();
    if n == 0 {
        return Err(V::Empty);
    }
    if h.levels.len() != n || h.parents.len() != n {
        return Err(V::ShapeMismatch(
            "ids, levels and parents differ in length".into(),
        ));
    }
    let m = h.bottom_count;
    if m == 0 || m > n || h.summation.len() != n * m {
        return Err(V::ShapeMismatch(format!(
            "summation has {} entries for {n} nodes and {m} bottom columns",
            h.summation.len()
        )));
    }
    let roots = (0..n).filter(|&i| h.parents[i].is_none()).count();
    if roots != 1 || h.levels[0] != 1 || h.parents[0].is_some() {
        return Err(V::RootCount(roots));
    }
    for i in 1..n {
        let (prev, cur) = (h.levels[i - 1], h.levels[i]);
        if cur < prev || cur > prev + 1 {
            return Err(V::LevelOrder { node: i });
        }
        if cur == prev {
            if let (Some(a), Some(b)) = (h.parents[i - 1], h.parents[i]) {
                if b < a {
                    return Err(V::LevelOrder { node: i });
                }
            }
        }
    }
    for i in 1..n {
        match h.parents[i] {
            Some(p) if p < i && h.levels[p] + 1 == h.levels[i] => {}
            _ => return Err(V::ParentLevel { node: i }),
        }
    }
    let depth = h.depth;
    for i in 0..n {
        if h.levels[i] < depth && h.children[i].is_empty() {
            return Err(V::RaggedDepth { node: i });
        }
    }
    let bottom_start = n - m;
    if h.levels[bottom_start..].iter().any(|&l| l != depth)
        || h.levels[..bottom_start].contains(&depth)
    {
        return Err(V::ShapeMismatch(format!(
            "{m} bottom columns but the bottom level differs"
        )));
    }
    for (row, i) in (bottom_start..n).enumerate() {
        let r = h.summation_row(i);
        if r.iter().enumerate().any(|(j, &s)| s != u8::from(j == row)) {
            return Err(V::BottomIdentity { row: i });
        }
    }
    for i in 0..n {
        if h.summation_row(i).iter().any(|&s| s > 1) {
            return Err(V::NonBinary { row: i });
        }
    }
    for i in (0..bottom_start).rev() {
        let mut sum = vec![0u32; m];
        for &c in &h.children[i] {
            for (acc, &s) in sum.iter_mut().zip(h.summation_row(c)) {
                *acc += u32::from(s);
            }
        }
        if sum
            .iter()
            .zip(h.summation_row(i))
            .any(|(&a, &s)| a != u32::from(s))
        {
            return Err(V::AggregationConsistency { node: i });
        }
    }
    Ok(())
}

/// One hierarchical series: a hierarchy plus one equal-length series per node.
#[derive(Debug, Clone, PartialEq)]
pub struct HtsInstance {
    id: String,
    hierarchy: Hierarchy,
    series: Vec<TimeSeries>,
}

impl HtsInstance {
    pub fn new(
        id: impl Into<String>,
        hierarchy: Hierarchy,
        series: Vec<TimeSeries>,
    ) -> Result<Self, HtsError> {
        let id = id.into();
        validate_hierarchy(&hierarchy).map_err(HtsError::Hierarchy)?;
        if series.len() != hierarchy.node_count() {
            return Err(HtsError::Invariant(format!(
                "instance '{id}' has {} series for {} nodes",
                series.len(),
                hierarchy.node_count()
            )));
        }
        let len = series[0].len();
        if let Some(s) = series.iter().find(|s| s.len() != len) {
            return Err(HtsError::Invariant(format!(
                "instance '{id}': series '{}' has length {} but {} was expected",
                s.id(),
                s.len(),
                len
            )));
        }
        Ok(Self {
            id,
            hierarchy,
            series,
        })
    }

    /// Builds an instance from bottom series, aggregating upper nodes as `S b`.
    pub fn from_bottom(
        id: impl Into<String>,
        hierarchy: Hierarchy,
        bottom: Vec<Vec<f64>>,
    ) -> Result<Self, HtsError> {
        let id = id.into();
        if bottom.len() != hierarchy.bottom_count() || bottom.is_empty() {
            return Err(HtsError::Invariant(format!(
                "instance '{id}' needs {} bottom series, got {}",
                hierarchy.bottom_count(),
                bottom.len()
            )));
        }
        let len = bottom[0].len();
        let mut rows = vec![Vec::with_capacity(len); hierarchy.node_count()];
        let mut column = vec![0.0; bottom.len()];
        for t in 0..len {
            for (c, b) in column.iter_mut().zip(&bottom) {
                *c = b.get(t).copied().unwrap_or(f64::NAN);
            }
            for (row, v) in rows.iter_mut().zip(hierarchy.aggregate(&column)) {
                row.push(v);
            }
        }
        let series = rows
            .into_iter()
            .enumerate()
            .map(|(i, v)| TimeSeries::new(hierarchy.node_id(i), v))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(id, hierarchy, series)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn series(&self, node: usize) -> &TimeSeries {
        &self.series[node]
    }

    pub fn all_series(&self) -> &[TimeSeries] {
        &self.series
    }

    /// Shared series length of this instance.
    pub fn length(&self) -> usize {
        self.series[0].len()
    }

    /// First aggregated node (and time step) whose series differs from the
    /// sum of its bottom descendants by more than
    /// `rel_tol * (1 + max|value of that node|)`.
    pub fn coherence_violation(&self, rel_tol: f64) -> Option<(usize, usize)> {
        let h = &self.hierarchy;
        let bottom: Vec<&[f64]> = h.bottom_nodes().map(|b| self.series[b].values()).collect();
        for node in 0..h.aggregated_count() {
            let vals = self.series[node].values();
            let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let tau = rel_tol * (1.0 + scale);
            let row = h.summation_row(node);
            for (t, &v) in vals.iter().enumerate() {
                let mut acc = 0.0;
                for (s, b) in row.iter().zip(&bottom) {
                    if *s == 1 {
                        acc += b[t];
                    }
                }
                if (acc - v).abs() > tau {
                    return Some((node, t));
                }
            }
        }
        None
    }

    pub fn is_coherent(&self, rel_tol: f64) -> bool {
        self.coherence_violation(rel_tol).is_none()
    }
}

/// A series selected by [`HtsDataset::level_series`].
#[derive(Debug, Clone, Copy)]
pub struct LevelMember<'a> {
    pub instance: usize,
    pub node: usize,
    pub series: &'a TimeSeries,
}

/// `N >= 1` instances sharing the same depth `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct HtsDataset {
    instances: Vec<HtsInstance>,
    levels: usize,
}

impl HtsDataset {
    pub fn new(instances: Vec<HtsInstance>) -> Result<Self, HtsError> {
        let Some(first) = instances.first() else {
            return Err(HtsError::Schema("dataset has no instances".into()));
        };
        let levels = first.hierarchy.depth();
        if let Some(bad) = instances.iter().find(|i| i.hierarchy.depth() != levels) {
            return Err(HtsError::Invariant(format!(
                "instance '{}' has {} levels, expected {levels}",
                bad.id,
                bad.hierarchy.depth()
            )));
        }
        Ok(Self { instances, levels })
    }

    pub fn instances(&self) -> &[HtsInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// All series at `level`, ordered by instance then level-order node index.
    pub fn level_series(&self, level: usize) -> Result<Vec<LevelMember<'_>>, HtsError> {
        if level == 0 || level > self.levels {
            return Err(HtsError::LevelOutOfRange {
                level,
                depth: self.levels,
            });
        }
        Ok(self
            .instances
            .iter()
            .enumerate()
            .flat_map(|(ii, inst)| {
                inst.hierarchy
                    .nodes_at_level(level)
                    .map(move |node| LevelMember {
                        instance: ii,
                        node,
                        series: &inst.series[node],
                    })
            })
            .collect())
    }

    /// Number of series `G(level)` across all instances.
    pub fn level_count(&self, level: usize) -> usize {
        self.instances
            .iter()
            .map(|i| i.hierarchy.nodes_at_level(level).len())
            .sum()
    }

    /// Keeps the first `len(instance)` steps of every series.
    pub fn truncated<F: Fn(&HtsInstance) -> usize>(&self, len: F) -> Result<Self, HtsError> {
        let instances = self
            .instances
            .iter()
            .map(|inst| {
                let keep = len(inst).clamp(1, inst.length());
                let series = inst
                    .series
                    .iter()
                    .map(|s| TimeSeries::new(s.id(), s.values()[..keep].to_vec()))
                    .collect::<Result<Vec<_>, _>>()?;
                HtsInstance::new(inst.id.clone(), inst.hierarchy.clone(), series)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(instances)
    }
}
