//! Heterogeneous graph data model.
//!
//! A graph is a set of typed node collections plus directed edge lists keyed
//! by meta relation (source type, relation name, target type). Graphs are
//! immutable once finalized and safe to share across workers.

mod io;
mod sample;
mod split;

pub use io::{load_graph, read_matrix, save_graph, write_matrix};
pub use sample::sample_subgraph;
pub use split::{split_few_shot, FewShotSplit};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::Tensor;

/// The triple <source type, relation, target type> characterizing an edge.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetaRelation {
    pub src: String,
    pub rel: String,
    pub dst: String,
}

impl MetaRelation {
    pub fn new(src: impl Into<String>, rel: impl Into<String>, dst: impl Into<String>) -> Self {
        MetaRelation {
            src: src.into(),
            rel: rel.into(),
            dst: dst.into(),
        }
    }

    /// Stable textual key, used in file names and description tables.
    pub fn key(&self) -> String {
        format!("{}|{}|{}", self.src, self.rel, self.dst)
    }

    pub fn parse_key(key: &str) -> Result<Self> {
        let parts: Vec<&str> = key.split('|').collect();
        if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Invalid(format!(
                "relation key {key:?} is not src|rel|dst"
            )));
        }
        Ok(MetaRelation::new(parts[0], parts[1], parts[2]))
    }
}

impl std::fmt::Display for MetaRelation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.src, self.rel, self.dst)
    }
}

/// Labels over one node type.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Labels {
    pub node_type: String,
    pub classes: Vec<String>,
    pub values: Vec<usize>,
}

/// Immutable heterogeneous graph with per-type features and per-relation
/// edge lists. Use [`HeteroGraph::finalize`] after construction; it checks
/// the structural invariants and builds the adjacency indexes the sampler
/// needs.
#[derive(Clone, Debug)]
pub struct HeteroGraph {
    pub name: String,
    /// Free-text domain phrase used by instruction templates
    /// ("internet movie", "academic publication", ...).
    pub domain: String,
    pub node_types: Vec<String>,
    pub relations: Vec<MetaRelation>,
    pub counts: BTreeMap<String, usize>,
    pub features: BTreeMap<String, Tensor>,
    /// Edge lists aligned with `relations`; entries are (src index, dst index).
    pub adjacency: Vec<Vec<(u32, u32)>>,
    pub labels: Option<Labels>,
    pub texts: BTreeMap<String, Vec<String>>,
    fwd: Vec<Vec<Vec<u32>>>,
    bwd: Vec<Vec<Vec<u32>>>,
    finalized: bool,
}

impl HeteroGraph {
    pub fn new(
        name: impl Into<String>,
        domain: impl Into<String>,
        node_types: Vec<String>,
        relations: Vec<MetaRelation>,
        counts: BTreeMap<String, usize>,
    ) -> Self {
        let nrel = relations.len();
        HeteroGraph {
            name: name.into(),
            domain: domain.into(),
            node_types,
            relations,
            counts,
            features: BTreeMap::new(),
            adjacency: vec![Vec::new(); nrel],
            labels: None,
            texts: BTreeMap::new(),
            fwd: Vec::new(),
            bwd: Vec::new(),
            finalized: false,
        }
    }

    pub fn count(&self, node_type: &str) -> usize {
        self.counts.get(node_type).copied().unwrap_or(0)
    }

    pub fn has_node_type(&self, node_type: &str) -> bool {
        self.node_types.iter().any(|t| t == node_type)
    }

    pub fn relation_index(&self, rel: &MetaRelation) -> Option<usize> {
        self.relations.iter().position(|r| r == rel)
    }

    /// Validate invariants and build the forward/backward adjacency indexes.
    pub fn finalize(mut self) -> Result<Self> {
        for t in &self.node_types {
            if !self.counts.contains_key(t) {
                return Err(Error::Invalid(format!("no node count declared for {t:?}")));
            }
        }
        let mut seen_pairs: BTreeMap<(String, String, String), ()> = BTreeMap::new();
        for rel in &self.relations {
            for side in [&rel.src, &rel.dst] {
                if !self.has_node_type(side) {
                    return Err(Error::UnknownNodeType(side.clone()));
                }
            }
            let key = (rel.src.clone(), rel.rel.clone(), rel.dst.clone());
            if seen_pairs.insert(key, ()).is_some() {
                return Err(Error::Invalid(format!("duplicate relation {rel}")));
            }
        }
        for (ty, feats) in &self.features {
            let declared = self.count(ty);
            if feats.rows != declared {
                return Err(Error::ShapeMismatch {
                    what: format!("features of {ty:?}"),
                    declared: format!("{declared} rows"),
                    found: format!("{} rows", feats.rows),
                });
            }
        }
        for (ri, rel) in self.relations.iter().enumerate() {
            let (ns, nd) = (self.count(&rel.src), self.count(&rel.dst));
            for &(s, d) in &self.adjacency[ri] {
                if s as usize >= ns {
                    return Err(Error::DanglingEdge {
                        src: rel.src.clone(),
                        rel: rel.rel.clone(),
                        dst: rel.dst.clone(),
                        side: "source".into(),
                        index: s as usize,
                        count: ns,
                    });
                }
                if d as usize >= nd {
                    return Err(Error::DanglingEdge {
                        src: rel.src.clone(),
                        rel: rel.rel.clone(),
                        dst: rel.dst.clone(),
                        side: "target".into(),
                        index: d as usize,
                        count: nd,
                    });
                }
            }
        }
        if let Some(labels) = &self.labels {
            if !self.has_node_type(&labels.node_type) {
                return Err(Error::UnknownNodeType(labels.node_type.clone()));
            }
            let n = self.count(&labels.node_type);
            if labels.values.len() != n {
                return Err(Error::ShapeMismatch {
                    what: format!("labels of {:?}", labels.node_type),
                    declared: format!("{n}"),
                    found: format!("{}", labels.values.len()),
                });
            }
            for &v in &labels.values {
                if v >= labels.classes.len() {
                    return Err(Error::LabelOutOfRange {
                        ty: labels.node_type.clone(),
                        value: v as i64,
                        classes: labels.classes.len(),
                    });
                }
            }
        }
        for (ty, lines) in &self.texts {
            let n = self.count(ty);
            if lines.len() != n {
                return Err(Error::ShapeMismatch {
                    what: format!("texts of {ty:?}"),
                    declared: format!("{n}"),
                    found: format!("{}", lines.len()),
                });
            }
        }

        self.fwd = Vec::with_capacity(self.relations.len());
        self.bwd = Vec::with_capacity(self.relations.len());
        for (ri, rel) in self.relations.iter().enumerate() {
            let mut f = vec![Vec::new(); self.count(&rel.src)];
            let mut b = vec![Vec::new(); self.count(&rel.dst)];
            for &(s, d) in &self.adjacency[ri] {
                f[s as usize].push(d);
                b[d as usize].push(s);
            }
            self.fwd.push(f);
            self.bwd.push(b);
        }
        self.finalized = true;
        Ok(self)
    }

    pub(crate) fn out_neighbors(&self, rel_index: usize, src: usize) -> &[u32] {
        debug_assert!(self.finalized);
        &self.fwd[rel_index][src]
    }

    pub(crate) fn in_neighbors(&self, rel_index: usize, dst: usize) -> &[u32] {
        debug_assert!(self.finalized);
        &self.bwd[rel_index][dst]
    }

    /// Indices of the labeled type's nodes that carry class `c`.
    pub fn class_members(&self, c: usize) -> Vec<usize> {
        match &self.labels {
            Some(l) => l
                .values
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == c)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }
}

/// A sampled neighborhood around a center node. Node indices are global;
/// `nodes` keeps one deduplicated list per type in sampled order with the
/// center at position 0 of its type.
#[derive(Clone, Debug, PartialEq)]
pub struct SubGraph {
    pub center: (String, usize),
    pub fanouts: Vec<usize>,
    pub seed: u64,
    pub nodes: BTreeMap<String, Vec<usize>>,
    /// Newly sampled nodes per hop; layer 0 holds only the center.
    pub layers: Vec<BTreeMap<String, Vec<usize>>>,
    /// Induced edges in local coordinates, aligned with the graph's
    /// relation list: (relation index, src position, dst position).
    pub edges: Vec<Vec<(usize, usize)>>,
}

impl SubGraph {
    /// Types that actually have sampled nodes, in graph schema order.
    pub fn present_types<'g>(&self, g: &'g HeteroGraph) -> Vec<&'g str> {
        g.node_types
            .iter()
            .filter(|t| self.nodes.get(t.as_str()).map_or(false, |v| !v.is_empty()))
            .map(|t| t.as_str())
            .collect()
    }

    pub fn local_index(&self, ty: &str, global: usize) -> Option<usize> {
        self.nodes.get(ty)?.iter().position(|&g| g == global)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.values().map(|v| v.len()).sum()
    }
}
