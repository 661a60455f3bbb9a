//! The in-context heterogeneous graph tokenizer.
//!
//! Per-type and per-relation layer parameters are not stored anywhere: a
//! [`ParamAllocator`] generates them on the fly from type-description
//! embeddings, and attention layers consume them to turn a sampled subgraph
//! into per-type hidden states ("graph tokens"). Only the generators and the
//! input adapter are trainable, and neither depends on any concrete schema,
//! so the same tokenizer instance serves graphs it has never seen.

mod allocator;

pub use allocator::{AllocatorConfig, GeneratedParams, ParamAllocator, Role};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, SubGraph};
use crate::semantics::SchemaEmbeddings;
use crate::tape::{ParamBind, ParamId, ParamStore, Tape, Tensor, Var};
use crate::util::derive_rng;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TokenizerConfig {
    pub alloc: AllocatorConfig,
    /// Standardized input feature width served by the shared adapter. Graphs
    /// with per-type widths fall back to generated per-type adapters.
    pub d_in: usize,
}

/// Where a token set came from; enough to re-materialize the subgraph.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub graph: String,
    pub center: (String, usize),
    pub fanouts: Vec<usize>,
    pub seed: u64,
}

/// Per-type hidden states emitted by the tokenizer, rows in sampled order.
#[derive(Clone, Debug)]
pub struct GraphTokenSet {
    pub by_type: BTreeMap<String, Tensor>,
    pub provenance: Provenance,
}

impl GraphTokenSet {
    pub fn width(&self) -> usize {
        self.by_type.values().next().map_or(0, |t| t.cols)
    }
}

/// Attention rows recorded during a traced tokenize:
/// (layer, target type, target position, head, attention over neighbors).
pub struct TokenizeTrace {
    pub attention: Vec<(usize, String, usize, usize, Tensor)>,
}

pub struct Tokenizer {
    pub cfg: TokenizerConfig,
    pub store: ParamStore,
    pub alloc: ParamAllocator,
    adapter_w: ParamId,
    adapter_b: ParamId,
}

impl Tokenizer {
    pub fn new(cfg: TokenizerConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let alloc = ParamAllocator::new(cfg.alloc.clone(), &mut store, seed)?;
        let mut rng = derive_rng(seed, &["tokenizer", "adapter"]);
        let std = 1.0 / (cfg.d_in as f64).sqrt();
        let adapter_w = store.register(
            "adapter.w",
            Tensor::randn(&mut rng, cfg.d_in, cfg.alloc.f, std),
        );
        let adapter_b = store.register("adapter.b", Tensor::zeros(1, cfg.alloc.f));
        Ok(Tokenizer {
            cfg,
            store,
            alloc,
            adapter_w,
            adapter_b,
        })
    }

    /// Ids of the shared-adapter parameters.
    pub fn adapter_ids(&self) -> (ParamId, ParamId) {
        (self.adapter_w, self.adapter_b)
    }

    fn check_coverage(
        &self,
        sub: &SubGraph,
        g: &HeteroGraph,
        emb: &SchemaEmbeddings,
    ) -> Result<()> {
        if emb.dim != self.cfg.alloc.d_text {
            return Err(Error::DimMismatch {
                what: "schema embeddings".into(),
                expected: self.cfg.alloc.d_text,
                got: emb.dim,
            });
        }
        for ty in sub.present_types(g) {
            if !emb.nodes.contains_key(ty) {
                return Err(Error::MissingDescription {
                    kind: "node type".into(),
                    key: ty.to_string(),
                });
            }
        }
        for (ri, rel) in g.relations.iter().enumerate() {
            if !sub.edges[ri].is_empty() && !emb.edges.contains_key(&rel.key()) {
                return Err(Error::MissingDescription {
                    kind: "relation".into(),
                    key: rel.key(),
                });
            }
        }
        Ok(())
    }

    /// Gather the raw feature rows of the sampled nodes, one matrix per
    /// present type.
    fn gather_inputs(&self, sub: &SubGraph, g: &HeteroGraph) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for ty in sub.present_types(g) {
            let feats = g
                .features
                .get(ty)
                .ok_or_else(|| Error::Invalid(format!("graph has no features for {ty:?}")))?;
            let list = &sub.nodes[ty];
            let mut x = Tensor::zeros(list.len(), feats.cols);
            for (i, &gidx) in list.iter().enumerate() {
                x.data[i * feats.cols..(i + 1) * feats.cols].copy_from_slice(feats.row(gidx));
            }
            out.insert(ty.to_string(), x);
        }
        Ok(out)
    }

    /// Map per-type features of arbitrary width onto token width f: the
    /// shared affine adapter when every width equals the standardized d_in,
    /// otherwise per-type affine maps generated from the node-type
    /// embeddings (node_update role at layer 0) over width-f padded or
    /// truncated features.
    fn input_adapter_on_tape(
        &self,
        tape: &mut Tape,
        bind: &mut ParamBind,
        inputs: &BTreeMap<String, Tensor>,
        emb: &SchemaEmbeddings,
    ) -> Result<BTreeMap<String, Var>> {
        let f = self.cfg.alloc.f;
        let standardized = inputs.values().all(|x| x.cols == self.cfg.d_in);
        let mut out = BTreeMap::new();
        if standardized {
            let w = bind.get(tape, &self.store, self.adapter_w);
            let b = bind.get(tape, &self.store, self.adapter_b);
            for (ty, x) in inputs {
                let xv = tape.leaf(x.clone());
                let lin = tape.matmul(xv, w);
                out.insert(ty.clone(), tape.add_row(lin, b));
            }
        } else {
            for (ty, x) in inputs {
                let mut padded = Tensor::zeros(x.rows, f);
                for r in 0..x.rows {
                    for c in 0..x.cols.min(f) {
                        padded.set(r, c, x.get(r, c));
                    }
                }
                let gp = self.alloc.allocate(
                    tape,
                    bind,
                    &self.store,
                    &emb.nodes[ty],
                    0,
                    Role::NodeUpdate,
                )?;
                let xv = tape.leaf(padded);
                let lin = tape.matmul(xv, gp.weight[0]);
                out.insert(ty.clone(), tape.add_row(lin, gp.bias.unwrap()));
            }
        }
        Ok(out)
    }

    /// One attention layer. Per target node, multi-head attention runs
    /// jointly over every sampled in-neighbor across all relations; nodes
    /// without neighbors pass their state through unchanged.
    #[allow(clippy::too_many_arguments)]
    fn hgt_layer_on_tape(
        &self,
        tape: &mut Tape,
        bind: &mut ParamBind,
        sub: &SubGraph,
        g: &HeteroGraph,
        emb: &SchemaEmbeddings,
        h_prev: &BTreeMap<String, Var>,
        layer: usize,
        trace: Option<&mut TokenizeTrace>,
    ) -> Result<BTreeMap<String, Var>> {
        let heads = self.cfg.alloc.heads;
        let dh = self.cfg.alloc.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let present: Vec<String> = h_prev.keys().cloned().collect();
        let active_rels: Vec<usize> = (0..g.relations.len())
            .filter(|&ri| !sub.edges[ri].is_empty())
            .collect();

        // Per-type projections: keys/values on source side, queries on
        // target side, update map on target side.
        let mut keys: BTreeMap<String, Var> = BTreeMap::new();
        let mut values: BTreeMap<String, Var> = BTreeMap::new();
        let mut queries: BTreeMap<String, Var> = BTreeMap::new();
        let mut updates: BTreeMap<String, (Var, Var)> = BTreeMap::new();
        for ty in &present {
            let h = h_prev[ty];
            let te = &emb.nodes[ty];
            let kp = self
                .alloc
                .allocate(tape, bind, &self.store, te, layer, Role::KeyProj)?;
            let lin = tape.matmul(h, kp.weight[0]);
            keys.insert(ty.clone(), tape.add_row(lin, kp.bias.unwrap()));
            let vp = self
                .alloc
                .allocate(tape, bind, &self.store, te, layer, Role::ValueProj)?;
            let lin = tape.matmul(h, vp.weight[0]);
            values.insert(ty.clone(), tape.add_row(lin, vp.bias.unwrap()));
            let qp = self
                .alloc
                .allocate(tape, bind, &self.store, te, layer, Role::QueryProj)?;
            let lin = tape.matmul(h, qp.weight[0]);
            queries.insert(ty.clone(), tape.add_row(lin, qp.bias.unwrap()));
            let up = self
                .alloc
                .allocate(tape, bind, &self.store, te, layer, Role::NodeUpdate)?;
            updates.insert(ty.clone(), (up.weight[0], up.bias.unwrap()));
        }

        // Per-relation head blocks.
        let mut rel_attn: BTreeMap<usize, Vec<Var>> = BTreeMap::new();
        let mut rel_msg: BTreeMap<usize, Vec<Var>> = BTreeMap::new();
        for &ri in &active_rels {
            let re = &emb.edges[&g.relations[ri].key()];
            let ra = self
                .alloc
                .allocate(tape, bind, &self.store, re, layer, Role::RelAttn)?;
            rel_attn.insert(ri, ra.weight);
            let rm = self
                .alloc
                .allocate(tape, bind, &self.store, re, layer, Role::RelMsg)?;
            rel_msg.insert(ri, rm.weight);
        }

        // Incidence per target: (relation, source type, source position).
        let mut incidence: BTreeMap<String, Vec<Vec<(usize, String, usize)>>> = BTreeMap::new();
        for ty in &present {
            incidence.insert(ty.clone(), vec![Vec::new(); sub.nodes[ty].len()]);
        }
        for &ri in &active_rels {
            let rel = &g.relations[ri];
            for &(spos, dpos) in &sub.edges[ri] {
                incidence.get_mut(&rel.dst).expect("dst present")[dpos].push((
                    ri,
                    rel.src.clone(),
                    spos,
                ));
            }
        }

        // Per-neighbor projected rows are shared across targets.
        let mut kw_cache: BTreeMap<(usize, usize, usize), Var> = BTreeMap::new();
        let mut mw_cache: BTreeMap<(usize, usize, usize), Var> = BTreeMap::new();

        let mut trace = trace;
        let mut out = BTreeMap::new();
        for ty in &present {
            let n = sub.nodes[ty].len();
            let mut rows: Vec<Var> = Vec::with_capacity(n);
            let (upd_w, upd_b) = updates[ty];
            for v in 0..n {
                let neigh = &incidence[ty][v];
                if neigh.is_empty() {
                    rows.push(tape.slice_rows(h_prev[ty], v, 1));
                    continue;
                }
                let q_row = tape.slice_rows(queries[ty], v, 1);
                let mut head_outs = Vec::with_capacity(heads);
                for hd in 0..heads {
                    let q_head = tape.slice_cols(q_row, hd * dh, dh);
                    let q_t = tape.transpose(q_head);
                    let mut logit_parts = Vec::with_capacity(neigh.len());
                    let mut msg_rows = Vec::with_capacity(neigh.len());
                    for &(ri, ref st, u) in neigh {
                        let kw = match kw_cache.get(&(ri, u, hd)) {
                            Some(&v) => v,
                            None => {
                                let k_row = tape.slice_rows(keys[st], u, 1);
                                let k_head = tape.slice_cols(k_row, hd * dh, dh);
                                let kw = tape.matmul(k_head, rel_attn[&ri][hd]);
                                kw_cache.insert((ri, u, hd), kw);
                                kw
                            }
                        };
                        logit_parts.push(tape.matmul(kw, q_t));
                        let mw = match mw_cache.get(&(ri, u, hd)) {
                            Some(&v) => v,
                            None => {
                                let v_row = tape.slice_rows(values[st], u, 1);
                                let v_head = tape.slice_cols(v_row, hd * dh, dh);
                                let mw = tape.matmul(v_head, rel_msg[&ri][hd]);
                                mw_cache.insert((ri, u, hd), mw);
                                mw
                            }
                        };
                        msg_rows.push(mw);
                    }
                    let logits = tape.concat_cols(&logit_parts);
                    let scaled = tape.scale(logits, scale);
                    let att = tape.softmax_rows(scaled);
                    if let Some(t) = trace.as_deref_mut() {
                        t.attention
                            .push((layer, ty.clone(), v, hd, tape.value(att).clone()));
                    }
                    let msgs = tape.concat_rows(&msg_rows);
                    head_outs.push(tape.matmul(att, msgs));
                }
                let agg = tape.concat_cols(&head_outs);
                let act = tape.gelu(agg);
                let upd = tape.matmul(act, upd_w);
                let with_bias = tape.add(upd, upd_b);
                let prev_row = tape.slice_rows(h_prev[ty], v, 1);
                rows.push(tape.add(with_bias, prev_row));
            }
            out.insert(ty.clone(), tape.concat_rows(&rows));
        }
        Ok(out)
    }

    /// Full tokenize on an existing tape; returns per-type token matrices as
    /// tape variables so callers can keep differentiating through them.
    pub fn tokenize_on_tape(
        &self,
        tape: &mut Tape,
        bind: &mut ParamBind,
        sub: &SubGraph,
        g: &HeteroGraph,
        emb: &SchemaEmbeddings,
        mut trace: Option<&mut TokenizeTrace>,
    ) -> Result<BTreeMap<String, Var>> {
        self.check_coverage(sub, g, emb)?;
        let inputs = self.gather_inputs(sub, g)?;
        let mut h = self.input_adapter_on_tape(tape, bind, &inputs, emb)?;
        for layer in 1..=self.cfg.alloc.layers {
            h = self.hgt_layer_on_tape(
                tape,
                bind,
                sub,
                g,
                emb,
                &h,
                layer,
                trace.as_deref_mut(),
            )?;
        }
        Ok(h)
    }

    /// Pure inference tokenize.
    pub fn tokenize(
        &self,
        sub: &SubGraph,
        g: &HeteroGraph,
        emb: &SchemaEmbeddings,
    ) -> Result<GraphTokenSet> {
        let mut tape = Tape::new();
        let mut bind = ParamBind::Frozen;
        let vars = self.tokenize_on_tape(&mut tape, &mut bind, sub, g, emb, None)?;
        self.collect_tokens(&tape, vars, sub, g)
    }

    /// Tokenize while recording attention rows.
    pub fn tokenize_traced(
        &self,
        sub: &SubGraph,
        g: &HeteroGraph,
        emb: &SchemaEmbeddings,
    ) -> Result<(GraphTokenSet, TokenizeTrace)> {
        let mut tape = Tape::new();
        let mut bind = ParamBind::Frozen;
        let mut trace = TokenizeTrace {
            attention: Vec::new(),
        };
        let vars =
            self.tokenize_on_tape(&mut tape, &mut bind, sub, g, emb, Some(&mut trace))?;
        Ok((self.collect_tokens(&tape, vars, sub, g)?, trace))
    }

    /// Tokens straight out of the input adapter, before any attention layer.
    pub fn adapter_tokens(
        &self,
        sub: &SubGraph,
        g: &HeteroGraph,
        emb: &SchemaEmbeddings,
    ) -> Result<GraphTokenSet> {
        self.check_coverage(sub, g, emb)?;
        let inputs = self.gather_inputs(sub, g)?;
        let mut tape = Tape::new();
        let mut bind = ParamBind::Frozen;
        let vars = self.input_adapter_on_tape(&mut tape, &mut bind, &inputs, emb)?;
        self.collect_tokens(&tape, vars, sub, g)
    }

    fn collect_tokens(
        &self,
        tape: &Tape,
        vars: BTreeMap<String, Var>,
        sub: &SubGraph,
        g: &HeteroGraph,
    ) -> Result<GraphTokenSet> {
        let mut by_type = BTreeMap::new();
        for (ty, var) in vars {
            let t = tape.value(var).clone();
            if !t.is_finite() {
                return Err(Error::Invalid(format!(
                    "non-finite graph tokens for type {ty:?}"
                )));
            }
            by_type.insert(ty, t);
        }
        Ok(GraphTokenSet {
            by_type,
            provenance: Provenance {
                graph: g.name.clone(),
                center: sub.center.clone(),
                fanouts: sub.fanouts.clone(),
                seed: sub.seed,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sample_subgraph, MetaRelation};
    use crate::semantics::{builtin_encoder, embed_schema, SchemaDescriptions};
    use crate::tape::Binder;
    use crate::util::derive_rng_n;
    use rand::Rng;

    fn descs_for(g: &HeteroGraph, flavor: &str) -> SchemaDescriptions {
        let mut d = SchemaDescriptions::default();
        for ty in &g.node_types {
            d.node_descs.insert(
                ty.clone(),
                vec![
                    format!("This node represents a {flavor} {ty}"),
                    format!("A {ty} entity in the {flavor} graph"),
                ],
            );
        }
        for rel in &g.relations {
            d.edge_descs.insert(
                rel.key(),
                vec![format!(
                    "The {} {} connects to the {}",
                    rel.src, rel.rel, rel.dst
                )],
            );
        }
        d
    }

    fn small_graph(names: [&str; 3], seed: u64) -> HeteroGraph {
        let mut rng = derive_rng_n(seed, &["tok-test-graph"], &[]);
        let mut counts = BTreeMap::new();
        counts.insert(names[0].to_string(), 6);
        counts.insert(names[1].to_string(), 5);
        counts.insert(names[2].to_string(), 4);
        let mut g = HeteroGraph::new(
            "toktest",
            "test domain",
            names.iter().map(|s| s.to_string()).collect(),
            vec![
                MetaRelation::new(names[0], "to", names[1]),
                MetaRelation::new(names[1], "to", names[0]),
                MetaRelation::new(names[0], "to", names[2]),
                MetaRelation::new(names[2], "to", names[0]),
            ],
            counts,
        );
        let mut fwd01 = Vec::new();
        let mut fwd02 = Vec::new();
        for s in 0..6u32 {
            for d in 0..5u32 {
                if (s + d) % 2 == 0 {
                    fwd01.push((s, d));
                }
            }
            for d in 0..4u32 {
                if (s + d) % 3 == 0 {
                    fwd02.push((s, d));
                }
            }
        }
        g.adjacency[0] = fwd01.clone();
        g.adjacency[1] = fwd01.iter().map(|&(s, d)| (d, s)).collect();
        g.adjacency[2] = fwd02.clone();
        g.adjacency[3] = fwd02.iter().map(|&(s, d)| (d, s)).collect();
        for (ty, n) in [(names[0], 6), (names[1], 5), (names[2], 4)] {
            g.features
                .insert(ty.to_string(), Tensor::randn(&mut rng, n, 8, 1.0));
        }
        g.finalize().unwrap()
    }

    fn test_tokenizer(layers: usize) -> Tokenizer {
        Tokenizer::new(
            TokenizerConfig {
                alloc: AllocatorConfig {
                    d_text: 32,
                    f: 8,
                    heads: 2,
                    layers,
                },
                d_in: 8,
            },
            0,
        )
        .unwrap()
    }

    #[test]
    fn shape_law_and_center_row() {
        let g = small_graph(["a", "b", "c"], 1);
        let sub = sample_subgraph(&g, ("a", 0), &[3, 2], 7).unwrap();
        let enc = builtin_encoder(32, 0);
        let emb = embed_schema(&g, &descs_for(&g, "alpha"), &enc).unwrap();
        let tok = test_tokenizer(2);
        let tokens = tok.tokenize(&sub, &g, &emb).unwrap();
        for (ty, list) in &sub.nodes {
            if list.is_empty() {
                continue;
            }
            let t = &tokens.by_type[ty];
            assert_eq!(t.rows, list.len());
            assert_eq!(t.cols, 8);
        }
        assert_eq!(sub.nodes["a"][0], 0, "center first in its type list");
        assert_eq!(tokens.provenance.center, ("a".to_string(), 0));
    }

    #[test]
    fn attention_rows_sum_to_one_and_single_neighbor_weight_is_exact() {
        let g = small_graph(["a", "b", "c"], 2);
        let enc = builtin_encoder(32, 0);
        let emb = embed_schema(&g, &descs_for(&g, "alpha"), &enc).unwrap();
        let tok = test_tokenizer(2);
        for seed in 0..4u64 {
            let sub = sample_subgraph(&g, ("a", (seed % 6) as usize), &[3, 2], seed).unwrap();
            let (_, trace) = tok.tokenize_traced(&sub, &g, &emb).unwrap();
            assert!(!trace.attention.is_empty());
            for (_, _, _, _, att) in &trace.attention {
                let sum: f64 = att.data.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6, "attention sum {sum}");
                if att.cols == 1 {
                    assert_eq!(att.data[0], 1.0, "single-neighbor weight must be exact");
                }
            }
        }
    }

    #[test]
    fn zero_neighbor_nodes_pass_through_exactly() {
        // Isolated "a" nodes: the relation exists but carries no edges.
        let mut counts = BTreeMap::new();
        counts.insert("a".to_string(), 2);
        counts.insert("b".to_string(), 2);
        let mut g = HeteroGraph::new(
            "iso",
            "test",
            vec!["a".into(), "b".into()],
            vec![MetaRelation::new("a", "to", "b")],
            counts,
        );
        g.adjacency[0] = vec![];
        let mut rng = derive_rng_n(5, &["iso"], &[]);
        g.features
            .insert("a".into(), Tensor::randn(&mut rng, 2, 8, 1.0));
        g.features
            .insert("b".into(), Tensor::randn(&mut rng, 2, 8, 1.0));
        let g = g.finalize().unwrap();
        let sub = sample_subgraph(&g, ("a", 0), &[4], 0).unwrap();
        let enc = builtin_encoder(32, 0);
        let emb = embed_schema(&g, &descs_for(&g, "iso"), &enc).unwrap();
        let tok = test_tokenizer(2);
        let adapter = tok.adapter_tokens(&sub, &g, &emb).unwrap();
        let full = tok.tokenize(&sub, &g, &emb).unwrap();
        assert_eq!(adapter.by_type["a"], full.by_type["a"]);
    }

    #[test]
    fn residual_identity_with_zeroed_update_generators() {
        let g = small_graph(["a", "b", "c"], 3);
        let sub = sample_subgraph(&g, ("a", 1), &[3, 2], 11).unwrap();
        let enc = builtin_encoder(32, 0);
        let emb = embed_schema(&g, &descs_for(&g, "alpha"), &enc).unwrap();
        let mut tok = test_tokenizer(2);
        for layer in 1..=2 {
            let (w_id, b_id) = tok.alloc.generator(layer, Role::NodeUpdate).unwrap();
            let w = tok.store.get(w_id);
            let zeros = Tensor::zeros(w.rows, w.cols);
            tok.store.load(w_id, zeros);
            let b = tok.store.get(b_id);
            let zeros = Tensor::zeros(b.rows, b.cols);
            tok.store.load(b_id, zeros);
        }
        let adapter = tok.adapter_tokens(&sub, &g, &emb).unwrap();
        let full = tok.tokenize(&sub, &g, &emb).unwrap();
        for (ty, t) in &full.by_type {
            assert_eq!(t, &adapter.by_type[ty], "type {ty} not pure residual");
        }
    }

    #[test]
    fn schema_name_independence() {
        // Renaming types while keeping identical description sets and data
        // yields identical tokens.
        let g1 = small_graph(["a", "b", "c"], 4);
        let g2 = small_graph(["x", "y", "z"], 4);
        let enc = builtin_encoder(32, 0);
        let mut d1 = SchemaDescriptions::default();
        let mut d2 = SchemaDescriptions::default();
        for (ty1, ty2) in [("a", "x"), ("b", "y"), ("c", "z")] {
            let descs = vec![format!("shared description for slot {ty1}")];
            d1.node_descs.insert(ty1.to_string(), descs.clone());
            d2.node_descs.insert(ty2.to_string(), descs);
        }
        for (r1, r2) in g1.relations.iter().zip(g2.relations.iter()) {
            let descs = vec![format!("shared rel description {}", r1.rel)];
            d1.edge_descs.insert(r1.key(), descs.clone());
            d2.edge_descs.insert(r2.key(), descs);
        }
        let e1 = embed_schema(&g1, &d1, &enc).unwrap();
        let e2 = embed_schema(&g2, &d2, &enc).unwrap();
        let tok = test_tokenizer(2);
        let s1 = sample_subgraph(&g1, ("a", 0), &[3, 2], 9).unwrap();
        let s2 = sample_subgraph(&g2, ("x", 0), &[3, 2], 9).unwrap();
        let t1 = tok.tokenize(&s1, &g1, &e1).unwrap();
        let t2 = tok.tokenize(&s2, &g2, &e2).unwrap();
        assert_eq!(t1.by_type["a"], t2.by_type["x"]);
        assert_eq!(t1.by_type["b"], t2.by_type["y"]);
        assert_eq!(t1.by_type["c"], t2.by_type["z"]);
    }

    #[test]
    fn one_allocator_serves_different_schemas() {
        let g3 = small_graph(["m", "d", "ac"], 5);
        let mut counts = BTreeMap::new();
        for (t, n) in [("p", 5), ("au", 4), ("t", 3), ("c", 2)] {
            counts.insert(t.to_string(), n);
        }
        let mut g4 = HeteroGraph::new(
            "four",
            "test",
            vec!["p".into(), "au".into(), "t".into(), "c".into()],
            vec![
                MetaRelation::new("p", "to", "au"),
                MetaRelation::new("au", "to", "p"),
                MetaRelation::new("p", "to", "t"),
                MetaRelation::new("p", "to", "c"),
            ],
            counts,
        );
        g4.adjacency[0] = vec![(0, 0), (1, 1), (2, 2), (3, 3), (4, 0)];
        g4.adjacency[1] = vec![(0, 0), (1, 1), (2, 2), (3, 3), (0, 4)];
        g4.adjacency[2] = vec![(0, 0), (1, 1), (2, 2)];
        g4.adjacency[3] = vec![(0, 0), (1, 1), (2, 1), (3, 0), (4, 1)];
        let mut rng = derive_rng_n(6, &["four"], &[]);
        for (t, n) in [("p", 5), ("au", 4), ("t", 3), ("c", 2)] {
            g4.features
                .insert(t.to_string(), Tensor::randn(&mut rng, n, 8, 1.0));
        }
        let g4 = g4.finalize().unwrap();

        let enc = builtin_encoder(32, 0);
        let e3 = embed_schema(&g3, &descs_for(&g3, "movie"), &enc).unwrap();
        let e4 = embed_schema(&g4, &descs_for(&g4, "paper"), &enc).unwrap();
        let tok = test_tokenizer(2);
        let s3 = sample_subgraph(&g3, ("m", 0), &[3, 2], 0).unwrap();
        let s4 = sample_subgraph(&g4, ("p", 0), &[3, 2], 0).unwrap();
        let t3 = tok.tokenize(&s3, &g3, &e3).unwrap();
        let t4 = tok.tokenize(&s4, &g4, &e4).unwrap();
        assert_eq!(t3.width(), 8);
        assert_eq!(t4.width(), 8);
        assert_eq!(t4.by_type.len(), 4);
    }

    #[test]
    fn per_type_adapter_handles_heterogeneous_widths() {
        let mut counts = BTreeMap::new();
        counts.insert("a".to_string(), 3);
        counts.insert("b".to_string(), 3);
        let mut g = HeteroGraph::new(
            "widths",
            "test",
            vec!["a".into(), "b".into()],
            vec![
                MetaRelation::new("a", "to", "b"),
                MetaRelation::new("b", "to", "a"),
            ],
            counts,
        );
        g.adjacency[0] = vec![(0, 0), (1, 1), (2, 2)];
        g.adjacency[1] = vec![(0, 0), (1, 1), (2, 2)];
        let mut rng = derive_rng_n(7, &["widths"], &[]);
        g.features
            .insert("a".into(), Tensor::randn(&mut rng, 3, 5, 1.0));
        g.features
            .insert("b".into(), Tensor::randn(&mut rng, 3, 11, 1.0));
        let g = g.finalize().unwrap();
        let sub = sample_subgraph(&g, ("a", 0), &[2, 2], 1).unwrap();
        let enc = builtin_encoder(32, 0);
        let emb = embed_schema(&g, &descs_for(&g, "mixed"), &enc).unwrap();
        let tok = test_tokenizer(1);
        let tokens = tok.tokenize(&sub, &g, &emb).unwrap();
        assert_eq!(tokens.by_type["a"].cols, 8);
        assert_eq!(tokens.by_type["b"].cols, 8);
    }

    #[test]
    fn uncovered_relation_is_named() {
        let g = small_graph(["a", "b", "c"], 8);
        let enc = builtin_encoder(32, 0);
        let mut d = descs_for(&g, "alpha");
        d.edge_descs
            .remove(&MetaRelation::new("a", "to", "b").key());
        let err = embed_schema(&g, &d, &enc).unwrap_err();
        assert!(err.to_string().contains("a|to|b"));
    }

    #[test]
    fn tokenize_gradients_match_finite_differences() {
        // Small end-to-end gradcheck through two layers; the acceptance
        // suite runs the full-size version.
        let g = small_graph(["a", "b", "c"], 9);
        let sub = sample_subgraph(&g, ("a", 2), &[2, 1], 3).unwrap();
        let enc = builtin_encoder(32, 0);
        let emb = embed_schema(&g, &descs_for(&g, "alpha"), &enc).unwrap();
        let mut tok = test_tokenizer(2);

        fn loss_of(
            tok: &Tokenizer,
            sub: &SubGraph,
            g: &HeteroGraph,
            emb: &SchemaEmbeddings,
        ) -> f64 {
            let mut tape = Tape::new();
            let mut bind = ParamBind::Frozen;
            let vars = tok
                .tokenize_on_tape(&mut tape, &mut bind, sub, g, emb, None)
                .unwrap();
            let mut acc: Option<Var> = None;
            for (_, v) in vars {
                let t = tape.tanh(v);
                let s = tape.sum_all(t);
                acc = Some(match acc {
                    Some(a) => tape.add(a, s),
                    None => s,
                });
            }
            tape.value(acc.unwrap()).item()
        }

        // Analytic gradients.
        let mut tape = Tape::new();
        let mut binder = Binder::new();
        {
            let mut bind = ParamBind::Train(&mut binder);
            let vars = tok
                .tokenize_on_tape(&mut tape, &mut bind, &sub, &g, &emb, None)
                .unwrap();
            let mut acc: Option<Var> = None;
            for (_, v) in vars {
                let t = tape.tanh(v);
                let s = tape.sum_all(t);
                acc = Some(match acc {
                    Some(a) => tape.add(a, s),
                    None => s,
                });
            }
            let node_grads = tape.backward(acc.unwrap());
            let grads = binder.collect(&tok.store, &node_grads);

            let mut rng = derive_rng_n(0, &["tok-gradcheck"], &[]);
            let eps = 1e-5;
            let ids: Vec<_> = tok.store.ids().collect();
            for id in ids {
                let len = tok.store.get(id).data.len();
                for _ in 0..3 {
                    let coord = (rng.gen::<u64>() % len as u64) as usize;
                    let an = grads.0[id.0].data[coord];
                    let orig = tok.store.get(id).data[coord];
                    tok.store.get_mut(id).data[coord] = orig + eps;
                    let plus = loss_of(&tok, &sub, &g, &emb);
                    tok.store.get_mut(id).data[coord] = orig - eps;
                    let minus = loss_of(&tok, &sub, &g, &emb);
                    tok.store.get_mut(id).data[coord] = orig;
                    let fd = (plus - minus) / (2.0 * eps);
                    assert!(
                        crate::tape::rel_err(an, fd) < 1e-4,
                        "param {} coord {}: analytic {} vs fd {}",
                        id.0,
                        coord,
                        an,
                        fd
                    );
                }
            }
        }
    }
}
