//! The parameter allocator: per-role affine generators mapping a type
//! embedding to the flattened parameters of one tokenizer layer.
//!
//! One generator exists per (layer, role). Node roles produce a square
//! weight plus a bias; relation roles produce one square block per
//! attention head and carry no bias. The generators themselves are ordinary
//! trainable parameters; everything they emit is a pure affine function of
//! the type embedding, which is what lets a trained tokenizer serve schemas
//! it has never seen.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantics::TypeEmbedding;
use crate::tape::{ParamBind, ParamId, ParamStore, Tape, Tensor, Var};
use crate::util::derive_rng;

/// Parameter roles of one attention layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    /// Post-aggregation update (weight and bias) applied per target type.
    NodeUpdate,
    /// Key projection of source nodes.
    KeyProj,
    /// Query projection of target nodes.
    QueryProj,
    /// Value/message projection of source nodes.
    ValueProj,
    /// Per-head attention mixing block of a relation.
    RelAttn,
    /// Per-head message mixing block of a relation.
    RelMsg,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::NodeUpdate,
        Role::KeyProj,
        Role::QueryProj,
        Role::ValueProj,
        Role::RelAttn,
        Role::RelMsg,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Role::NodeUpdate => "node_update",
            Role::KeyProj => "key_proj",
            Role::QueryProj => "query_proj",
            Role::ValueProj => "value_proj",
            Role::RelAttn => "rel_attn",
            Role::RelMsg => "rel_msg",
        }
    }

    pub fn is_relation_role(&self) -> bool {
        matches!(self, Role::RelAttn | Role::RelMsg)
    }

    pub fn has_bias(&self) -> bool {
        !self.is_relation_role()
    }

    /// Flattened length of the generated parameters.
    pub fn output_len(&self, cfg: &AllocatorConfig) -> usize {
        let f = cfg.f;
        if self.is_relation_role() {
            // heads blocks of (f/heads)^2
            f * f / cfg.heads
        } else {
            f * f + f
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AllocatorConfig {
    /// Type-embedding width fed to the generators.
    pub d_text: usize,
    /// Hidden width of graph tokens, uniform across types.
    pub f: usize,
    pub heads: usize,
    /// Attention layers; generators exist for layers 1..=layers, plus a
    /// layer-0 node_update generator used by the per-type input adapter.
    pub layers: usize,
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.f % self.heads != 0 {
            return Err(Error::Config(format!(
                "token width {} not divisible by heads {}",
                self.f, self.heads
            )));
        }
        if self.layers < 1 {
            return Err(Error::Config("allocator needs at least one layer".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.f / self.heads
    }
}

/// Generated parameters for one (type embedding, layer, role) triple.
pub struct GeneratedParams {
    /// f x f weight for node roles; heads stacked (f/heads) x (f/heads)
    /// blocks for relation roles.
    pub weight: Vec<Var>,
    /// 1 x f bias for node roles.
    pub bias: Option<Var>,
}

pub struct ParamAllocator {
    pub cfg: AllocatorConfig,
    gens: Vec<((usize, Role), (ParamId, ParamId))>,
}

const GEN_INIT_SCALE: f64 = 0.02;

impl ParamAllocator {
    /// Register all generators in `store`. Weights are drawn from
    /// N(0, scale/sqrt(d_text)); biases start at zero. The node_update
    /// generator's bias stream (columns feeding the generated b) starts at
    /// zero so generated layers open near-residual.
    pub fn new(cfg: AllocatorConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let std = GEN_INIT_SCALE / (cfg.d_text as f64).sqrt();
        let mut gens = Vec::new();
        for layer in 0..=cfg.layers {
            for role in Role::ALL {
                if layer == 0 && role != Role::NodeUpdate {
                    continue;
                }
                let out_len = role.output_len(&cfg);
                let mut rng = derive_rng(seed, &["allocator", role.name(), &layer.to_string()]);
                let mut w = Tensor::randn(&mut rng, cfg.d_text, out_len, std);
                if role == Role::NodeUpdate {
                    for r in 0..cfg.d_text {
                        for c in cfg.f * cfg.f..out_len {
                            w.set(r, c, 0.0);
                        }
                    }
                }
                let b = Tensor::zeros(1, out_len);
                let w_id = store.register(format!("gen.{layer}.{}.w", role.name()), w);
                let b_id = store.register(format!("gen.{layer}.{}.b", role.name()), b);
                gens.push(((layer, role), (w_id, b_id)));
            }
        }
        Ok(ParamAllocator { cfg, gens })
    }

    pub fn generator(&self, layer: usize, role: Role) -> Option<(ParamId, ParamId)> {
        self.gens
            .iter()
            .find(|((l, r), _)| *l == layer && *r == role)
            .map(|(_, ids)| *ids)
    }

    pub fn generator_ids(&self) -> impl Iterator<Item = (usize, Role, ParamId, ParamId)> + '_ {
        self.gens.iter().map(|((l, r), (w, b))| (*l, *r, *w, *b))
    }

    /// Generate and reshape parameters for one role from a type embedding.
    /// Purely functional in (generator values, embedding).
    pub fn allocate(
        &self,
        tape: &mut Tape,
        bind: &mut ParamBind,
        store: &ParamStore,
        emb: &TypeEmbedding,
        layer: usize,
        role: Role,
    ) -> Result<GeneratedParams> {
        if emb.dim() != self.cfg.d_text {
            return Err(Error::DimMismatch {
                what: format!("type embedding for {role:?}"),
                expected: self.cfg.d_text,
                got: emb.dim(),
            });
        }
        let (w_id, b_id) = self
            .generator(layer, role)
            .ok_or_else(|| Error::Config(format!("no generator for layer {layer} {role:?}")))?;
        let gw = bind.get(tape, store, w_id);
        let gb = bind.get(tape, store, b_id);
        let e = tape.leaf(emb.as_tensor());
        let lin = tape.matmul(e, gw);
        let flat = tape.add(lin, gb); // 1 x out_len

        let f = self.cfg.f;
        if role.is_relation_role() {
            let dh = self.cfg.head_dim();
            let mut blocks = Vec::with_capacity(self.cfg.heads);
            for h in 0..self.cfg.heads {
                let part = tape.slice_cols(flat, h * dh * dh, dh * dh);
                blocks.push(tape.reshape(part, dh, dh));
            }
            Ok(GeneratedParams {
                weight: blocks,
                bias: None,
            })
        } else {
            let wpart = tape.slice_cols(flat, 0, f * f);
            let w = tape.reshape(wpart, f, f);
            let b = tape.slice_cols(flat, f * f, f);
            Ok(GeneratedParams {
                weight: vec![w],
                bias: Some(b),
            })
        }
    }
}
