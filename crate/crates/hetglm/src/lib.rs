//! Heterogeneous-graph language model pipeline.
//!
//! The crate wires a heterogeneous graph into a small autoregressive language
//! model through an in-context graph tokenizer whose type-specific weights
//! are generated from natural-language type descriptions:
//!
//! - [`graph`] — typed graph data model, on-disk packages, neighbor
//!   sampling, few-shot splits.
//! - [`semantics`] — type descriptions to fixed-width type embeddings.
//! - [`tokenizer`] — parameter allocator and attention layers producing
//!   graph tokens for arbitrary schemas.
//! - [`align`] — contrastive text-graph pretraining of the tokenizer.
//! - [`lm`] — decoder-only language model with graph-token injection and
//!   the two-stage tuning driver.
//! - [`corpus`] — instruction task builders and JSONL corpora.
//! - [`mot`] — prompt-engineering augmentation with an LLM client
//!   abstraction and a deterministic mock.
//! - [`icl`] — graph in-context learning prompt assembly.
//! - [`evals`] — answer parsing, Micro/Macro-F1 and AUC, the synthetic
//!   schema-transfer benchmark.
//! - [`app`] — configuration, experiment manifests, and the pipeline glue
//!   behind the `hetglm` binary.
//!
//! Runnable walkthroughs of each capability live under `examples/`.

pub mod align;
pub mod app;
pub mod ckpt;
pub mod corpus;
pub mod error;
pub mod evals;
pub mod graph;
pub mod icl;
pub mod lm;
pub mod mot;
pub mod semantics;
pub mod tape;
pub mod tokenizer;
pub mod util;

pub use error::{Error, Result};
