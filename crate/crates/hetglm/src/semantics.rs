//! Language-enriched type representations.
//!
//! Node and edge types are described in natural language; a text encoder
//! turns each description set into a fixed-width embedding by mean pooling.
//! Those embeddings drive the tokenizer's parameter generators, so any
//! schema whose types are described can be encoded without retraining.
//!
//! The encoder is an interface. The built-in default hashes character
//! n-grams deterministically; a file-backed table of precomputed vectors can
//! stand in for a real pretrained sentence encoder.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, MetaRelation};
use crate::tape::Tensor;
use crate::util::StableHasher;

/// Description sets per node type and per relation triple.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SchemaDescriptions {
    pub node_descs: BTreeMap<String, Vec<String>>,
    /// Keyed by `src|rel|dst`.
    pub edge_descs: BTreeMap<String, Vec<String>>,
}

impl SchemaDescriptions {
    pub fn node(&self, ty: &str) -> Result<&[String]> {
        match self.node_descs.get(ty) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Error::MissingDescription {
                kind: "node type".into(),
                key: ty.to_string(),
            }),
        }
    }

    pub fn edge(&self, rel: &MetaRelation) -> Result<&[String]> {
        match self.edge_descs.get(&rel.key()) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Error::MissingDescription {
                kind: "relation".into(),
                key: rel.key(),
            }),
        }
    }

    /// Check that every type and relation of `g` has at least one
    /// description; the first uncovered key is named in the error.
    pub fn check_coverage(&self, g: &HeteroGraph) -> Result<()> {
        for ty in &g.node_types {
            self.node(ty)?;
        }
        for rel in &g.relations {
            self.edge(rel)?;
        }
        Ok(())
    }
}

/// Load a `descriptions.json` file.
///
/// Format: `{"node_types": {type: [desc, ...]}, "edge_types": {"src|rel|dst":
/// [desc, ...]}}`.
pub fn load_schema_descriptions(path: &Path) -> Result<SchemaDescriptions> {
    #[derive(Deserialize)]
    struct File {
        node_types: BTreeMap<String, Vec<String>>,
        edge_types: BTreeMap<String, Vec<String>>,
    }
    let raw =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: File = serde_json::from_str(&raw).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    for key in file.edge_types.keys() {
        MetaRelation::parse_key(key)?;
    }
    Ok(SchemaDescriptions {
        node_descs: file.node_types,
        edge_descs: file.edge_types,
    })
}

pub fn save_schema_descriptions(descs: &SchemaDescriptions, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct File<'a> {
        node_types: &'a BTreeMap<String, Vec<String>>,
        edge_types: &'a BTreeMap<String, Vec<String>>,
    }
    let json = serde_json::to_string_pretty(&File {
        node_types: &descs.node_descs,
        edge_types: &descs.edge_descs,
    })
    .expect("descriptions serialize");
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

/// What a type embedding describes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TypeKind {
    Node(String),
    Edge(MetaRelation),
}

/// Pooled, unit-norm embedding of one type's description set.
#[derive(Clone, Debug)]
pub struct TypeEmbedding {
    pub kind: TypeKind,
    pub vector: Vec<f64>,
}

impl TypeEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::from_vec(1, self.vector.len(), self.vector.clone())
    }
}

/// Deterministic text encoder: equal inputs give equal rows.
pub trait TextEncoder {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// One row per input string.
    fn encode(&self, texts: &[String]) -> Tensor;
}

/// Arithmetic mean over encoder rows (exposed for the pooling algebra).
pub fn mean_pool(rows: &Tensor) -> Vec<f64> {
    assert!(rows.rows > 0);
    let mut out = vec![0.0; rows.cols];
    for r in 0..rows.rows {
        for c in 0..rows.cols {
            out[c] += rows.get(r, c);
        }
    }
    for v in out.iter_mut() {
        *v /= rows.rows as f64;
    }
    out
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Encode one description set: mean pooling over encoder rows, then L2
/// normalization so the parameter generators see inputs of comparable scale
/// regardless of the encoder behind the interface.
pub fn encode_type(kind: TypeKind, descs: &[String], enc: &dyn TextEncoder) -> Result<TypeEmbedding> {
    if descs.is_empty() {
        let key = match &kind {
            TypeKind::Node(t) => t.clone(),
            TypeKind::Edge(r) => r.key(),
        };
        return Err(Error::EmptyDescriptions(key));
    }
    let rows = enc.encode(descs);
    let mut vector = mean_pool(&rows);
    l2_normalize(&mut vector);
    Ok(TypeEmbedding { kind, vector })
}

/// Embeddings for every type and relation of a graph's schema.
#[derive(Clone, Debug)]
pub struct SchemaEmbeddings {
    pub nodes: BTreeMap<String, TypeEmbedding>,
    pub edges: BTreeMap<String, TypeEmbedding>,
    pub dim: usize,
}

pub fn embed_schema(
    g: &HeteroGraph,
    descs: &SchemaDescriptions,
    enc: &dyn TextEncoder,
) -> Result<SchemaEmbeddings> {
    descs.check_coverage(g)?;
    let mut nodes = BTreeMap::new();
    for ty in &g.node_types {
        let emb = encode_type(TypeKind::Node(ty.clone()), descs.node(ty)?, enc)?;
        nodes.insert(ty.clone(), emb);
    }
    let mut edges = BTreeMap::new();
    for rel in &g.relations {
        let emb = encode_type(TypeKind::Edge(rel.clone()), descs.edge(rel)?, enc)?;
        edges.insert(rel.key(), emb);
    }
    Ok(SchemaEmbeddings {
        nodes,
        edges,
        dim: enc.dim(),
    })
}

/// Built-in encoder: bag of hashed character n-grams (3..=5) plus whole
/// words, signed hashing into `dim` buckets, unit-normalized.
pub struct HashingEncoder {
    dim: usize,
    seed: u64,
}

impl HashingEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 8, "hashing encoder needs dim >= 8");
        HashingEncoder { dim, seed }
    }

    fn encode_one(&self, text: &str, out: &mut [f64]) {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .collect();
        for w in &words {
            self.bump(out, &["word", w]);
            let chars: Vec<char> = w.chars().collect();
            for n in 3..=5usize {
                if chars.len() < n {
                    continue;
                }
                for start in 0..=chars.len() - n {
                    let gram: String = chars[start..start + n].iter().collect();
                    self.bump(out, &["gram", &gram]);
                }
            }
        }
        l2_normalize(out);
    }

    fn bump(&self, out: &mut [f64], parts: &[&str]) {
        let mut h = StableHasher::new();
        h.write_u64(self.seed);
        for p in parts {
            h.write_str(p);
        }
        let hash = h.finish();
        let idx = (hash % self.dim as u64) as usize;
        let sign = if (hash >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        out[idx] += sign;
    }
}

impl TextEncoder for HashingEncoder {
    fn name(&self) -> &str {
        "hashing"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, texts: &[String]) -> Tensor {
        let mut t = Tensor::zeros(texts.len(), self.dim);
        for (i, text) in texts.iter().enumerate() {
            let row = &mut t.data[i * self.dim..(i + 1) * self.dim];
            self.encode_one(text, row);
        }
        t
    }
}

/// Convenience constructor mirroring the module surface.
pub fn builtin_encoder(d_text: usize, seed: u64) -> HashingEncoder {
    HashingEncoder::new(d_text, seed)
}

/// Encoder backed by a TSV of precomputed vectors (`string TAB v1 v2 ...`).
/// Exact-string hits return the stored vector bit-exactly; misses fall back
/// to a hashing encoder of the same width.
pub struct FileEncoder {
    table: BTreeMap<String, Vec<f64>>,
    fallback: HashingEncoder,
}

impl FileEncoder {
    pub fn load(path: &Path, seed: u64) -> Result<Self> {
        let raw =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut table = BTreeMap::new();
        let mut dim: Option<usize> = None;
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let key = parts.next().unwrap_or_default().to_string();
            let rest = parts.next().ok_or_else(|| Error::Line {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: "expected `string<TAB>floats`".into(),
            })?;
            let vec: std::result::Result<Vec<f64>, _> =
                rest.split_whitespace().map(|t| t.parse::<f64>()).collect();
            let vec = vec.map_err(|_| Error::Line {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: "unparseable float".into(),
            })?;
            match dim {
                None => dim = Some(vec.len()),
                Some(d) if d != vec.len() => {
                    return Err(Error::Line {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        reason: format!("dimension {} != {}", vec.len(), d),
                    })
                }
                _ => {}
            }
            table.insert(key, vec);
        }
        let dim = dim.ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            reason: "empty embedding table".into(),
        })?;
        Ok(FileEncoder {
            table,
            fallback: HashingEncoder::new(dim, seed),
        })
    }
}

impl TextEncoder for FileEncoder {
    fn name(&self) -> &str {
        "file"
    }

    fn dim(&self) -> usize {
        self.fallback.dim
    }

    fn encode(&self, texts: &[String]) -> Tensor {
        let dim = self.dim();
        let mut t = Tensor::zeros(texts.len(), dim);
        for (i, text) in texts.iter().enumerate() {
            let row = &mut t.data[i * dim..(i + 1) * dim];
            if let Some(stored) = self.table.get(text) {
                row.copy_from_slice(stored);
            } else {
                self.fallback.encode_one(text, row);
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::derive_rng;
    use rand::Rng;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hashing_encoder_is_deterministic_rowwise() {
        let enc = builtin_encoder(64, 0);
        let t = enc.encode(&strs(&["a", "a"]));
        assert_eq!(t.row(0), t.row(1));
    }

    #[test]
    fn single_description_equals_its_encoding() {
        let enc = builtin_encoder(64, 0);
        let descs = strs(&["This node represents a movie"]);
        let emb = encode_type(TypeKind::Node("movie".into()), &descs, &enc).unwrap();
        let direct = enc.encode(&descs);
        for c in 0..64 {
            assert!((emb.vector[c] - direct.get(0, c)).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_pool_is_permutation_invariant() {
        let enc = builtin_encoder(128, 1);
        let a = strs(&["alpha beta", "gamma delta", "epsilon zeta"]);
        let b = strs(&["gamma delta", "epsilon zeta", "alpha beta"]);
        let ea = encode_type(TypeKind::Node("x".into()), &a, &enc).unwrap();
        let eb = encode_type(TypeKind::Node("x".into()), &b, &enc).unwrap();
        let max_diff = ea
            .vector
            .iter()
            .zip(eb.vector.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert_eq!(max_diff, 0.0);
    }

    #[test]
    fn duplicate_description_shifts_mean_algebraically() {
        let enc = builtin_encoder(64, 2);
        let base = strs(&["one fish", "two fish", "red fish"]);
        let rows = enc.encode(&base);
        let old_mean = mean_pool(&rows);
        let mut extended = base.clone();
        extended.push("red fish".to_string());
        let new_mean = mean_pool(&enc.encode(&extended));
        let dup = enc.encode(&strs(&["red fish"]));
        let k = base.len() as f64;
        for c in 0..64 {
            let expect = (k * old_mean[c] + dup.get(0, c)) / (k + 1.0);
            assert!((new_mean[c] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_vocabulary_pairs_have_low_cosine_at_256() {
        // 100 synthetic pairs with disjoint vocabularies; hashing at 256
        // dimensions keeps them dissimilar.
        let enc = builtin_encoder(256, 3);
        let mut rng = derive_rng(17, &["cosine-pairs"]);
        let mut word = |tag: &str| -> String {
            let len = 4 + (rng.gen::<u32>() % 4) as usize;
            let mut s = String::from(tag);
            for _ in 0..len {
                s.push((b'a' + (rng.gen::<u32>() % 26) as u8) as char);
            }
            s
        };
        for _ in 0..100 {
            let left: Vec<String> = (0..5).map(|_| word("q")).collect();
            let right: Vec<String> = (0..5).map(|_| word("z")).collect();
            let a = enc.encode(&[left.join(" ")]);
            let b = enc.encode(&[right.join(" ")]);
            let cos: f64 = (0..256).map(|c| a.get(0, c) * b.get(0, c)).sum();
            assert!(cos.abs() < 0.5, "cosine {cos} too high for disjoint vocab");
        }
    }

    #[test]
    fn file_encoder_hit_is_bit_exact_and_miss_falls_back() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("type_embeddings.tsv");
        fs::write(
            &path,
            "movie\t0.25 -1.5 3.0 0.125 7.0 -0.5 2.0 1.0\nactor\t1 2 3 4 5 6 7 8\n",
        )
        .unwrap();
        let enc = FileEncoder::load(&path, 0).unwrap();
        let t = enc.encode(&strs(&["movie", "unknown text"]));
        assert_eq!(t.row(0), &[0.25, -1.5, 3.0, 0.125, 7.0, -0.5, 2.0, 1.0]);
        let fb = builtin_encoder(8, 0).encode(&strs(&["unknown text"]));
        assert_eq!(t.row(1), fb.row(0));
    }

    #[test]
    fn coverage_error_names_missing_key() {
        let descs = SchemaDescriptions::default();
        let rel = MetaRelation::new("movie", "to", "actor");
        let err = descs.edge(&rel).unwrap_err();
        assert!(err.to_string().contains("movie|to|actor"));
    }

    #[test]
    fn empty_description_list_is_rejected() {
        let enc = builtin_encoder(16, 0);
        assert!(matches!(
            encode_type(TypeKind::Node("x".into()), &[], &enc),
            Err(Error::EmptyDescriptions(_))
        ));
    }
}
