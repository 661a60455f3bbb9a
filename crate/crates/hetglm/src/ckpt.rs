//! Versioned binary checkpoints with a JSON header.
//!
//! Layout: 8-byte magic, u32 version, u32 header length, UTF-8 JSON header,
//! then all tensor values as f64 little-endian in header order. Offsets in
//! the header count f64 elements from the start of the blob.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{ParamStore, Tensor};
use crate::util::{fnv1a, hash_hex};

const MAGIC: &[u8; 8] = b"HGLMCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub config: serde_json::Value,
    #[serde(default)]
    pub vocab: Option<Vec<String>>,
    #[serde(default)]
    pub vocab_hash: Option<String>,
    #[serde(default)]
    pub extra: serde_json::Value,
    pub tensors: Vec<TensorMeta>,
}

pub struct LoadedCheckpoint {
    pub header: CheckpointHeader,
    pub tensors: BTreeMap<String, Tensor>,
}

pub fn vocab_hash(tokens: &[String]) -> String {
    let joined = tokens.join("\n");
    hash_hex(fnv1a(joined.as_bytes()))
}

/// Write one or more parameter stores; each store's tensors are prefixed
/// with its group name (`"lm/token_emb"`, `"tokenizer/gen.1.key_proj.w"`...).
pub fn save_checkpoint(
    path: &Path,
    kind: &str,
    config: serde_json::Value,
    vocab: Option<&[String]>,
    extra: serde_json::Value,
    stores: &[(&str, &ParamStore)],
) -> Result<()> {
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (prefix, store) in stores {
        for (name, t) in store.entries() {
            tensors.push(TensorMeta {
                name: format!("{prefix}/{name}"),
                rows: t.rows,
                cols: t.cols,
                offset,
            });
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            offset += t.data.len();
        }
    }
    let header = CheckpointHeader {
        kind: kind.to_string(),
        config,
        vocab: vocab.map(|v| v.to_vec()),
        vocab_hash: vocab.map(vocab_hash),
        extra,
        tensors,
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header_json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&blob);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut fixed = [0u8; 16];
    file.read_exact(&mut fixed)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if &fixed[0..8] != MAGIC {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: "bad checkpoint magic".into(),
        });
    }
    let version = u32::from_le_bytes(fixed[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: format!("unsupported checkpoint version {version}"),
        });
    }
    let header_len = u32::from_le_bytes(fixed[12..16].try_into().unwrap()) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    let mut blob = Vec::new();
    file.read_to_end(&mut blob)
        .map_err(|e| Error::io(path.display().to_string(), e))?;

    let mut tensors = BTreeMap::new();
    for meta in &header.tensors {
        let start = meta.offset * 8;
        let len = meta.rows * meta.cols * 8;
        if start + len > blob.len() {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("tensor {} overruns blob", meta.name),
            });
        }
        let data: Vec<f64> = blob[start..start + len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(
            meta.name.clone(),
            Tensor::from_vec(meta.rows, meta.cols, data),
        );
    }
    Ok(LoadedCheckpoint { header, tensors })
}

/// Copy values into an existing store; every store entry (under `prefix`)
/// must be present with matching shape.
pub fn load_into_store(
    loaded: &LoadedCheckpoint,
    prefix: &str,
    store: &mut ParamStore,
) -> Result<()> {
    for id in store.ids().collect::<Vec<_>>() {
        let key = format!("{prefix}/{}", store.name(id));
        let t = loaded
            .tensors
            .get(&key)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {key}")))?;
        let cur = store.get(id);
        if (cur.rows, cur.cols) != (t.rows, t.cols) {
            return Err(Error::CheckpointMismatch(format!(
                "tensor {key} has shape {}x{}, expected {}x{}",
                t.rows, t.cols, cur.rows, cur.cols
            )));
        }
        store.load(id, t.clone());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::derive_rng;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("x.ckpt");
        let mut rng = derive_rng(5, &["ckpt-test"]);
        let mut store = ParamStore::new();
        store.register("w", Tensor::randn(&mut rng, 3, 4, 1.3));
        store.register("b", Tensor::randn(&mut rng, 1, 4, 0.2));
        save_checkpoint(
            &path,
            "test",
            serde_json::json!({"f": 8}),
            Some(&["tok".to_string(), "ens".to_string()]),
            serde_json::Value::Null,
            &[("grp", &store)],
        )
        .unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.header.kind, "test");
        assert_eq!(loaded.header.vocab.as_ref().unwrap().len(), 2);

        let mut rng2 = derive_rng(6, &["ckpt-test"]);
        let mut store2 = ParamStore::new();
        store2.register("w", Tensor::randn(&mut rng2, 3, 4, 1.0));
        store2.register("b", Tensor::randn(&mut rng2, 1, 4, 1.0));
        load_into_store(&loaded, "grp", &mut store2).unwrap();
        assert_eq!(store.get(store.by_name("w").unwrap()), store2.get(store2.by_name("w").unwrap()));
        assert_eq!(store.get(store.by_name("b").unwrap()), store2.get(store2.by_name("b").unwrap()));
    }

    #[test]
    fn shape_mismatch_is_detected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("x.ckpt");
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros(2, 2));
        save_checkpoint(
            &path,
            "test",
            serde_json::Value::Null,
            None,
            serde_json::Value::Null,
            &[("grp", &store)],
        )
        .unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let mut store2 = ParamStore::new();
        store2.register("w", Tensor::zeros(3, 2));
        assert!(matches!(
            load_into_store(&loaded, "grp", &mut store2),
            Err(Error::CheckpointMismatch(_))
        ));
    }
}
