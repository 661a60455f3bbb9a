//! On-disk graph packages.
//!
//! A package is a directory with a `schema.json` plus convention-named data
//! files:
//!
//! - `features.<type>.mat` — dense matrix, 16-byte header (8-byte magic,
//!   u32 rows, u32 cols, little-endian), then rows*cols f64 LE values;
//! - `edges.<src>__<rel>__<dst>.tsv` — one `src<TAB>dst` index pair per line;
//! - `labels.<type>.tsv` — one class index per node per line (optional);
//! - `texts.<type>.txt` — one UTF-8 line per node (optional);
//! - `descriptions.json` — type description sets (read by the semantics
//!   module, referenced here for packaging completeness).

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HeteroGraph, Labels, MetaRelation};
use crate::error::{Error, Result};
use crate::tape::Tensor;

const MATRIX_MAGIC: &[u8; 8] = b"HGMATF64";

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    name: String,
    domain: String,
    node_types: Vec<String>,
    relations: Vec<MetaRelation>,
    counts: BTreeMap<String, usize>,
    #[serde(default)]
    classes: Option<ClassesFile>,
}

#[derive(Serialize, Deserialize)]
struct ClassesFile {
    node_type: String,
    names: Vec<String>,
}

/// Write a dense matrix in the package format.
pub fn write_matrix(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + t.data.len() * 8);
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
    for v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a dense matrix in the package format.
pub fn read_matrix(path: &Path) -> Result<Tensor> {
    let mut file =
        fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if &header[0..8] != MATRIX_MAGIC {
        return Err(Error::Format {
            path: path.display().to_string(),
            reason: "bad magic".into(),
        });
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if raw.len() != rows * cols * 8 {
        return Err(Error::ShapeMismatch {
            what: format!("matrix file {}", path.display()),
            declared: format!("{rows}x{cols} ({} bytes)", rows * cols * 8),
            found: format!("{} bytes", raw.len()),
        });
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor::from_vec(rows, cols, data))
}

fn edge_file_name(rel: &MetaRelation) -> String {
    format!("edges.{}__{}__{}.tsv", rel.src, rel.rel, rel.dst)
}

/// Load a graph package directory.
pub fn load_graph(dir: &Path) -> Result<HeteroGraph> {
    let schema_path = dir.join("schema.json");
    let raw = fs::read_to_string(&schema_path)
        .map_err(|e| Error::io(schema_path.display().to_string(), e))?;
    let schema: SchemaFile = serde_json::from_str(&raw).map_err(|e| Error::Format {
        path: schema_path.display().to_string(),
        reason: e.to_string(),
    })?;

    let mut g = HeteroGraph::new(
        schema.name,
        schema.domain,
        schema.node_types.clone(),
        schema.relations.clone(),
        schema.counts,
    );

    for ty in &schema.node_types {
        let fpath = dir.join(format!("features.{ty}.mat"));
        if fpath.exists() {
            g.features.insert(ty.clone(), read_matrix(&fpath)?);
        }
    }

    for (ri, rel) in schema.relations.iter().enumerate() {
        let epath = dir.join(edge_file_name(rel));
        let text = fs::read_to_string(&epath)
            .map_err(|e| Error::io(epath.display().to_string(), e))?;
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split('\t');
            let parse = |s: Option<&str>| -> Option<u32> { s?.trim().parse().ok() };
            match (parse(it.next()), parse(it.next())) {
                (Some(s), Some(d)) => edges.push((s, d)),
                _ => {
                    return Err(Error::Line {
                        path: epath.display().to_string(),
                        line: lineno + 1,
                        reason: "expected two tab-separated integers".into(),
                    })
                }
            }
        }
        g.adjacency[ri] = edges;
    }

    if let Some(classes) = schema.classes {
        let lpath = dir.join(format!("labels.{}.tsv", classes.node_type));
        if lpath.exists() {
            let text = fs::read_to_string(&lpath)
                .map_err(|e| Error::io(lpath.display().to_string(), e))?;
            let mut values = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let v: usize = line.trim().parse().map_err(|_| Error::Line {
                    path: lpath.display().to_string(),
                    line: lineno + 1,
                    reason: "expected a class index".into(),
                })?;
                values.push(v);
            }
            g.labels = Some(Labels {
                node_type: classes.node_type,
                classes: classes.names,
                values,
            });
        } else {
            g.labels = Some(Labels {
                node_type: classes.node_type,
                classes: classes.names,
                values: Vec::new(),
            });
            // A class list without a label file is only valid for fully
            // unlabeled packages; finalize() rejects the length mismatch.
        }
    }

    for ty in &schema.node_types {
        let tpath = dir.join(format!("texts.{ty}.txt"));
        if tpath.exists() {
            let text = fs::read_to_string(&tpath)
                .map_err(|e| Error::io(tpath.display().to_string(), e))?;
            g.texts
                .insert(ty.clone(), text.lines().map(|l| l.to_string()).collect());
        }
    }

    g.finalize()
}

/// Write a graph package directory (inverse of [`load_graph`]).
pub fn save_graph(g: &HeteroGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let schema = SchemaFile {
        name: g.name.clone(),
        domain: g.domain.clone(),
        node_types: g.node_types.clone(),
        relations: g.relations.clone(),
        counts: g.counts.clone(),
        classes: g.labels.as_ref().map(|l| ClassesFile {
            node_type: l.node_type.clone(),
            names: l.classes.clone(),
        }),
    };
    let schema_path = dir.join("schema.json");
    let mut f = fs::File::create(&schema_path)
        .map_err(|e| Error::io(schema_path.display().to_string(), e))?;
    let json = serde_json::to_string_pretty(&schema).expect("schema serializes");
    f.write_all(json.as_bytes())
        .map_err(|e| Error::io(schema_path.display().to_string(), e))?;

    for (ty, feats) in &g.features {
        write_matrix(&dir.join(format!("features.{ty}.mat")), feats)?;
    }
    for (ri, rel) in g.relations.iter().enumerate() {
        let mut out = String::new();
        for &(s, d) in &g.adjacency[ri] {
            out.push_str(&format!("{s}\t{d}\n"));
        }
        let epath = dir.join(edge_file_name(rel));
        fs::write(&epath, out).map_err(|e| Error::io(epath.display().to_string(), e))?;
    }
    if let Some(labels) = &g.labels {
        if !labels.values.is_empty() {
            let mut out = String::new();
            for v in &labels.values {
                out.push_str(&format!("{v}\n"));
            }
            let lpath = dir.join(format!("labels.{}.tsv", labels.node_type));
            fs::write(&lpath, out).map_err(|e| Error::io(lpath.display().to_string(), e))?;
        }
    }
    for (ty, lines) in &g.texts {
        let mut out = String::new();
        for l in lines {
            out.push_str(l);
            out.push('\n');
        }
        let tpath = dir.join(format!("texts.{ty}.txt"));
        fs::write(&tpath, out).map_err(|e| Error::io(tpath.display().to_string(), e))?;
    }
    Ok(())
}
