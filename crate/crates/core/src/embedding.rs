//! Line-text embeddings: a deterministic feature-hashing embedder and a loader
//! for vectors produced offline by an external model.
//!
//! Hashing scheme (stable across platforms and releases):
//!
//! * tokens are maximal runs of alphanumeric characters (`char::is_alphanumeric`),
//!   case preserved;
//! * `bucket(t) = fnv1a64(seed_le8 || 0x00 || utf8(t)) mod dim`;
//! * `sign(t) = +1` if the low bit of `fnv1a64(seed_le8 || 0x01 || utf8(t))` is 0,
//!   else `-1`;
//! * the signed sums are L2-normalized unless every entry is zero.

use std::collections::HashMap;
use std::fs::File;
use std::hash::Hasher;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use fnv::FnvHasher;
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetIndex;
use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 768;
pub const BINARY_MAGIC: &[u8; 8] = b"BICEMB01";

/// Splits a code line on non-alphanumeric boundaries.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty())
}

fn fnv1a(seed: u64, tag: u8, token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    h.write(&[tag]);
    h.write(token.as_bytes());
    h.finish()
}

/// Bucket index and sign for one token.
pub fn token_slot(token: &str, dim: usize, seed: u64) -> (usize, f64) {
    let bucket = (fnv1a(seed, 0, token) % dim as u64) as usize;
    let sign = if fnv1a(seed, 1, token) & 1 == 0 { 1.0 } else { -1.0 };
    (bucket, sign)
}

/// Signed, L2-normalized hashed embedding of one line.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 1, "embedding dimension must be positive");
    let mut v = vec![0.0; dim];
    for token in tokenize(text) {
        let (bucket, sign) = token_slot(token, dim, seed);
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Unsigned token counts per bucket, unnormalized (bag-of-words variant).
pub fn hash_counts(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 1, "embedding dimension must be positive");
    let mut v = vec![0.0; dim];
    for token in tokenize(text) {
        v[token_slot(token, dim, seed).0] += 1.0;
    }
    v
}

/// One row per node id, all of the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    pos: HashMap<String, usize>,
    data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, data: Array2<f64>) -> Result<Self> {
        if ids.len() != data.nrows() {
            return Err(Error::dim(ids.len(), data.nrows(), "embedding rows"));
        }
        let mut pos = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if pos.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateEmbedding(id.clone()));
            }
        }
        Ok(Self { ids, pos, data })
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, node_id: &str) -> Option<ArrayView1<'_, f64>> {
        self.pos.get(node_id).map(|&i| self.data.row(i))
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Writes the packed little-endian binary format.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        out.write_all(BINARY_MAGIC).map_err(io)?;
        out.write_all(&(self.dim() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        for (i, id) in self.ids.iter().enumerate() {
            out.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
            out.write_all(id.as_bytes()).map_err(io)?;
            for &x in self.data.row(i) {
                out.write_all(&(x as f32).to_le_bytes()).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for (i, id) in self.ids.iter().enumerate() {
            let rec = VectorRecord {
                node_id: id.clone(),
                vector: self.data.row(i).to_vec(),
            };
            writeln!(out, "{}", serde_json::to_string(&rec).expect("serializable"))
                .map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct VectorRecord {
    node_id: String,
    vector: Vec<f64>,
}

/// Hashes every node of the index, rows in file order.
pub fn hash_matrix(index: &DatasetIndex, dim: usize, seed: u64) -> EmbeddingMatrix {
    let nodes = index.nodes();
    let mut data = Array2::zeros((nodes.len(), dim));
    for (i, node) in nodes.iter().enumerate() {
        data.row_mut(i)
            .iter_mut()
            .zip(hash_embed(&node.text, dim, seed))
            .for_each(|(d, x)| *d = x);
    }
    let ids = nodes.iter().map(|n| n.node_id.clone()).collect();
    EmbeddingMatrix::new(ids, data).expect("node ids are unique in a valid index")
}

/// Loads a precomputed embedding file (binary or JSONL, detected by the magic
/// bytes) and checks that it covers every node of `index`. Vectors for ids
/// outside the index are ignored.
pub fn load_precomputed(path: &Path, index: &DatasetIndex) -> Result<EmbeddingMatrix> {
    let mut head = [0u8; 8];
    let is_binary = {
        let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut n = 0;
        while n < 8 {
            match f.read(&mut head[n..]).map_err(|e| Error::io(path, e))? {
                0 => break,
                k => n += k,
            }
        }
        n == 8 && &head == BINARY_MAGIC
    };
    let (dim, records) = if is_binary {
        read_binary(path)?
    } else {
        read_vector_jsonl(path)?
    };

    let mut found: HashMap<String, Vec<f64>> = HashMap::with_capacity(records.len());
    for (id, v) in records {
        if found.contains_key(&id) {
            return Err(Error::DuplicateEmbedding(id));
        }
        found.insert(id, v);
    }

    let nodes = index.nodes();
    let dim = dim.unwrap_or(0);
    let mut data = Array2::zeros((nodes.len(), dim));
    for (i, node) in nodes.iter().enumerate() {
        let v = found
            .get(&node.node_id)
            .ok_or_else(|| Error::MissingEmbedding(node.node_id.clone()))?;
        data.row_mut(i).iter_mut().zip(v).for_each(|(d, x)| *d = *x);
    }
    let ids = nodes.iter().map(|n| n.node_id.clone()).collect();
    EmbeddingMatrix::new(ids, data)
}

type Records = (Option<usize>, Vec<(String, Vec<f64>)>);

fn read_vector_jsonl(path: &Path) -> Result<Records> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dim = None;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VectorRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        match dim {
            None => dim = Some(rec.vector.len()),
            Some(d) if d != rec.vector.len() => {
                return Err(Error::dim(
                    d,
                    rec.vector.len(),
                    format!("vector for `{}` at line {}", rec.node_id, i + 1),
                ))
            }
            _ => {}
        }
        if rec.vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding for `{}`", rec.node_id)));
        }
        out.push((rec.node_id, rec.vector));
    }
    Ok((dim, out))
}

fn read_binary(path: &Path) -> Result<Records> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let truncated = |what: &str| Error::Malformed {
        path: path.to_path_buf(),
        line: 0,
        reason: format!("truncated binary embedding file ({what})"),
    };
    let mut cur = &bytes[8..];
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(truncated(what));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    let dim = u32::from_le_bytes(take(4, "dim")?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(8, "count")?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4, "id length")?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(take(len, "node id")?)
            .map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: 0,
                reason: format!("node id is not UTF-8: {e}"),
            })?
            .to_string();
        let raw = take(dim * 4, "vector")?;
        let v: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding for `{id}`")));
        }
        out.push((id, v));
    }
    if !cur.is_empty() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            line: 0,
            reason: format!("{} trailing bytes after {count} records", cur.len()),
        });
    }
    Ok((Some(dim), out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_zero_vector() {
        assert_eq!(hash_embed("", 16, 0), vec![0.0; 16]);
        assert_eq!(hash_embed("  ;; () ", 16, 0), vec![0.0; 16]);
    }

    #[test]
    fn tokenizer_splits_on_punctuation_and_underscore() {
        let toks: Vec<&str> = tokenize("if (x_1 >= foo.bar()) return;").collect();
        assert_eq!(toks, ["if", "x", "1", "foo", "bar", "return"]);
    }

    // Frozen from an independent FNV-1a evaluation (tests/hash_oracle.py):
    //   return, dim 8, seed 0: index hash 0x1ceac7c10336ee5d -> bucket 5, sign hash low bit 0 -> +1
    //   sentinel, dim 768, seed 7: bucket 314, sign -1
    #[test]
    fn reference_hash_oracle_values() {
        assert_eq!(fnv1a(0, 0, "return"), 0x1ceac7c10336ee5d);
        assert_eq!(fnv1a(0, 1, "return"), 0xa09302243fe862d2);
        assert_eq!(token_slot("return", 8, 0), (5, 1.0));
        assert_eq!(hash_embed("return", 8, 0), vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

        assert_eq!(fnv1a(7, 0, "sentinel"), 0xb9b7887205d5623a);
        assert_eq!(token_slot("sentinel", 768, 7), (314, -1.0));
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let a = hash_embed("int x = foo(bar, baz);", 64, 42);
        let b = hash_embed("int x = foo(bar, baz);", 64, 42);
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn counts_are_unsigned_and_unnormalized() {
        let v = hash_counts("a a a b", 10_000, 0);
        assert_eq!(v.iter().sum::<f64>(), 4.0);
        assert!(v.iter().all(|&x| x >= 0.0));
        assert!(v.contains(&3.0));
    }
}
