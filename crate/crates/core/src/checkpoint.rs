//! Model checkpoint: one JSON header line, then every parameter block as
//! packed little-endian `f32`, in [`RankModel::block_names`] order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcnrank::RankModel;

pub const FORMAT: &str = "bicrank-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub layer_norm_eps: f64,
    pub seed: u64,
    pub config_hash: String,
    pub blocks: Vec<BlockInfo>,
}

pub fn to_bytes(model: &RankModel, seed: u64, config_hash: &str) -> Vec<u8> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        input_dim: model.input_dim(),
        hidden_dim: model.hidden_dim(),
        layers: model.n_layers(),
        layer_norm_eps: model.ln_eps,
        seed,
        config_hash: config_hash.into(),
        blocks: model
            .block_names()
            .into_iter()
            .zip(model.block_shapes())
            .map(|(name, shape)| BlockInfo { name, shape })
            .collect(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for block in model.blocks() {
        for &x in block {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(RankModel, CheckpointHeader)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format `{}`", header.format)));
    }
    if header.layers == 0 || header.blocks.len() != header.layers + 4 {
        return Err(Error::Checkpoint("block list does not match layer count".into()));
    }

    let mut rest = &bytes[nl + 1..];
    let mut take = |shape: &[usize]| -> Result<Vec<f64>> {
        let count: usize = shape.iter().product();
        if rest.len() < count * 4 {
            return Err(Error::Checkpoint("truncated parameter data".into()));
        }
        let (head, tail) = rest.split_at(count * 4);
        rest = tail;
        Ok(head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    };

    let mut layers = Vec::with_capacity(header.layers);
    for b in &header.blocks[..header.layers] {
        let [r, c] = b.shape[..] else {
            return Err(Error::Checkpoint(format!("block `{}` is not a matrix", b.name)));
        };
        let data = take(&b.shape)?;
        layers.push(Array2::from_shape_vec((r, c), data).expect("shape checked"));
    }
    let mut vectors = Vec::with_capacity(4);
    for b in &header.blocks[header.layers..] {
        vectors.push(Array1::from(take(&b.shape)?));
    }
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    let head_bias = vectors.pop().unwrap();
    let head_weight = vectors.pop().unwrap();
    let ln_bias = vectors.pop().unwrap();
    let ln_gain = vectors.pop().unwrap();

    let model = RankModel {
        layers,
        ln_gain,
        ln_bias,
        head_weight,
        head_bias,
        ln_eps: header.layer_norm_eps,
    };
    let shapes_ok = model.input_dim() == header.input_dim
        && model.hidden_dim() == header.hidden_dim
        && model.block_shapes() == header.blocks.iter().map(|b| b.shape.clone()).collect::<Vec<_>>()
        && model.head_bias.len() == 1;
    if !shapes_ok {
        return Err(Error::Checkpoint("parameter shapes are inconsistent".into()));
    }
    Ok((model, header))
}

pub fn save(path: &Path, model: &RankModel, seed: u64, config_hash: &str) -> Result<()> {
    fs::write(path, to_bytes(model, seed, config_hash)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(RankModel, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcnrank::ModelConfig;

    #[test]
    fn round_trip_is_f32_exact() {
        let cfg = ModelConfig { layers: 3, hidden_dim: 5, ..Default::default() };
        let model = RankModel::new(7, &cfg, 11).unwrap();
        let bytes = to_bytes(&model, 11, "abc");
        let (back, header) = from_bytes(&bytes).unwrap();
        assert_eq!(header.seed, 11);
        assert_eq!(header.blocks.len(), 7);
        for (a, b) in model.blocks().iter().zip(back.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!((*x as f32) as f64, *y);
            }
        }
        // Re-saving the loaded model is byte-identical.
        assert_eq!(to_bytes(&back, 11, "abc"), bytes);
    }

    #[test]
    fn rejects_truncation() {
        let model = RankModel::new(3, &ModelConfig { layers: 1, hidden_dim: 2, ..Default::default() }, 0).unwrap();
        let bytes = to_bytes(&model, 0, "");
        assert!(from_bytes(&bytes[..bytes.len() - 2]).is_err());
        assert!(from_bytes(b"{}").is_err());
    }
}
