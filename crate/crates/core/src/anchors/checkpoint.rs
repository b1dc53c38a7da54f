//! Anchor checkpoints in the `SNV2` container.
//!
//! The architecture is recovered from tensor shapes alone: the packed QKV
//! weight is stored rank-3 as `(D, 3·heads, D/heads)` so the head count
//! survives, and the per-token embedding bias `(N, D)` carries the sequence
//! length. Vectors are stored rank-1, everything else rank-2.

use std::collections::HashMap;
use std::path::Path;

use crate::anchors::layers::{LayerNorm, Linear};
use crate::anchors::{AnchorModel, AnchorSpec, TransformerBlock};
use crate::container::{self, TensorRecord};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub fn to_records(model: &AnchorModel) -> Vec<TensorRecord> {
    let heads = model.spec.heads;
    model
        .named_tensors()
        .into_iter()
        .map(|(name, t)| {
            let dims = if name.ends_with("attn.qkv.weight") {
                vec![t.rows(), 3 * heads, t.cols() / (3 * heads)]
            } else if t.rows() == 1 && !name.starts_with("patch_embed") {
                vec![t.cols()]
            } else {
                vec![t.rows(), t.cols()]
            };
            TensorRecord::new(name, dims, t.data().to_vec())
        })
        .collect()
}

pub fn save_checkpoint(model: &AnchorModel, path: &Path) -> Result<()> {
    container::write(path, &to_records(model))
}

pub fn load_checkpoint(path: &Path) -> Result<AnchorModel> {
    from_records(container::read(path)?)
}

/// Rebuilds a model from container records; the record set must be
/// exactly the one [`to_records`] produces for some valid architecture.
pub fn from_records(records: Vec<TensorRecord>) -> Result<AnchorModel> {
    let total = records.len();
    let mut by_name: HashMap<String, TensorRecord> = HashMap::with_capacity(total);
    for r in records {
        if by_name.contains_key(&r.name) {
            return Err(Error::format(0, format!("duplicate tensor {}", r.name)));
        }
        by_name.insert(r.name.clone(), r);
    }
    let bad = |msg: String| Error::format(0, msg);

    let embed_w = get(&by_name, "patch_embed.weight")?;
    let embed_b = get(&by_name, "patch_embed.bias")?;
    let head_w = get(&by_name, "head.weight")?;
    let [patch_dim, width] = dims2(embed_w)?;
    let [seq_len, _] = dims2(embed_b)?;
    let [_, num_classes] = dims2(head_w)?;

    let depth = (0..)
        .take_while(|i| by_name.contains_key(&format!("blocks.{i}.ln1.scale")))
        .count();
    let qkv = get(&by_name, "blocks.0.attn.qkv.weight")?;
    if qkv.dims.len() != 3 || qkv.dims[1] % 3 != 0 {
        return Err(bad(format!("qkv weight dims {:?}, expected (D, 3*heads, D/heads)", qkv.dims)));
    }
    let heads = qkv.dims[1] / 3;
    let fc1 = get(&by_name, "blocks.0.mlp.fc1.weight")?;
    let [_, hidden] = dims2(fc1)?;
    let spec = AnchorSpec {
        depth,
        width,
        heads,
        mlp_ratio: hidden as f64 / width as f64,
        patch_dim,
        num_classes,
        seq_len,
    };
    spec.validate().map_err(|e| bad(e.to_string()))?;
    let expected = 6 + 12 * depth;
    if total != expected {
        return Err(bad(format!("{total} tensors, expected {expected} for depth {depth}")));
    }

    let mat = |name: &str, rows: usize, cols: usize| -> Result<Matrix> {
        let r = get(&by_name, name)?;
        let numel: usize = r.dims.iter().product();
        let ok = match r.dims.len() {
            1 => rows == 1 && r.dims[0] == cols,
            2 => r.dims[0] == rows && r.dims[1] == cols,
            3 => name.ends_with("attn.qkv.weight") && r.dims[0] == rows && numel == rows * cols,
            _ => false,
        };
        if !ok {
            return Err(bad(format!("{name}: dims {:?}, expected {rows}x{cols}", r.dims)));
        }
        Matrix::from_vec(rows, cols, r.data.clone())
    };
    let linear = |prefix: &str, d_in: usize, d_out: usize, bias_rows: usize| -> Result<Linear> {
        Ok(Linear {
            weight: mat(&format!("{prefix}.weight"), d_in, d_out)?,
            bias: mat(&format!("{prefix}.bias"), bias_rows, d_out)?,
        })
    };
    let norm = |prefix: &str, d: usize| -> Result<LayerNorm> {
        Ok(LayerNorm {
            scale: mat(&format!("{prefix}.scale"), 1, d)?,
            shift: mat(&format!("{prefix}.shift"), 1, d)?,
        })
    };

    let d = width;
    let blocks = (0..depth)
        .map(|i| {
            let p = format!("blocks.{i}");
            Ok(TransformerBlock {
                ln1: norm(&format!("{p}.ln1"), d)?,
                qkv: linear(&format!("{p}.attn.qkv"), d, 3 * d, 1)?,
                proj: linear(&format!("{p}.attn.proj"), d, d, 1)?,
                ln2: norm(&format!("{p}.ln2"), d)?,
                fc1: linear(&format!("{p}.mlp.fc1"), d, hidden, 1)?,
                fc2: linear(&format!("{p}.mlp.fc2"), hidden, d, 1)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AnchorModel {
        patch_embed: linear("patch_embed", patch_dim, d, seq_len)?,
        blocks,
        final_norm: norm("norm", d)?,
        head: linear("head", d, num_classes, 1)?,
        spec,
    })
}

fn get<'a>(map: &'a HashMap<String, TensorRecord>, name: &str) -> Result<&'a TensorRecord> {
    map.get(name)
        .ok_or_else(|| Error::format(0, format!("missing tensor {name}")))
}

fn dims2(r: &TensorRecord) -> Result<[usize; 2]> {
    match r.dims.as_slice() {
        [a, b] => Ok([*a, *b]),
        other => Err(Error::format(0, format!("{}: expected rank 2, got {other:?}", r.name))),
    }
}
