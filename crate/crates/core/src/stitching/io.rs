//! JSON description of a stitch space, with layer tensors stored in an
//! `SNV2` container next to it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSpec;
use crate::container::{self, TensorRecord};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::stitching::layer::{LoraFactors, StitchLayer};
use crate::stitching::route::{CrossingId, SpaceMode, StitchKind};
use crate::stitching::StitchSpace;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDocument {
    pub mode: SpaceMode,
    pub small: AnchorSpec,
    pub large: AnchorSpec,
    /// File name of the tensor container, relative to the JSON file.
    pub container: String,
    pub configs: Vec<ConfigEntry>,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigEntry {
    pub id: usize,
    pub kind: StitchKind,
    pub crossings: Vec<CrossingId>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub crossing: CrossingId,
    pub d_in: usize,
    pub d_out: usize,
    pub rank: usize,
    /// Container record names of `M`, and of `B`/`A` when `rank > 0`.
    pub tensors: BTreeMap<String, String>,
}

impl StitchSpace {
    pub fn to_document(&self, container_name: &str) -> (SpaceDocument, Vec<TensorRecord>) {
        let configs = self
            .configs()
            .iter()
            .enumerate()
            .map(|(id, c)| ConfigEntry {
                id,
                kind: c.kind,
                crossings: c.crossings.clone(),
            })
            .collect();
        let mut records = Vec::new();
        let mut layers = Vec::new();
        for (id, layer) in self.layers() {
            let mut tensors = BTreeMap::new();
            let mut push = |key: &str, m: &Matrix| {
                let name = format!("{id}.{key}");
                records.push(TensorRecord::new(
                    name.clone(),
                    vec![m.rows(), m.cols()],
                    m.data().to_vec(),
                ));
                tensors.insert(key.to_string(), name);
            };
            push("M", &layer.m);
            if let Some(l) = &layer.lora {
                push("B", &l.b);
                push("A", &l.a);
            }
            layers.push(LayerEntry {
                crossing: *id,
                d_in: layer.d_in(),
                d_out: layer.d_out(),
                rank: layer.rank(),
                tensors,
            });
        }
        let doc = SpaceDocument {
            mode: self.mode,
            small: self.small.clone(),
            large: self.large.clone(),
            container: container_name.to_string(),
            configs,
            layers,
        };
        (doc, records)
    }

    pub fn from_document(doc: SpaceDocument, records: Vec<TensorRecord>) -> Result<Self> {
        let mut by_name: BTreeMap<String, TensorRecord> =
            records.into_iter().map(|r| (r.name.clone(), r)).collect();
        let mut take = |name: &str, rows: usize, cols: usize| -> Result<Matrix> {
            let r = by_name
                .remove(name)
                .ok_or_else(|| Error::format(0, format!("container lacks tensor {name}")))?;
            if r.dims != [rows, cols] {
                return Err(Error::format(
                    0,
                    format!("{name}: dims {:?}, expected [{rows}, {cols}]", r.dims),
                ));
            }
            Matrix::from_vec(rows, cols, r.data)
        };
        let mut layers = BTreeMap::new();
        for entry in &doc.layers {
            let name_of = |key: &str| {
                entry.tensors.get(key).cloned().ok_or_else(|| {
                    Error::Config(format!("layer {} has no {key} tensor reference", entry.crossing))
                })
            };
            let m = take(&name_of("M")?, entry.d_in, entry.d_out)?;
            let lora = if entry.rank > 0 {
                Some(LoraFactors {
                    b: take(&name_of("B")?, entry.d_in, entry.rank)?,
                    a: take(&name_of("A")?, entry.rank, entry.d_out)?,
                })
            } else {
                None
            };
            if layers.insert(entry.crossing, StitchLayer { m, lora }).is_some() {
                return Err(Error::Config(format!("duplicate layer {}", entry.crossing)));
            }
        }
        let space = StitchSpace::from_parts(doc.small, doc.large, doc.mode, layers)?;
        if space.layers().len() != doc.layers.len() {
            return Err(Error::Config(format!(
                "document lists {} layers, space needs {}",
                doc.layers.len(),
                space.layers().len()
            )));
        }
        let (expected, _) = space.to_document(&doc.container);
        if expected.configs != doc.configs {
            return Err(Error::Config(
                "config list does not match the enumeration for these anchors".into(),
            ));
        }
        Ok(space)
    }
}

/// Writes `path` (JSON) and a sibling `.snv2` container with the layers.
pub fn save_space(space: &StitchSpace, path: &Path) -> Result<PathBuf> {
    let container_path = path.with_extension("snv2");
    let container_name = container_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("bad space path {}", path.display())))?
        .to_string();
    let (doc, records) = space.to_document(&container_name);
    container::write(&container_path, &records)?;
    let json = serde_json::to_string_pretty(&doc).expect("space document serializes");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    Ok(container_path)
}

pub fn load_space(path: &Path) -> Result<StitchSpace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: SpaceDocument = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let container_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&doc.container);
    let records = container::read(&container_path)?;
    StitchSpace::from_document(doc, records)
}
