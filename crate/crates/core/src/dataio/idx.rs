//! IDX image/label files (big-endian), optionally gzip-compressed.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::dataio::{Dataset, Split};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Raw `count × rows × cols` u8 images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Reads a file, inflating it first if it starts with the gzip magic.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(offset as u64, format!("truncated before {what}")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != expected {
        return Err(Error::format(
            0,
            format!("magic {magic:#010x}, expected {expected:#010x}"),
        ));
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    let end = start
        .checked_add(len)
        .ok_or_else(|| Error::format(start as u64, "payload size overflows"))?;
    if bytes.len() < end {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: {} of {len} bytes", bytes.len() - start),
        ));
    }
    if bytes.len() > end {
        return Err(Error::format(end as u64, "trailing bytes after payload"));
    }
    Ok(&bytes[start..end])
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|n| n.checked_mul(cols))
        .ok_or_else(|| Error::format(4, "image dimensions overflow"))?;
    let pixels = payload(bytes, 16, len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4, "label count")? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes `bytes`, gzip-compressed when the path ends in `.gz`.
fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let data = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes.to_vec()
    };
    fs::write(path, data).map_err(|e| Error::io(path, e))
}

/// Splits a `rows × cols` image into `patch × patch` tiles, zero-padding the
/// bottom and right edges up to a multiple of `patch`. Tiles are ordered
/// row-major, each flattened row-major.
pub fn patchify(image: &[f64], rows: usize, cols: usize, patch: usize) -> Vec<f64> {
    let (pr, pc) = (rows.div_ceil(patch), cols.div_ceil(patch));
    let mut out = Vec::with_capacity(pr * pc * patch * patch);
    for ti in 0..pr {
        for tj in 0..pc {
            for i in 0..patch {
                for j in 0..patch {
                    let (r, c) = (ti * patch + i, tj * patch + j);
                    out.push(if r < rows && c < cols { image[r * cols + c] } else { 0.0 });
                }
            }
        }
    }
    out
}

/// Inverse of [`patchify`]; padding is dropped.
pub fn unpatchify(tokens: &[f64], rows: usize, cols: usize, patch: usize) -> Vec<f64> {
    let pc = cols.div_ceil(patch);
    let mut image = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let tile = (r / patch) * pc + c / patch;
            image[r * cols + c] = tokens[tile * patch * patch + (r % patch) * patch + c % patch];
        }
    }
    image
}

/// Token count and token width of a `rows × cols` image under `patch`.
pub fn patch_grid(rows: usize, cols: usize, patch: usize) -> (usize, usize) {
    (rows.div_ceil(patch) * cols.div_ceil(patch), patch * patch)
}

/// Builds a dataset from u8 images scaled to `[0, 1]` and patchified.
pub fn dataset_from_idx(
    images: &IdxImages,
    labels: &[u8],
    patch: usize,
    num_classes: usize,
    split: Split,
) -> Result<Dataset> {
    if patch == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    if images.count != labels.len() {
        return Err(Error::format(
            4,
            format!("{} images but {} labels", images.count, labels.len()),
        ));
    }
    let (seq_len, patch_dim) = patch_grid(images.rows, images.cols, patch);
    let px = images.rows * images.cols;
    let mut tokens = Vec::with_capacity(images.count * seq_len * patch_dim);
    let mut scaled = vec![0.0; px];
    for img in images.pixels.chunks_exact(px.max(1)).take(images.count) {
        for (s, &p) in scaled.iter_mut().zip(img) {
            *s = f64::from(p) / 255.0;
        }
        tokens.extend(patchify(&scaled, images.rows, images.cols, patch));
    }
    let labels = labels.iter().map(|&l| usize::from(l)).collect();
    Dataset::new(tokens, labels, seq_len, patch_dim, num_classes, split)
}

/// Reads an images/labels file pair (plain or gzip) into patch tokens.
/// `num_classes` defaults to one past the largest label.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    patch: usize,
    num_classes: Option<usize>,
    split: Split,
) -> Result<Dataset> {
    let images = parse_images(&read_maybe_gzip(images_path)?).map_err(|e| with_path(e, images_path))?;
    let labels = parse_labels(&read_maybe_gzip(labels_path)?).map_err(|e| with_path(e, labels_path))?;
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |&m| usize::from(m) + 1));
    dataset_from_idx(&images, &labels, patch, classes, split)
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { offset, reason } => Error::Format {
            offset,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    }
}

/// Writes a patchified dataset back to IDX files, undoing the `[0, 1]`
/// scaling. Pixels that did not come from u8 values are rounded.
pub fn write_idx(
    dataset: &Dataset,
    images_path: &Path,
    labels_path: &Path,
    rows: usize,
    cols: usize,
    patch: usize,
) -> Result<()> {
    if patch_grid(rows, cols, patch) != (dataset.seq_len(), dataset.patch_dim()) {
        return Err(Error::shape(
            "write_idx",
            format!(
                "{rows}×{cols} images in {patch}×{patch} patches do not give {}×{} tokens",
                dataset.seq_len(),
                dataset.patch_dim()
            ),
        ));
    }
    let mut pixels = Vec::with_capacity(dataset.len() * rows * cols);
    for i in 0..dataset.len() {
        let img = unpatchify(dataset.tokens(i), rows, cols, patch);
        pixels.extend(img.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    let labels: Vec<u8> = dataset
        .labels()
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::Index(format!("label {l} exceeds u8"))))
        .collect::<Result<_>>()?;
    let images = IdxImages {
        count: dataset.len(),
        rows,
        cols,
        pixels,
    };
    write_bytes(images_path, &encode_images(&images))?;
    write_bytes(labels_path, &encode_labels(&labels))
}
