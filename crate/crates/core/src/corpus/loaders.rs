//! IDX (MNIST) and CIFAR-10 binary batch readers.

use std::path::Path;

use clm_codec::Raster;

use super::LabeledImage;
use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3072;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::RejectedAt { offset: bytes.len(), message: "truncated IDX header".into() })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::RejectedAt { offset: 0, message: format!("bad IDX magic {magic:#010x}, expected {expected:#010x}") });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Raster>> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    if size == 0 {
        return Err(Error::RejectedAt { offset: 8, message: format!("degenerate image size {rows}x{cols}") });
    }
    let payload = &bytes[16..];
    let complete = payload.len() / size;
    if complete < count {
        return Err(Error::RejectedAt {
            offset: 16 + complete * size,
            message: format!("header declares {count} images, payload holds {complete}"),
        });
    }
    Ok(payload
        .chunks_exact(size)
        .take(count)
        .map(|px| Raster { width: cols, height: rows, channels: 1, samples: px.to_vec() })
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::RejectedAt { offset: bytes.len(), message: format!("header declares {count} labels") });
    }
    if let Some(i) = payload[..count].iter().position(|&l| l > 9) {
        return Err(Error::RejectedAt { offset: 8 + i, message: format!("label {} outside 0..9", payload[i]) });
    }
    Ok(payload[..count].to_vec())
}

/// Reads an IDX image file and its companion label file.
pub fn load_idx(images: &Path, labels: &Path, prefix: &str) -> Result<Vec<LabeledImage>> {
    let img = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lab = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let rasters = parse_idx_images(&img)?;
    let labels = parse_idx_labels(&lab)?;
    if rasters.len() != labels.len() {
        return Err(Error::rejected(format!("{} images but {} labels", rasters.len(), labels.len())));
    }
    Ok(rasters
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (raster, class_label))| LabeledImage { raster, class_label, source_id: format!("{prefix}-{i:06}") })
        .collect())
}

/// One CIFAR-10 batch: planar RGB records converted to interleaved samples.
pub fn parse_cifar(bytes: &[u8], prefix: &str) -> Result<Vec<LabeledImage>> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::RejectedAt {
            offset: bytes.len() - bytes.len() % CIFAR_RECORD,
            message: format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        });
    }
    bytes
        .chunks_exact(CIFAR_RECORD)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] > 9 {
                return Err(Error::RejectedAt { offset: i * CIFAR_RECORD, message: format!("label {}", rec[0]) });
            }
            let planes = &rec[1..];
            let mut samples = Vec::with_capacity(3072);
            for p in 0..1024 {
                samples.extend([planes[p], planes[1024 + p], planes[2048 + p]]);
            }
            Ok(LabeledImage {
                raster: Raster { width: 32, height: 32, channels: 3, samples },
                class_label: rec[0],
                source_id: format!("{prefix}-{i:06}"),
            })
        })
        .collect()
}

pub fn load_cifar(path: &Path, prefix: &str) -> Result<Vec<LabeledImage>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar(&bytes, prefix)
}
