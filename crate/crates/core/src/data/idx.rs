use std::path::Path;

use super::{Dataset, Example};
use crate::error::{Error, IdxError, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(IdxError::Truncated {
            needed: at + 4,
            available: bytes.len(),
        })
}

/// Reads header dims after checking the magic; returns `(dims, payload offset)`.
fn header(bytes: &[u8], magic: u32, rank: usize) -> Result<(Vec<usize>, usize), IdxError> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(IdxError::BadMagic { found, expected: magic });
    }
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let offset = 4 + 4 * rank;
    let needed = offset + dims.iter().product::<usize>();
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok((dims, offset))
}

/// Decodes an unsigned-byte rank-3 image file and rank-1 label file.
///
/// Pixels are rescaled to `[0, 1]`; features have shape `[1, rows, cols]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset, IdxError> {
    let (idims, ioff) = header(images, IMAGES_MAGIC, 3)?;
    let (ldims, loff) = header(labels, LABELS_MAGIC, 1)?;
    if idims[0] != ldims[0] {
        return Err(IdxError::CountMismatch {
            images: idims[0],
            labels: ldims[0],
        });
    }
    let (n, rows, cols) = (idims[0], idims[1], idims[2]);
    let plane = rows * cols;
    let label_bytes = &labels[loff..loff + n];
    let num_classes = label_bytes.iter().copied().max().map_or(2, |m| (m as usize + 1).max(2));
    let examples = (0..n)
        .map(|i| {
            let px = &images[ioff + i * plane..ioff + (i + 1) * plane];
            Example {
                features: Tensor::from_parts(vec![1, rows, cols], px.iter().map(|&b| b as f32 / 255.0).collect()),
                label: Some(label_bytes[i] as usize),
            }
        })
        .collect();
    Ok(Dataset {
        feature_shape: vec![1, rows, cols],
        num_classes,
        examples,
    })
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    Ok(parse_idx(&images, &labels)?)
}
