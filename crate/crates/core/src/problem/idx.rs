//! IDX-format reader (the MNIST container: big-endian magic, dims, raw bytes).

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

use super::Dataset;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an IDX image/label pair into a dataset, keeping at most `limit`
/// samples. Pixels are scaled to `[0, 1]`.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    limit: usize,
) -> Result<Dataset> {
    let images = read_all(images_path.as_ref())?;
    let labels = read_all(labels_path.as_ref())?;

    let (img_magic, mut cursor) = read_u32(&images, 0)?;
    if img_magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("bad images magic {img_magic:#010x}")));
    }
    let (img_count, c) = read_u32(&images, cursor)?;
    cursor = c;
    let (rows, c) = read_u32(&images, cursor)?;
    cursor = c;
    let (cols, c) = read_u32(&images, cursor)?;
    cursor = c;
    let pixels = rows as usize * cols as usize;
    let needed = cursor + img_count as usize * pixels;
    if images.len() < needed {
        return Err(Error::Format(format!(
            "images file truncated: {} bytes, need {}",
            images.len(),
            needed
        )));
    }

    let (lab_magic, lab_cursor) = read_u32(&labels, 0)?;
    if lab_magic != LABELS_MAGIC {
        return Err(Error::Format(format!("bad labels magic {lab_magic:#010x}")));
    }
    let (lab_count, lab_cursor) = read_u32(&labels, lab_cursor)?;
    if labels.len() < lab_cursor + lab_count as usize {
        return Err(Error::Format(format!(
            "labels file truncated: {} bytes, need {}",
            labels.len(),
            lab_cursor + lab_count as usize
        )));
    }
    if img_count != lab_count {
        return Err(Error::Format(format!(
            "image count {img_count} does not match label count {lab_count}"
        )));
    }

    let n = usize::min(limit, img_count as usize);
    let mut features = Vec::with_capacity(n * pixels);
    for byte in &images[cursor..cursor + n * pixels] {
        features.push(*byte as f64 / 255.0);
    }
    let class_ids: Vec<u32> = labels[lab_cursor..lab_cursor + n]
        .iter()
        .map(|&b| b as u32)
        .collect();
    let num_classes = class_ids.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    Dataset::classification(features, n, pixels, class_ids, num_classes)
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn read_u32(buf: &[u8], at: usize) -> Result<(u32, usize)> {
    if buf.len() < at + 4 {
        return Err(Error::Format("file truncated in header".into()));
    }
    let v = u32::from_be_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]]);
    Ok((v, at + 4))
}
