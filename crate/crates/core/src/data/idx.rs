//! Reader and writer for the big-endian IDX files MNIST ships in.

use std::fs;
use std::path::Path;

use crate::error::IdxError;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;

/// One 28x28 grayscale digit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitImage {
    pub pixels: Vec<u8>,
    pub label: u8,
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path, what: &'static str) -> Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| IdxError::Truncated {
            path: path.to_path_buf(),
            what,
            needed: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0, path, "header")?;
    if found != expected {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Parses an image file held in memory. `path` is only used in errors.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Vec<Vec<u8>>, IdxError> {
    check_magic(bytes, IMAGE_MAGIC, path)?;
    let count = read_u32(bytes, 4, path, "header")? as usize;
    let rows = read_u32(bytes, 8, path, "header")?;
    let cols = read_u32(bytes, 12, path, "header")?;
    if rows as usize != IMAGE_SIDE || cols as usize != IMAGE_SIDE {
        return Err(IdxError::BadDimensions {
            path: path.to_path_buf(),
            rows,
            cols,
        });
    }
    let payload = &bytes[16..];
    let needed = count.checked_mul(IMAGE_PIXELS).unwrap_or(usize::MAX);
    if payload.len() < needed {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            what: "image payload",
            needed,
            found: payload.len(),
        });
    }
    Ok(payload[..needed].chunks_exact(IMAGE_PIXELS).map(<[u8]>::to_vec).collect())
}

/// Parses a label file held in memory. Labels must be digits.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, IdxError> {
    check_magic(bytes, LABEL_MAGIC, path)?;
    let count = read_u32(bytes, 4, path, "header")? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            what: "label payload",
            needed: count,
            found: payload.len(),
        });
    }
    let labels = payload[..count].to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(IdxError::BadLabel {
            path: path.to_path_buf(),
            index,
            label,
        });
    }
    Ok(labels)
}

fn read_file(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads paired image and label files.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Vec<DigitImage>, IdxError> {
    let grids = parse_idx_images(&read_file(images)?, images)?;
    let labels = parse_idx_labels(&read_file(labels)?, labels)?;
    if grids.len() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: grids.len(),
            labels: labels.len(),
        });
    }
    Ok(grids
        .into_iter()
        .zip(labels)
        .map(|(pixels, label)| DigitImage { pixels, label })
        .collect())
}

pub fn encode_idx_images(images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * IMAGE_PIXELS);
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    out.extend_from_slice(&(IMAGE_SIDE as u32).to_be_bytes());
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_files() {
        let p = Path::new("mem");
        assert!(parse_idx_images(&encode_idx_images(&[]), p).unwrap().is_empty());
        assert!(parse_idx_labels(&encode_idx_labels(&[]), p).unwrap().is_empty());
    }

    #[test]
    fn one_black_image() {
        let p = Path::new("mem");
        let imgs = parse_idx_images(&encode_idx_images(&[vec![0; IMAGE_PIXELS]]), p).unwrap();
        assert_eq!(imgs, vec![vec![0u8; IMAGE_PIXELS]]);
    }

    #[test]
    fn distinct_errors() {
        let p = Path::new("mem");
        let mut bytes = encode_idx_images(&[vec![1; IMAGE_PIXELS]]);
        assert!(matches!(parse_idx_labels(&bytes, p), Err(IdxError::BadMagic { .. })));
        bytes.pop();
        assert!(matches!(parse_idx_images(&bytes, p), Err(IdxError::Truncated { .. })));
        assert!(matches!(parse_idx_images(&bytes[..6], p), Err(IdxError::Truncated { .. })));
        let mut dims = encode_idx_images(&[]);
        dims[11] = 27;
        assert!(matches!(parse_idx_images(&dims, p), Err(IdxError::BadDimensions { .. })));
        assert!(matches!(parse_idx_labels(&encode_idx_labels(&[3, 12]), p), Err(IdxError::BadLabel { index: 1, .. })));
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        fs::write(&img, encode_idx_images(&[vec![0; IMAGE_PIXELS]])).unwrap();
        fs::write(&lab, encode_idx_labels(&[1, 2])).unwrap();
        assert!(matches!(load_mnist_idx(&img, &lab), Err(IdxError::CountMismatch { images: 1, labels: 2 })));
        fs::write(&lab, encode_idx_labels(&[7])).unwrap();
        let data = load_mnist_idx(&img, &lab).unwrap();
        assert_eq!(data[0].label, 7);
        assert!(matches!(load_mnist_idx(&dir.path().join("nope"), &lab), Err(IdxError::Io { .. })));
    }
}
