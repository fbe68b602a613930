//! Reader for the IDX format used by the MNIST distribution.

use std::path::Path;

use crate::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Grayscale images scaled to [0, 1] with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Indices of every image of `class`, in file order.
    pub fn indices_of(&self, class: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    let b = bytes
        .get(at..at + 4)
        .ok_or_else(|| Error::Data(format!("{what}: truncated header ({} bytes)", bytes.len())))?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an image file: magic, count, rows, cols, then `u8` pixels.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let magic = be_u32(bytes, 0, "image file")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Data(format!("image file: bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "image file")? as usize;
    let rows = be_u32(bytes, 8, "image file")? as usize;
    let cols = be_u32(bytes, 12, "image file")? as usize;
    let per = rows * cols;
    let need = 16 + n * per;
    if bytes.len() < need {
        return Err(Error::Data(format!(
            "image file truncated: header declares {n} images of {rows}x{cols} ({need} bytes), file has {}",
            bytes.len()
        )));
    }
    let images = bytes[16..need].chunks_exact(per.max(1)).take(n).map(|c| c.iter().map(|&p| p as f64 / 255.0).collect()).collect();
    Ok((rows, cols, images))
}

/// Parses a label file: magic, count, then `u8` labels.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "label file")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Data(format!("label file: bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "label file")? as usize;
    let labels = bytes
        .get(8..8 + n)
        .ok_or_else(|| Error::Data(format!("label file truncated: header declares {n} labels, file has {} bytes", bytes.len())))?;
    Ok(labels.to_vec())
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledImages> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| Error::Data(format!("cannot read {}: {e}", p.display())))
    };
    let (rows, cols, images) = parse_idx_images(&read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read(labels_path.as_ref())?)?;
    if images.len() != labels.len() {
        return Err(Error::Data(format!(
            "image file holds {} images but label file holds {} labels",
            images.len(),
            labels.len()
        )));
    }
    Ok(LabeledImages { rows, cols, images, labels })
}

/// Serialises images (values in [0, 1]) and labels to IDX byte streams.
pub fn write_idx(images: &[Vec<f64>], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGE_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        img.extend(im.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = Vec::new();
        for v in [0x803u32, 1, 2, 2] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(&[0, 255, 128, 0]);
        b
    }

    #[test]
    fn hand_built_image() {
        let (r, c, imgs) = parse_idx_images(&fixture()).unwrap();
        assert_eq!((r, c), (2, 2));
        assert_eq!(imgs[0][0], 0.0);
        assert_eq!(imgs[0][1], 1.0);
        assert!((imgs[0][2] - 0.502).abs() < 1e-3);
    }

    #[test]
    fn truncated_and_bad_magic() {
        let f = fixture();
        assert!(parse_idx_images(&f[..18]).unwrap_err().to_string().contains("truncated"));
        assert!(parse_idx_images(&f[..6]).is_err());
        let mut bad = f.clone();
        bad[3] = 0x01;
        assert!(parse_idx_images(&bad).unwrap_err().to_string().contains("magic"));
        assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 5, 1]).is_err());
    }

    #[test]
    fn count_mismatch_names_both_counts() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = write_idx(&[vec![0.0; 4]], 2, 2, &[1]);
        let (_, lab) = write_idx(&[], 2, 2, &[1, 2]);
        std::fs::write(dir.path().join("i"), img).unwrap();
        std::fs::write(dir.path().join("l"), lab).unwrap();
        let msg = load_idx(dir.path().join("i"), dir.path().join("l")).unwrap_err().to_string();
        assert!(msg.contains("1 images") && msg.contains("2 labels"), "{msg}");
    }
}
