//! Reader for the IDX files distributed with MNIST and FashionMNIST.

use crate::error::{io_err, Error, Result};
use std::path::Path;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

/// Images kept as raw bytes; [`LabeledImages::image`] scales to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImages {
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn raw(&self, i: usize) -> &[u8] {
        &self.pixels[i * PIXELS..(i + 1) * PIXELS]
    }

    pub fn image(&self, i: usize) -> Vec<f32> {
        self.raw(i).iter().map(|&b| b as f32 / 255.0).collect()
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Parses an image file; every image must be 28x28.
pub fn parse_images(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!("image file header truncated ({} bytes)", bytes.len())));
    }
    let magic = be_u32(bytes, 0);
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("image file magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4) as usize;
    let (rows, cols) = (be_u32(bytes, 8) as usize, be_u32(bytes, 12) as usize);
    if rows != SIDE || cols != SIDE {
        return Err(Error::Format(format!("images are {rows}x{cols}, expected {SIDE}x{SIDE}")));
    }
    let expected = count.checked_mul(PIXELS).and_then(|p| p.checked_add(16));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!(
            "image payload has {} bytes but header declares {count} images",
            bytes.len() - 16
        )));
    }
    Ok(bytes[16..].to_vec())
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(Error::Format(format!("label file header truncated ({} bytes)", bytes.len())));
    }
    let magic = be_u32(bytes, 0);
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("label file magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4) as usize;
    if count.checked_add(8) != Some(bytes.len()) {
        return Err(Error::Format(format!(
            "label payload has {} bytes but header declares {count} labels",
            bytes.len() - 8
        )));
    }
    Ok(bytes[8..].to_vec())
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledImages> {
    let pixels = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if pixels.len() / PIXELS != labels.len() {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            pixels.len() / PIXELS,
            labels.len()
        )));
    }
    Ok(LabeledImages { pixels, labels })
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledImages> {
    let images = std::fs::read(images_path).map_err(io_err(images_path))?;
    let labels = std::fs::read(labels_path).map_err(io_err(labels_path))?;
    parse_idx(&images, &labels)
}

/// Serialises images and labels back into the two IDX byte streams.
pub fn encode_idx(set: &LabeledImages) -> (Vec<u8>, Vec<u8>) {
    let n = set.len() as u32;
    let mut img = Vec::with_capacity(16 + set.pixels.len());
    for v in [IMAGE_MAGIC, n, SIDE as u32, SIDE as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(&set.pixels);
    let mut lab = Vec::with_capacity(8 + set.labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend_from_slice(&set.labels);
    (img, lab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledImages {
        let mut pixels = vec![0u8; 2 * PIXELS];
        pixels[0] = 255;
        pixels[PIXELS + 5] = 51;
        LabeledImages { pixels, labels: vec![3, 7] }
    }

    #[test]
    fn round_trip_and_scaling() {
        let (img, lab) = encode_idx(&tiny());
        let set = parse_idx(&img, &lab).unwrap();
        assert_eq!(set, tiny());
        assert_eq!(set.image(0)[0], 1.0);
        assert_eq!(set.image(1)[5], 0.2);
    }

    #[test]
    fn swapped_files_are_rejected() {
        let (img, lab) = encode_idx(&tiny());
        assert!(matches!(parse_idx(&lab, &img), Err(Error::Format(_))));
        assert!(parse_labels(&img).is_err());
    }

    #[test]
    fn count_mismatch_and_truncation() {
        let (img, lab) = encode_idx(&tiny());
        assert!(parse_idx(&img[..img.len() - 1], &lab).is_err());
        let mut short = lab.clone();
        short.pop();
        short[7] = 1;
        assert!(matches!(parse_idx(&img, &short), Err(Error::Format(m)) if m.contains("2 images but 1")));
    }
}
