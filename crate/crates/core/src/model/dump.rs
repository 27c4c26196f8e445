//! Grayscale PGM output of generated images.

use crate::error::{io_err, Error, Result};
use std::path::{Path, PathBuf};

/// Maps `[0, 1]` to `0..=255`, rounding to nearest.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary (P5) PGM bytes of a row-major `width x height` image in `[0, 1]`.
pub fn pgm_bytes(pixels: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::Data(format!("{} pixels for a {width}x{height} image", pixels.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn write_pgm(path: &Path, pixels: &[f64], width: usize, height: usize) -> Result<()> {
    std::fs::write(path, pgm_bytes(pixels, width, height)?).map_err(io_err(path))
}

/// A sample to render: id, class label, name of the class's source images.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpItem {
    pub id: usize,
    pub class: usize,
    pub source: String,
}

/// Writes `sample_<id>.pgm` for each image plus `index.tsv`.
pub fn dump_images(images: &[f64], side: usize, items: &[DumpItem], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let pixels = side * side;
    if images.len() != items.len() * pixels {
        return Err(Error::Data(format!("{} pixels for {} samples", images.len(), items.len())));
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut index = String::from("id\tclass\tsource\tfile\n");
    let mut files = Vec::with_capacity(items.len());
    for (k, item) in items.iter().enumerate() {
        let name = format!("sample_{}.pgm", item.id);
        let path = out_dir.join(&name);
        write_pgm(&path, &images[k * pixels..(k + 1) * pixels], side, side)?;
        index.push_str(&format!("{}\t{}\t{}\t{name}\n", item.id, item.class, item.source));
        files.push(path);
    }
    let idx = out_dir.join("index.tsv");
    std::fs::write(&idx, index).map_err(io_err(&idx))?;
    Ok(files)
}

/// Signed map rendered with a symmetric scale: `0` maps to mid-gray.
/// Returns the bytes and the scale used.
pub fn signed_heatmap(values: &[f64], side: usize) -> Result<(Vec<u8>, f64)> {
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let norm: Vec<f64> = if scale > 0.0 {
        values.iter().map(|v| 0.5 + 0.5 * v / scale).collect()
    } else {
        vec![0.5; values.len()]
    };
    Ok((pgm_bytes(&norm, side, side)?, scale))
}
