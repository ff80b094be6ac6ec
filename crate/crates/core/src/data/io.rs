//! Dataset directory layout:
//!
//! ```text
//! <dir>/index.json        [{"id": ..., "prompt": ...}, ...]
//! <dir>/A/<id>.png        first image, RGB
//! <dir>/B/<id>.png        second image, RGB
//! <dir>/label/<id>.png    change mask, 0 or 255
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use lgcd_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::BiTemporalPair;
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "index.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub id: String,
    pub prompt: String,
}

fn quantise(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a `[3, H, W]` tensor in [0, 1] as an 8-bit RGB PNG.
pub fn write_rgb(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let d = img.data();
    let buf: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        Rgb([quantise(d[p]), quantise(d[h * w + p]), quantise(d[2 * h * w + p])])
    });
    buf.save(path).map_err(|e| image_error(path, e))
}

/// Writes `h × w` bytes as an 8-bit grayscale PNG.
pub fn write_gray(path: &Path, pixels: &[u8], h: usize, w: usize) -> Result<()> {
    let buf = GrayImage::from_raw(w as u32, h as u32, pixels.to_vec())
        .ok_or_else(|| Error::Usage(format!("{} bytes for a {h}x{w} image", pixels.len())))?;
    buf.save(path).map_err(|e| image_error(path, e))
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::dataset(path, other.to_string()),
    }
}

/// Reads an RGB (or grayscale, replicated) PNG into `[3, H, W]` in [0, 1].
pub fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * h * w + i] = p[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::new([3, h, w], data)?)
}

/// Reads an 8-bit grayscale PNG as `(pixels, h, w)`.
pub fn read_gray(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let img: ImageBuffer<Luma<u8>, Vec<u8>> = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((img.into_raw(), h, w))
}

/// Reads a label PNG; any nonzero pixel is change.
fn read_mask(path: &Path) -> Result<Tensor<f32>> {
    let (px, h, w) = read_gray(path)?;
    let data = px.into_iter().map(|v| f32::from(u8::from(v > 0))).collect();
    Ok(Tensor::new([1, h, w], data)?)
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) && !id.starts_with('.')
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

pub fn write_dataset(pairs: &[BiTemporalPair], dir: &Path) -> Result<()> {
    for sub in ["A", "B", "label"] {
        create_dir(&dir.join(sub))?;
    }
    let mut index = Vec::with_capacity(pairs.len());
    for p in pairs {
        if !valid_id(&p.id) {
            return Err(Error::dataset(dir, format!("sample id {:?} is not a valid file stem", p.id)));
        }
        let file = format!("{}.png", p.id);
        write_rgb(&dir.join("A").join(&file), &p.img_a)?;
        write_rgb(&dir.join("B").join(&file), &p.img_b)?;
        let mask: Vec<u8> = p.mask_u8().into_iter().map(|v| v * 255).collect();
        write_gray(&dir.join("label").join(&file), &mask, p.height(), p.width())?;
        index.push(IndexEntry {
            id: p.id.clone(),
            prompt: p.prompt.clone(),
        });
    }
    let path = dir.join(INDEX_FILE);
    let json = serde_json::to_string_pretty(&index).expect("index serialises");
    fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Loads every sample listed in the index.
pub fn read_dataset(dir: &Path) -> Result<Vec<BiTemporalPair>> {
    let index_path = dir.join(INDEX_FILE);
    if !dir.is_dir() {
        return Err(Error::dataset(dir, "directory not found"));
    }
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let raw: Vec<serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| Error::dataset(&index_path, format!("index is not a JSON array: {e}")))?;
    let mut pairs = Vec::with_capacity(raw.len());
    for (n, value) in raw.into_iter().enumerate() {
        let label = value
            .get("id")
            .and_then(|v| v.as_str())
            .map_or_else(|| format!("entry {n}"), |s| format!("sample {s:?}"));
        let entry: IndexEntry = serde_json::from_value(value)
            .map_err(|e| Error::dataset(&index_path, format!("{label}: {e}")))?;
        if !valid_id(&entry.id) {
            return Err(Error::dataset(&index_path, format!("{label}: invalid id")));
        }
        let file = format!("{}.png", entry.id);
        let path_of = |sub: &str| -> PathBuf { dir.join(sub).join(&file) };
        let img_a = read_rgb(&path_of("A"))?;
        let img_b = read_rgb(&path_of("B"))?;
        let mask = read_mask(&path_of("label"))?;
        if img_a.shape() != img_b.shape() || img_a.shape()[1..] != mask.shape()[1..] {
            return Err(Error::dataset(
                dir,
                format!("{label}: image and label sizes differ"),
            ));
        }
        pairs.push(BiTemporalPair {
            scene_id: entry.id.clone(),
            id: entry.id,
            img_a,
            img_b,
            prompt: entry.prompt,
            mask,
            seed: 0,
        });
    }
    Ok(pairs)
}
