//! On-disk dataset layout: a `manifest.json` naming one PNG per light,
//! 16-bit PNG encodings for images and normal maps, 8-bit single-channel
//! masks thresholded at 128.

use super::{Light, LightKind, LightRig, PhotometricStack};
use crate::tensor::{Shape, Tensor};
use crate::{PxfrError, Result};
use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub kind: LightKind,
    pub direction: [f32; 3],
    pub intensity: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub images: Vec<ManifestEntry>,
}

fn io_err(path: &Path, e: impl Into<std::io::Error>) -> PxfrError {
    PxfrError::io(path.display().to_string(), e.into())
}

fn image_err(path: &Path, e: image::ImageError) -> PxfrError {
    PxfrError::Format(format!("{}: {e}", path.display()))
}

/// Writes a [0,1] RGB tensor (1,3,h,w) as a 16-bit PNG.
pub fn save_rgb16(path: &Path, image: &Tensor) -> Result<()> {
    let sh = image.shape();
    if sh.n != 1 || sh.c != 3 {
        return Err(PxfrError::ShapeMismatch(format!(
            "save_rgb16: expected (1,3,h,w), got {sh}"
        )));
    }
    let plane = sh.h * sh.w;
    let data = image.data();
    let buf = ImageBuffer::from_fn(sh.w as u32, sh.h as u32, |x, y| {
        let i = y as usize * sh.w + x as usize;
        Rgb([
            encode16(data[i]),
            encode16(data[plane + i]),
            encode16(data[2 * plane + i]),
        ])
    });
    DynamicImage::ImageRgb16(buf)
        .save(path)
        .map_err(|e| image_err(path, e))
}

fn encode16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Loads an 8- or 16-bit PNG as a [0,1] RGB tensor (1,3,h,w).
pub fn load_rgb(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rgb = img.into_rgb16();
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for (x, y, px) in rgb.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 65535.0;
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data)
}

/// Writes unit normals (1,3,h,w) as 16-bit PNG with `round((n*0.5+0.5)*65535)`.
pub fn save_normal_map(path: &Path, normals: &Tensor) -> Result<()> {
    let sh = normals.shape();
    if sh.n != 1 || sh.c != 3 {
        return Err(PxfrError::ShapeMismatch(format!(
            "save_normal_map: expected (1,3,h,w), got {sh}"
        )));
    }
    let plane = sh.h * sh.w;
    let data = normals.data();
    let buf = ImageBuffer::from_fn(sh.w as u32, sh.h as u32, |x, y| {
        let i = y as usize * sh.w + x as usize;
        Rgb([
            encode_normal(data[i]),
            encode_normal(data[plane + i]),
            encode_normal(data[2 * plane + i]),
        ])
    });
    DynamicImage::ImageRgb16(buf)
        .save(path)
        .map_err(|e| image_err(path, e))
}

fn encode_normal(v: f32) -> u16 {
    ((v * 0.5 + 0.5).clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Loads a normal map PNG back into [-1,1] components, renormalized to
/// unit length (quantization shortens vectors slightly).
pub fn load_normal_map(path: &Path) -> Result<Tensor> {
    let raw = load_rgb(path)?;
    let sh = raw.shape();
    let plane = sh.h * sh.w;
    let data = raw.data();
    let mut out = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        let mut n = [0.0f32; 3];
        for c in 0..3 {
            n[c] = data[c * plane + i] * 2.0 - 1.0;
        }
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt().max(1e-6);
        for c in 0..3 {
            out[c * plane + i] = n[c] / norm;
        }
    }
    drop(data);
    Tensor::from_vec(sh, out)
}

/// Writes a {0,1} mask (1,1,h,w) as an 8-bit single-channel PNG.
pub fn save_mask(path: &Path, mask: &Tensor) -> Result<()> {
    let sh = mask.shape();
    if sh.n != 1 || sh.c != 1 {
        return Err(PxfrError::ShapeMismatch(format!(
            "save_mask: expected (1,1,h,w), got {sh}"
        )));
    }
    let data = mask.data();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(sh.w as u32, sh.h as u32, |x, y| {
        let v = data[y as usize * sh.w + x as usize];
        Luma([if v >= 0.5 { 255u8 } else { 0 }])
    });
    buf.save(path).map_err(|e| image_err(path, e))
}

/// Loads a mask PNG, thresholding at 128.
pub fn load_mask(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = img.into_luma8();
    let data = gray
        .pixels()
        .map(|p| if p[0] >= 128 { 1.0f32 } else { 0.0 })
        .collect();
    Tensor::from_vec(Shape::new(1, 1, h, w), data)
}

/// Writes the stack as `image_NNN.png` files plus `manifest.json`.
pub fn save_dataset(dir: &Path, stack: &PhotometricStack) -> Result<()> {
    stack.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let sh = stack.shape();
    let mut entries = Vec::with_capacity(stack.images.len());
    for (i, (img, light)) in stack.images.iter().zip(&stack.rig.lights).enumerate() {
        let file = format!("image_{i:03}.png");
        save_rgb16(&dir.join(&file), img)?;
        entries.push(ManifestEntry {
            file,
            kind: light.kind,
            direction: light.direction,
            intensity: light.intensity,
        });
    }
    let manifest = Dataset {
        width: sh.w,
        height: sh.h,
        images: entries,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| PxfrError::Format(e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| io_err(&path, e))
}

/// Reads `manifest.json` and every referenced image.
pub fn load_dataset(dir: &Path) -> Result<PhotometricStack> {
    let path = dir.join("manifest.json");
    let json = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: Dataset =
        serde_json::from_str(&json).map_err(|e| PxfrError::Format(format!("{}: {e}", path.display())))?;
    let mut images = Vec::with_capacity(manifest.images.len());
    let mut lights = Vec::with_capacity(manifest.images.len());
    for entry in &manifest.images {
        let img = load_rgb(&dir.join(&entry.file))?;
        let sh = img.shape();
        if sh.h != manifest.height || sh.w != manifest.width {
            return Err(PxfrError::Format(format!(
                "{}: image is {}x{}, manifest says {}x{}",
                entry.file, sh.w, sh.h, manifest.width, manifest.height
            )));
        }
        images.push(img);
        lights.push(Light {
            kind: entry.kind,
            direction: entry.direction,
            intensity: entry.intensity,
        });
    }
    let stack = PhotometricStack {
        images,
        rig: LightRig { lights },
    };
    stack.validate()?;
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photometry::{generate_procedural_material, sample_light_rig, MaterialKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dataset_round_trip_preserves_rig_and_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_procedural_material(MaterialKind::Woven, 32, 32, 1).unwrap();
        let rig = sample_light_rig(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stack = PhotometricStack::render(&m, &rig, 0.0, &mut rng);
        save_dataset(dir.path(), &stack).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.images.len(), 4);
        for (a, b) in stack.images.iter().zip(&loaded.images) {
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                // 16-bit quantization
                assert!((x - y).abs() <= 0.5 / 65535.0 + 1e-7);
            }
        }
        for (la, lb) in stack.rig.lights.iter().zip(&loaded.rig.lights) {
            assert_eq!(la.direction, lb.direction);
        }
    }

    #[test]
    fn normal_map_round_trip_stays_unit_and_close() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_procedural_material(MaterialKind::Bumps, 32, 32, 2).unwrap();
        let path = dir.path().join("normals.png");
        save_normal_map(&path, &m.normals).unwrap();
        let loaded = load_normal_map(&path).unwrap();
        let err = crate::photometry::mean_angular_error_deg(&m.normals, &loaded, None);
        assert!(err < 0.01, "round-trip angular error {err} deg");
    }

    #[test]
    fn mask_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mask = crate::photometry::generate_procedural_mask(MaterialKind::Stripes, 32, 32, 3)
            .unwrap();
        let path = dir.path().join("mask.png");
        save_mask(&path, &mask).unwrap();
        let loaded = load_mask(&path).unwrap();
        assert_eq!(*mask.data(), *loaded.data());
    }

    #[test]
    fn missing_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
